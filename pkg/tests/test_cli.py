import csv
import json
import subprocess
import sys

import pytest

from cheapseg.cli import EXIT_DATA, EXIT_INTERNAL, EXIT_OK, EXIT_USAGE, main
from cheapseg.config import load_config

from conftest import small_config

SMALL = {k: v for k, v in small_config().to_json().items() if k in ("stf", "ilp", "dstf")}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.json"
    cfg.write_text(json.dumps(SMALL))
    data = root / "data"
    assert main(["gen-synth", "--preset", "easy", "--seed", "2", "--n-train", "6", "--n-val", "2",
                 "--n-test", "2", "--out", str(data)]) == EXIT_OK
    bundle = root / "bundle"
    assert main(["--config", str(cfg), "train", "--manifest", str(data / "manifest.json"), "--out", str(bundle),
                 "--seed", "1"]) == EXIT_OK
    return {"root": root, "cfg": cfg, "manifest": data / "manifest.json", "bundle": bundle}


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_gen_synth_writes_a_manifest(workspace):
    doc = json.loads(workspace["manifest"].read_text())
    assert (workspace["manifest"].parent / "synth_spec.json").is_file()
    assert len(doc["entries"]) == 10


def test_train_writes_a_complete_bundle(workspace):
    b = workspace["bundle"]
    for name in ("meta.json", "report.json", "temp_stf.bin", "ilp_context.bin", "ilp_multiclass.bin",
                 "location.bin", "dstf/recognizer.bin", "dstf/assignment.json", "omega.png", "psi.png"):
        assert (b / name).is_file(), name
    meta = json.loads((b / "meta.json").read_text())
    assert meta["config"]["seed"] == 1 and meta["config"]["stf"]["patch_size"] == 5
    assert meta["ilp_variant"] == "context" and meta["baseline_ilp"] is False


def test_train_is_byte_reproducible_and_records_the_variant(workspace, capsys):
    again = workspace["root"] / "again"
    args = ["--config", str(workspace["cfg"]), "train", "--manifest", str(workspace["manifest"]), "--seed", "1"]
    assert main(args + ["--out", str(again)]) == EXIT_OK
    for p in workspace["bundle"].rglob("*.bin"):
        assert (again / p.relative_to(workspace["bundle"])).read_bytes() == p.read_bytes()
    assert "K=" in capsys.readouterr().out
    base = workspace["root"] / "baseline"
    assert main(args + ["--out", str(base), "--ilp", "multiclass"]) == EXIT_OK
    meta = json.loads((base / "meta.json").read_text())
    assert meta["baseline_ilp"] is True and meta["ilp_variant"] == "multiclass"


def test_predict_then_evaluate(workspace):
    pred = workspace["root"] / "pred"
    assert main(["predict", "--bundle", str(workspace["bundle"]), "--manifest", str(workspace["manifest"]),
                 "--out", str(pred), "--color", "--lam", "0.5"]) == EXIT_OK
    assert len(list(pred.glob("*.pgm"))) == 2 and len(list(pred.glob("*_color.ppm"))) == 2
    out = workspace["root"] / "report" / "eval.csv"
    assert main(["evaluate", "--pred", str(pred), "--manifest", str(workspace["manifest"]),
                 "--out", str(out)]) == EXIT_OK
    assert _rows(out)[0] == ["class", "recall", "iou"]
    assert out.with_suffix(".json").is_file() and out.with_suffix(".png").is_file()


def test_predict_accepts_image_paths(workspace):
    img = next((workspace["manifest"].parent).rglob("*.ppm"))
    out = workspace["root"] / "single"
    assert main(["predict", "--bundle", str(workspace["bundle"]), "--out", str(out), str(img)]) == EXIT_OK
    assert (out / (img.stem + ".pgm")).is_file()


def test_sweep_omega_report(workspace):
    out = workspace["root"] / "sweep.csv"
    assert main(["sweep-omega", "--bundle", str(workspace["bundle"]), "--manifest", str(workspace["manifest"]),
                 "--omegas", "0,0.5,1", "--out", str(out)]) == EXIT_OK
    rows = _rows(out)
    assert rows[0] == ["omega", "average_recall", "global_recall", "appearance_pixels"]
    assert [r[0] for r in rows[1:]] == ["0", "0.5", "1"] and rows[-1][3] == "0"
    assert out.with_suffix(".png").is_file()


def test_ablate_report(workspace):
    out = workspace["root"] / "ablate.csv"
    assert main(["ablate", "--bundle", str(workspace["bundle"]), "--manifest", str(workspace["manifest"]),
                 "--out", str(out), "--ideal"]) == EXIT_OK
    rows = _rows(out)
    assert len(rows) == 1 + 8 and rows[1][:2] == ["stf", "none"]
    assert out.with_suffix(".png").is_file()


def test_print_config(workspace, capsys):
    assert main(["--print-config", "--config", str(workspace["cfg"])]) == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed == load_config(workspace["cfg"]).to_json()
    assert main(["--print-config"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["crf"]["omega"] == 0.3


def test_usage_errors_exit_1(workspace, tmp_path):
    assert main([]) == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"crf": {"nope": 1}}))
    assert main(["--config", str(bad), "train", "--manifest", str(workspace["manifest"]),
                 "--out", str(tmp_path / "b")]) == EXIT_USAGE
    assert main(["sweep-omega", "--bundle", str(workspace["bundle"]), "--manifest", str(workspace["manifest"]),
                 "--omegas", "", "--out", str(tmp_path / "s.csv")]) == EXIT_USAGE
    assert main(["predict", "--bundle", str(workspace["bundle"]), "--out", str(tmp_path / "p"),
                 "--omega", "2"]) == EXIT_USAGE
    assert main(["predict", "--bundle", str(workspace["bundle"]), "--out", str(tmp_path / "p")]) == EXIT_USAGE


def test_data_errors_exit_2(workspace, tmp_path):
    assert main(["train", "--manifest", str(tmp_path / "none.json"), "--out", str(tmp_path / "b")]) == EXIT_DATA
    assert main(["predict", "--bundle", str(tmp_path / "nobundle"), "--out", str(tmp_path / "p"),
                 "x.ppm"]) == EXIT_DATA
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["evaluate", "--pred", str(empty), "--manifest", str(workspace["manifest"]),
                 "--out", str(tmp_path / "e.csv")]) == EXIT_DATA
    broken = tmp_path / "broken.ppm"
    broken.write_bytes(b"P6\n4 4\n255\n\x00")
    assert main(["predict", "--bundle", str(workspace["bundle"]), "--out", str(tmp_path / "p"),
                 str(broken)]) == EXIT_DATA


def test_internal_errors_exit_3(workspace, tmp_path, monkeypatch):
    import cheapseg.cli as cli

    def boom(*a, **k):
        raise AssertionError("energy increased")

    monkeypatch.setattr(cli, "segment_image", boom)
    img = next((workspace["manifest"].parent).rglob("*.ppm"))
    assert main(["predict", "--bundle", str(workspace["bundle"]), "--out", str(tmp_path / "p"),
                 str(img)]) == EXIT_INTERNAL


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "cheapseg.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("gen-synth", "train", "predict", "evaluate", "sweep-omega", "ablate"):
        assert cmd in out.stdout
