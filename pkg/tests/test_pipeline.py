import json
from dataclasses import replace

import numpy as np
import pytest

from cheapseg.dstf import dstf_classify_image
from cheapseg.ilp import ideal_prior
from cheapseg.location import location_map
from cheapseg.pipeline import BundleError, ModelBundle, ablate, evaluate, segment_image, sweep_omega, train_bundle
from cheapseg.stf import InferenceStats, classify_image

from conftest import small_config


def _files(d):
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_no_prior_no_smoothing_is_the_appearance_argmax(tiny_bundle, tiny_split):
    crf = replace(tiny_bundle.config.crf, omega=0.0, lam=0.0)
    for img in tiny_split["test"][0]:
        labels, info = segment_image(tiny_bundle, img, crf, ilp_mode="none")
        assert info["zeta"] is None
        p = np.maximum(crf.eps, dstf_classify_image(tiny_bundle.dstf, img))
        assert np.array_equal(labels, p.argmax(axis=2))
        stf, _ = segment_image(tiny_bundle, img, crf, ilp_mode="none", appearance="stf")
        q = np.maximum(crf.eps, classify_image(tiny_bundle.temp_forest, img))
        assert np.array_equal(stf, q.argmax(axis=2))


def test_zero_alpha_switches_the_prior_off(tiny_bundle, tiny_split):
    img = tiny_split["test"][0][1]
    crf = replace(tiny_bundle.config.crf, alpha=0.0)
    a, _ = segment_image(tiny_bundle, img, crf, ilp_mode="context")
    b, _ = segment_image(tiny_bundle, img, crf, ilp_mode="none")
    assert np.array_equal(a, b)


def test_location_only_skips_the_appearance_model(tiny_bundle, tiny_split):
    img = tiny_split["test"][0][0]
    stats = InferenceStats()
    crf = replace(tiny_bundle.config.crf, omega=1.0, lam=0.0)
    labels, _ = segment_image(tiny_bundle, img, crf, ilp_mode="none", stats=stats)
    assert stats.recognizer_calls == 0 and not stats.forest_calls
    assert np.array_equal(labels, location_map(tiny_bundle.location, *img.shape[:2]).argmax(axis=2))


def test_ideal_prior(tiny_bundle, tiny_split):
    img, lab = tiny_split["test"][0][0], tiny_split["test"][1][0]
    with pytest.raises(ValueError, match="ground-truth"):
        segment_image(tiny_bundle, img, ilp_mode="ideal")
    labels, info = segment_image(tiny_bundle, img, ilp_mode="ideal", truth=lab)
    assert np.array_equal(info["zeta"], ideal_prior(lab, 6))
    present = set(np.flatnonzero(info["zeta"]).tolist())
    assert set(np.unique(labels).tolist()) <= present


def test_argument_errors(tiny_bundle, tiny_split):
    img = tiny_split["test"][0][0]
    with pytest.raises(ValueError, match="ilp_mode"):
        segment_image(tiny_bundle, img, ilp_mode="oracle")
    with pytest.raises(ValueError, match="appearance"):
        segment_image(tiny_bundle, img, appearance="cnn")


def test_bundle_roundtrip(tiny_bundle, tiny_split, tmp_path):
    a = tiny_bundle.save(tmp_path / "a")
    b = tiny_bundle.save(tmp_path / "b")
    assert _files(a) == _files(b)
    back = ModelBundle.load(a)
    assert back.config == tiny_bundle.config and back.report == tiny_bundle.report
    assert back.meta() == tiny_bundle.meta()
    for img in tiny_split["test"][0]:
        assert np.array_equal(segment_image(back, img)[0], segment_image(tiny_bundle, img)[0])
    assert _files(back.save(tmp_path / "c")) == _files(a)


def test_bundle_errors(tiny_bundle, tmp_path):
    with pytest.raises(BundleError, match="not found"):
        ModelBundle.load(tmp_path / "nowhere")
    d = tiny_bundle.save(tmp_path / "m")
    meta = json.loads((d / "meta.json").read_text())
    meta["version"] = 99
    (d / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(BundleError, match="version"):
        ModelBundle.load(d)
    (d / "ilp_context.bin").unlink()
    with pytest.raises(BundleError, match="ilp_context.bin"):
        ModelBundle.load(d)


def test_training_is_deterministic(tiny_bundle, tiny_split, tmp_path):
    images, labels, _ = tiny_split["train"]
    again = train_bundle(images, labels, tiny_split["class_set"], small_config(seed=5))
    assert _files(again.save(tmp_path / "x")) == _files(tiny_bundle.save(tmp_path / "y"))
    report = again.report
    assert report["K"] == len(report["clusters"]) == len(report["gathered_sizes"])
    assert sorted(c for cl in report["clusters"] for c in cl) == sorted(tiny_split["class_set"].names)


def test_meta_records_the_prior_variant(tiny_bundle):
    assert tiny_bundle.meta()["ilp_variant"] == "context" and not tiny_bundle.meta()["baseline_ilp"]
    other = replace(tiny_bundle, config=replace(tiny_bundle.config, ilp_variant="multiclass"))
    assert other.meta()["baseline_ilp"]


def test_threads_do_not_change_the_result(tiny_bundle, tiny_split):
    images, labels, _ = tiny_split["test"]
    one = evaluate(tiny_bundle, images, labels, workers=1)
    many = evaluate(tiny_bundle, images, labels, workers=3)
    assert np.array_equal(one.counts, many.counts)
    assert one.total == sum(int((l != 255).sum()) for l in labels)


def test_sweep_keeps_duplicates_and_counts_appearance_pixels(tiny_bundle, tiny_split):
    images, labels, _ = tiny_split["test"]
    rows = sweep_omega(tiny_bundle, images, labels, [0.5, 0.5, 1.0])
    assert [r[0] for r in rows] == [0.5, 0.5, 1.0]
    assert rows[0][1:] == rows[1][1:]
    assert rows[0][3] == sum(im.shape[0] * im.shape[1] for im in images)
    assert rows[2][3] == 0
    with pytest.raises(ValueError, match="empty"):
        sweep_omega(tiny_bundle, images, labels, [])
    with pytest.raises(ValueError, match="empty"):
        sweep_omega(tiny_bundle, [], [], [0.3])


def test_ablation_grid(tiny_bundle, tiny_split):
    images, labels, _ = tiny_split["test"]
    rows = ablate(tiny_bundle, images[:2], labels[:2])
    assert [(r[0], r[1]) for r in rows] == [(a, m) for a in ("stf", "dstf") for m in ("none", "multiclass", "context")]
    assert all(0.0 <= v <= 1.0 for r in rows for v in r[2:])
    assert len(ablate(tiny_bundle, images[:1], labels[:1], include_ideal=True)) == 8
    with pytest.raises(ValueError):
        ablate(tiny_bundle, [], [])
