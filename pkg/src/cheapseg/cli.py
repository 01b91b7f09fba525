"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(missing or malformed inputs), 3 internal invariant violation.
"""

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import plotting
from .binfmt import FormatError
from .config import ConfigError, RunConfig, env_workers, load_config
from .dataset import DatasetError, generate_synthetic, load_dataset, read_pgm, read_ppm, spec_from_json, \
    spec_to_json, write_pgm, write_ppm
from .metrics import ConfusionMatrix, write_csv, write_json
from .pipeline import APPEARANCE, ILP_MODES, BundleError, ModelBundle, ablate, segment_image, sweep_omega, \
    train_bundle
from .presets import PRESETS, get_preset

log = logging.getLogger("cheapseg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "%s: error: %s\n" % (self.prog, message))


def _omega_list(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("omega list must be comma-separated numbers") from None
    return vals


def _add_crf_flags(p):
    g = p.add_argument_group("inference overrides (default: the bundle's config)")
    g.add_argument("--omega", type=float)
    g.add_argument("--lam", type=float)
    g.add_argument("--alpha", type=float)
    g.add_argument("--zeta-mode", choices=("class", "scalar"))
    g.add_argument("--max-sweeps", type=int)
    g.add_argument("--workers", type=int, help="worker threads (env CHEAPSEG_WORKERS also accepted)")


def _crf_from(args, bundle):
    over = {k: v for k, v in (("omega", args.omega), ("lam", args.lam), ("alpha", args.alpha),
                              ("zeta_mode", args.zeta_mode), ("max_sweeps", args.max_sweeps)) if v is not None}
    try:
        return replace(bundle.config.crf, **over)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _workers(args, bundle=None):
    if getattr(args, "workers", None):
        return args.workers
    return env_workers(bundle.config.workers if bundle is not None else 1)


def build_parser():
    p = _Parser(prog="cheapseg", description="Semantic segmentation with texton forests, image-level priors, "
                                              "location potentials and a Potts CRF.")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--print-config", action="store_true",
                   help="print the effective configuration (defaults merged with --config) and exit")
    p.add_argument("--config", help="JSON config file (applies to train and --print-config)")
    sub = p.add_subparsers(dest="command")

    g = sub.add_parser("gen-synth", help="write a synthetic dataset")
    src = g.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=PRESETS, default="easy")
    src.add_argument("--spec", help="JSON synthetic spec")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-train", type=int)
    g.add_argument("--n-val", type=int)
    g.add_argument("--n-test", type=int)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a model bundle")
    t.add_argument("--manifest", required=True)
    t.add_argument("--split", default="train")
    t.add_argument("--out", required=True)
    t.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    t.add_argument("--ilp", choices=("context", "multiclass", "none"), help="image-level prior variant")
    t.add_argument("--seed", type=int)
    t.add_argument("--debug-json", action="store_true", help="also write JSON dumps of every forest")

    pr = sub.add_parser("predict", help="segment images with a bundle")
    pr.add_argument("--bundle", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--manifest", help="take images from this manifest ...")
    pr.add_argument("--split", default="test", help="... restricted to this split")
    pr.add_argument("images", nargs="*", help="PPM images (alternative to --manifest)")
    pr.add_argument("--ilp-mode", choices=[m for m in ILP_MODES if m != "ideal"])
    pr.add_argument("--appearance", choices=APPEARANCE, default="dstf")
    pr.add_argument("--color", action="store_true", help="also write color-mapped PPMs")
    _add_crf_flags(pr)

    e = sub.add_parser("evaluate", help="score predicted label rasters against a manifest")
    e.add_argument("--pred", required=True, help="directory of <stem>.pgm predictions")
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--out", required=True, help="CSV path; a .json twin and a confusion plot are written beside it")

    s = sub.add_parser("sweep-omega", help="average/global recall across location weights")
    s.add_argument("--bundle", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="val")
    s.add_argument("--omegas", type=_omega_list, default=[round(0.1 * i, 1) for i in range(11)])
    s.add_argument("--ilp-mode", choices=ILP_MODES)
    s.add_argument("--appearance", choices=APPEARANCE, default="dstf")
    s.add_argument("--out", required=True, help="CSV path; the plot goes beside it")
    _add_crf_flags(s)

    a = sub.add_parser("ablate", help="appearance x image-level prior grid")
    a.add_argument("--bundle", required=True)
    a.add_argument("--manifest", required=True)
    a.add_argument("--split", default="test")
    a.add_argument("--ideal", action="store_true", help="add ground-truth presence cells")
    a.add_argument("--out", required=True, help="CSV path; the plot goes beside it")
    _add_crf_flags(a)
    return p


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_synth(args):
    if args.spec:
        try:
            with open(args.spec) as fh:
                spec = spec_from_json(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError("cannot read spec %s: %s" % (args.spec, exc)) from None
    else:
        spec = get_preset(args.preset)
    over = {k: v for k, v in (("n_train", args.n_train), ("n_val", args.n_val), ("n_test", args.n_test))
            if v is not None}
    if over:
        spec = replace(spec, **over)
    manifest = generate_synthetic(spec, args.seed, args.out)
    with open(Path(args.out) / "synth_spec.json", "w") as fh:
        json.dump(spec_to_json(spec), fh, indent=1, sort_keys=True)
    print("wrote %d images to %s" % (len(manifest.entries), args.out))
    return EXIT_OK


def _effective_config(args):
    over = {}
    if getattr(args, "ilp", None):
        over["ilp_variant"] = args.ilp
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    return load_config(args.config, over)


def cmd_train(args):
    cfg = _effective_config(args)
    manifest = load_dataset(args.manifest)
    images, labels = manifest.load_split(args.split)
    if not images:
        raise DatasetError("split %r of %s is empty" % (args.split, args.manifest))
    bundle = train_bundle(images, labels, manifest.class_set, cfg)
    out = bundle.save(args.out)
    if args.debug_json:
        bundle.temp_forest.dump_json(out / "temp_stf.json")
        for k, f in enumerate(bundle.dstf.specialists):
            f.dump_json(out / "dstf" / ("specialist_%d.json" % k))
    names = list(manifest.class_set.names)
    if bundle.dstf.omega is not None:
        plotting.plot_matrix(bundle.dstf.omega, names, out / "omega.png", "class correlation")
        plotting.plot_matrix(bundle.dstf.psi, names, out / "psi.png", "co-occurrence", 0.0, 1.0)
    r = bundle.report
    print("trained bundle %s: K=%d clusters %s, gathered sizes %s, ILP variant %s"
          % (out, r["K"], r["clusters"], r["gathered_sizes"], cfg.ilp_variant))
    return EXIT_OK


def _load_bundle(path):
    try:
        return ModelBundle.load(path)
    except FormatError as exc:
        raise BundleError("corrupt model bundle %s: %s" % (path, exc)) from None


def cmd_predict(args):
    bundle = _load_bundle(args.bundle)
    crf = _crf_from(args, bundle)
    if args.manifest:
        manifest = load_dataset(args.manifest)
        paths = [manifest.image_path(e) for e in manifest.split(args.split)]
    else:
        paths = [Path(p) for p in args.images]
    if not paths:
        raise UsageError("no input images (give --manifest or image paths)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    colors = np.array(bundle.class_set.colors(), dtype=np.uint8)
    workers = _workers(args, bundle)

    def run(path):
        img = read_ppm(path)
        labels, _ = segment_image(bundle, img, crf, args.ilp_mode, args.appearance)
        write_pgm(out / (path.stem + ".pgm"), labels)
        if args.color:
            write_ppm(out / (path.stem + "_color.ppm"), colors[labels])
        return path

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, paths))
    else:
        for p in paths:
            run(p)
    print("wrote %d label images to %s" % (len(paths), out))
    return EXIT_OK


def cmd_evaluate(args):
    manifest = load_dataset(args.manifest)
    entries = manifest.split(args.split)
    if not entries:
        raise DatasetError("split %r of %s is empty" % (args.split, args.manifest))
    conf = ConfusionMatrix(manifest.num_classes)
    pred_dir = Path(args.pred)
    for e in entries:
        p = pred_dir / (Path(e.image).stem + ".pgm")
        if not p.is_file():
            raise DatasetError("missing prediction %s" % p)
        truth = read_pgm(manifest.label_path(e))
        try:
            conf.accumulate(read_pgm(p), truth, manifest.class_set.void_id)
        except ValueError as exc:
            raise DatasetError("%s: %s" % (p, exc)) from None
    names = list(manifest.class_set.names)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    s = write_csv(conf, out, names)
    write_json(conf, out.with_suffix(".json"), names)
    plotting.plot_confusion(conf, names, out.with_suffix(".png"))
    print("average recall %.4f  global recall %.4f  mean IoU %.4f"
          % (s["average_recall"], s["global_recall"], s["mean_iou"]))
    return EXIT_OK


def _eval_split(args):
    manifest = load_dataset(args.manifest)
    images, labels = manifest.load_split(args.split)
    if not images:
        raise DatasetError("split %r of %s is empty" % (args.split, args.manifest))
    return images, labels


def cmd_sweep_omega(args):
    if not args.omegas:
        raise UsageError("omega list is empty")
    bundle = _load_bundle(args.bundle)
    crf = _crf_from(args, bundle)
    images, labels = _eval_split(args)
    rows = sweep_omega(bundle, images, labels, args.omegas, crf, args.ilp_mode, args.appearance,
                       _workers(args, bundle))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["omega", "average_recall", "global_recall", "appearance_pixels"])
        for r in rows:
            w.writerow(["%g" % r[0], "%.6f" % r[1], "%.6f" % r[2], r[3]])
    plotting.plot_sweep(rows, out.with_suffix(".png"))
    best = max(rows, key=lambda r: r[1])
    print("best omega %g: average recall %.4f" % (best[0], best[1]))
    return EXIT_OK


def cmd_ablate(args):
    bundle = _load_bundle(args.bundle)
    crf = _crf_from(args, bundle)
    images, labels = _eval_split(args)
    rows = ablate(bundle, images, labels, crf, _workers(args, bundle), args.ideal)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["appearance", "ilp", "average_recall", "global_recall", "mean_iou"])
        for r in rows:
            w.writerow([r[0], r[1], "%.6f" % r[2], "%.6f" % r[3], "%.6f" % r[4]])
    plotting.plot_ablation(rows, out.with_suffix(".png"))
    for r in rows:
        print("%-5s %-10s avg %.4f  global %.4f" % r[:4])
    return EXIT_OK


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "sweep-omega": cmd_sweep_omega,
    "ablate": cmd_ablate,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.print_config:
            cfg = load_config(args.config) if args.config else RunConfig()
            print(cfg.dumps())
            return EXIT_OK
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print("cheapseg: error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, BundleError, FormatError, FileNotFoundError, IsADirectoryError) as exc:
        print("cheapseg: data error: %s" % exc, file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print("cheapseg: internal error: %s: %s" % (type(exc).__name__, exc), file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
