"""Training, inference and evaluation of the full segmentation model.

A model bundle is a directory::

    meta.json              config, class set, format version, active ILP variant
    report.json            clusters, gathered-set sizes, flagged classes
    temp_stf.bin           forest trained on the whole split (also the plain-STF baseline)
    dstf/                  recognizer.bin, specialist_<k>.bin, assignment.json, omega.csv, psi.csv
    ilp_context.bin        multi-label prior
    ilp_multiclass.bin     per-class baseline prior
    location.bin           location potentials (plus location_csv/ for plotting)
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import RunConfig, config_from_dict
from .crf import CrfProblem, alpha_expansion, build_unary
from .dataset import ClassSet
from .dstf import (DecorrelatedModel, collect_leaf_observations, dstf_classify_image, train_dstf,
                   zero_variance_classes)
from .ilp import ImageLevelPrior, ideal_prior, train_ilp, train_ilp_multiclass_baseline
from .location import LocationPotentials, location_map, train_location
from .metrics import ConfusionMatrix, iou, recalls
from .stf import InferenceStats, TextonForest, classify_image, train_stf

log = logging.getLogger(__name__)

BUNDLE_VERSION = 1
ILP_MODES = ("none", "multiclass", "context", "ideal")
APPEARANCE = ("dstf", "stf")


class BundleError(ValueError):
    pass


@dataclass
class ModelBundle:
    config: RunConfig
    class_set: ClassSet
    temp_forest: TextonForest
    dstf: DecorrelatedModel
    ilp_context: ImageLevelPrior
    ilp_multiclass: ImageLevelPrior
    location: LocationPotentials
    report: dict = None

    @property
    def num_classes(self):
        return self.class_set.count

    @property
    def void_id(self):
        return self.class_set.void_id

    @property
    def ilp_variant(self):
        return self.config.ilp_variant

    def prior(self, mode):
        if mode == "context":
            return self.ilp_context
        if mode == "multiclass":
            return self.ilp_multiclass
        raise ValueError("no learned prior for mode %r" % mode)

    def meta(self):
        cs = self.class_set
        return {
            "version": BUNDLE_VERSION,
            "config": self.config.to_json(),
            "classes": list(cs.names),
            "void": cs.void_id,
            "palette": None if cs.palette is None else [list(c) for c in cs.palette],
            "ilp_variant": self.config.ilp_variant,
            "baseline_ilp": self.config.ilp_variant == "multiclass",
        }

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        names = list(self.class_set.names)
        self.temp_forest.save(d / "temp_stf.bin")
        self.dstf.save(d / "dstf", names)
        self.ilp_context.save(d / "ilp_context.bin")
        self.ilp_multiclass.save(d / "ilp_multiclass.bin")
        self.location.save(d / "location.bin")
        self.location.dump_csv(d / "location_csv", names)
        with open(d / "meta.json", "w") as fh:
            json.dump(self.meta(), fh, indent=1, sort_keys=True)
        if self.report is not None:
            with open(d / "report.json", "w") as fh:
                json.dump(self.report, fh, indent=1, sort_keys=True)
        return d

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        if not d.is_dir():
            raise BundleError("model bundle not found: %s" % d)
        need = ["meta.json", "temp_stf.bin", "dstf/recognizer.bin", "dstf/assignment.json",
                "ilp_context.bin", "ilp_multiclass.bin", "location.bin"]
        missing = [n for n in need if not (d / n).is_file()]
        if missing:
            raise BundleError("incomplete model bundle %s: missing %s" % (d, ", ".join(missing)))
        with open(d / "meta.json") as fh:
            meta = json.load(fh)
        if meta.get("version") != BUNDLE_VERSION:
            raise BundleError("unsupported bundle version %r" % meta.get("version"))
        config = config_from_dict(meta["config"])
        class_set = ClassSet(meta["classes"], meta["void"], meta.get("palette"))
        temp = TextonForest.load(d / "temp_stf.bin")
        dstf = DecorrelatedModel.load(d / "dstf", list(class_set.names), temp)
        report = None
        if (d / "report.json").is_file():
            with open(d / "report.json") as fh:
                report = json.load(fh)
        return cls(config, class_set, temp, dstf,
                   ImageLevelPrior.load(d / "ilp_context.bin", temp),
                   ImageLevelPrior.load(d / "ilp_multiclass.bin", temp),
                   LocationPotentials.load(d / "location.bin"), report)


def _stage_seeds(seed):
    names = ("temp", "dstf", "ilp_context", "ilp_multiclass")
    return dict(zip(names, (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(len(names)))))


def train_bundle(images, labels, class_set, config=None):
    """Temporary STF, then DSTF, both priors and location potentials."""
    config = config or RunConfig()
    C, void = class_set.count, class_set.void_id
    seeds = _stage_seeds(config.seed)
    log.info("training temporary STF on %d images", len(images))
    temp = train_stf(images, labels, C, config.stf, seeds["temp"], void, tag="temporary")
    log.info("training DSTF")
    dstf = train_dstf(images, labels, C, config.stf, config.dstf, seeds["dstf"], void, temp_forest=temp)
    log.info("training image-level priors")
    ctx = train_ilp(images, labels, C, config.ilp, seeds["ilp_context"], void, temp)
    mult = train_ilp_multiclass_baseline(images, labels, C, config.ilp, seeds["ilp_multiclass"], void, temp)
    loc = train_location(labels, C, config.location.grid_size, void, config.location.smoothing)
    names = list(class_set.names)
    obs = collect_leaf_observations(temp)
    report = {
        "train_images": len(images),
        "K": dstf.K,
        "clusters": [[names[c] for c in dstf.assignment.members(k)] for k in range(dstf.K)],
        "gathered": [[int(i) for i in g] for g in dstf.gathered],
        "gathered_sizes": [len(g) for g in dstf.gathered],
        "zero_variance_classes": [names[c] for c in zero_variance_classes(obs)],
        "absent_classes": [names[c] for c in range(C) if dstf.psi[c, c] == 0],
        "temp_leaves": int(temp.n_leaves),
        "seeds": seeds,
    }
    return ModelBundle(config, class_set, temp, dstf, ctx, mult, loc, report)


def segment_image(bundle, image, crf=None, ilp_mode=None, appearance="dstf", truth=None, stats=None):
    """Label one image with the full model.

    ``ilp_mode`` defaults to the bundle's variant; ``"ideal"`` takes the
    presence vector from ``truth``.  With ``crf.omega == 1`` the appearance
    model is never evaluated.  Returns ``(labels, info)``.
    """
    crf = crf or bundle.config.crf
    ilp_mode = ilp_mode or bundle.ilp_variant
    if ilp_mode not in ILP_MODES:
        raise ValueError("ilp_mode must be one of %s" % (ILP_MODES,))
    if appearance not in APPEARANCE:
        raise ValueError("appearance must be one of %s" % (APPEARANCE,))
    image = np.asarray(image)
    H, W = image.shape[:2]
    app = None
    if crf.omega < 1.0:
        if appearance == "dstf":
            app = dstf_classify_image(bundle.dstf, image, stats)
        else:
            app = classify_image(bundle.temp_forest, image, stats)
    loc = location_map(bundle.location, H, W) if crf.omega > 0.0 else None
    if ilp_mode == "none":
        zeta = None
    elif ilp_mode == "ideal":
        if truth is None:
            raise ValueError("ideal prior needs the ground-truth labels")
        p = bundle.config.ilp
        zeta = ideal_prior(truth, bundle.num_classes, bundle.void_id, p.presence_min_pixels, p.presence_min_fraction)
    else:
        zeta = bundle.prior(ilp_mode).predict(image)
    unary = build_unary(app, loc, zeta, crf.omega, crf.alpha, crf.eps, crf.zeta_mode)
    problem = CrfProblem(unary, crf.lam)
    labels = alpha_expansion(problem, max_sweeps=crf.max_sweeps)
    return labels.astype(np.uint8), {"zeta": zeta}


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def evaluate(bundle, images, labels, crf=None, ilp_mode=None, appearance="dstf", workers=1, stats=None):
    """Segment every image and accumulate one confusion matrix."""
    conf = ConfusionMatrix(bundle.num_classes)

    def run(pair):
        im, lab = pair
        return segment_image(bundle, im, crf, ilp_mode, appearance, truth=lab, stats=stats)[0]

    for pred, lab in zip(_map(run, list(zip(images, labels)), workers), labels):
        conf.accumulate(pred, lab, bundle.void_id)
    return conf


def _row(conf):
    _, avg, glob = recalls(conf)
    return avg, glob, iou(conf)[1]


def sweep_omega(bundle, images, labels, omegas, crf=None, ilp_mode=None, appearance="dstf", workers=1):
    """One evaluation per listed omega (duplicates kept).

    Returns rows ``(omega, average_recall, global_recall, appearance_pixels)``;
    the last field counts per-pixel appearance inferences spent on that row.
    """
    omegas = list(omegas)
    if not omegas:
        raise ValueError("omega list is empty")
    if not images:
        raise ValueError("evaluation split is empty")
    crf = crf or bundle.config.crf
    rows = []
    for w in omegas:
        stats = InferenceStats()
        cfg = replace(crf, omega=float(w))
        conf = evaluate(bundle, images, labels, cfg, ilp_mode, appearance, workers, stats)
        avg, glob, _ = _row(conf)
        rows.append((float(w), avg, glob, sum(stats.pixel_inferences.values())))
    return rows


def ablate(bundle, images, labels, crf=None, workers=1, include_ideal=False):
    """The appearance x prior grid; rows ``(appearance, ilp, average, global, mean_iou)``."""
    if not images:
        raise ValueError("evaluation split is empty")
    modes = ["none", "multiclass", "context"] + (["ideal"] if include_ideal else [])
    rows = []
    for app in ("stf", "dstf"):
        for mode in modes:
            conf = evaluate(bundle, images, labels, crf, mode, app, workers)
            rows.append((app, mode) + _row(conf))
    return rows
