"""Image-level priors from multi-label randomized trees.

The context-sensitive prior is a single forest whose splits maximize the
class-averaged Gini reduction, so one split can serve several co-occurring
classes at once.  The baseline trains one independent single-class forest
per class with the same machinery.

Split quality for class ``k`` with presence fraction ``p`` is
``G_k = 2 p (1 - p)``; a split scores ``G_k(parent) - (G_k(left) + G_k(right))``
(unweighted child sum, or size-weighted when ``weighted=True``), averaged
over classes.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import binfmt
from .features import get_extractor


@dataclass(frozen=True)
class IlpParams:
    n_trees: int = 50
    max_depth: int = 12
    n_candidates: int = 64
    min_samples_leaf: int = 1
    weighted: bool = False
    presence_min_pixels: int = 50
    presence_min_fraction: float = 0.001
    extractor: str = "texton_color"

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 0 or self.n_candidates < 1 or self.min_samples_leaf < 1:
            raise ValueError("invalid ILP forest parameters: %r" % (self,))


def presence_vectors(labels, num_classes, void_id=255, min_pixels=50, min_fraction=0.001):
    """Binary ``(n_images, C)`` presence matrix.

    A class is present when it covers at least ``min(min_pixels,
    min_fraction * n_pixels)`` non-void pixels.
    """
    out = np.zeros((len(labels), num_classes), dtype=np.uint8)
    for i, lab in enumerate(labels):
        lab = np.asarray(lab)
        vals = lab.ravel()
        counts = np.bincount(vals[vals != void_id], minlength=num_classes)[:num_classes]
        need = min(min_pixels, min_fraction * lab.size)
        out[i] = counts >= max(need, 1)
    return out


def gini_k(Y, k):
    Y = np.asarray(Y)
    n = len(Y)
    if n == 0:
        raise ValueError("Gini of an empty node is undefined")
    p = Y[:, k].sum() / n
    return 2.0 * p * (1.0 - p)


def split_gini_k(left, right, k, weighted=False):
    if len(left) == 0 or len(right) == 0:
        raise ValueError("both sides of a split must be non-empty")
    gl, gr = gini_k(left, k), gini_k(right, k)
    if weighted:
        n = len(left) + len(right)
        return (len(left) * gl + len(right) * gr) / n
    return gl + gr


def score_split(parent, left, right, weighted=False):
    C = np.asarray(parent).shape[1]
    return sum(gini_k(parent, k) - split_gini_k(left, right, k, weighted) for k in range(C)) / C


def _gini_rows(S, n):
    p = S / n[:, None]
    return 2.0 * p * (1.0 - p)


def candidate_scores(Y, masks, weighted=False):
    """Vectorized :func:`score_split` for a stack of boolean left-masks ``(m, n)``."""
    Y = np.asarray(Y, dtype=np.float64)
    n = len(Y)
    total = Y.sum(axis=0)
    Sl = masks.astype(np.float64) @ Y
    nl = masks.sum(axis=1).astype(np.float64)
    nr = n - nl
    with np.errstate(divide="ignore", invalid="ignore"):
        gl = _gini_rows(Sl, nl)
        gr = _gini_rows(total[None, :] - Sl, nr)
    gp = 2.0 * (total / n) * (1.0 - total / n)
    if weighted:
        child = (nl[:, None] * gl + nr[:, None] * gr) / n
    else:
        child = gl + gr
    return (gp[None, :] - child).mean(axis=1)


class MultiLabelForest:
    """Flat multi-label trees over feature vectors; leaves hold per-class presence frequencies."""

    def __init__(self, params, feature, threshold, left, right, leaf, roots, leaf_value):
        self.params = params
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.leaf = np.asarray(leaf, dtype=np.int32)
        self.roots = np.asarray(roots, dtype=np.int32)
        self.leaf_value = np.asarray(leaf_value, dtype=np.float64)

    @property
    def num_outputs(self):
        return self.leaf_value.shape[1]

    def tree_sizes(self):
        bounds = list(self.roots) + [len(self.left)]
        return [bounds[t + 1] - bounds[t] for t in range(len(self.roots))]

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        rows = np.arange(len(X))
        acc = np.zeros((len(X), self.num_outputs))
        for root in self.roots:
            node = np.full(len(X), root, dtype=np.int64)
            while True:
                internal = self.left[node] >= 0
                if not internal.any():
                    break
                nd = node[internal]
                go = X[rows[internal], self.feature[nd]] > self.threshold[nd]
                node[internal] = np.where(go, self.left[nd], self.right[nd])
            acc += self.leaf_value[self.leaf[node]]
        return acc / len(self.roots)

    def arrays(self, prefix=""):
        return {prefix + k: getattr(self, k) for k in
                ("feature", "threshold", "left", "right", "leaf", "roots", "leaf_value")}

    @classmethod
    def from_arrays(cls, params, a, prefix=""):
        return cls(params, *(a[prefix + k] for k in
                             ("feature", "threshold", "left", "right", "leaf", "roots", "leaf_value")))


def _grow(X, Y, idx, depth, params, rng, nodes, values):
    node = len(nodes["left"])
    for v in nodes.values():
        v.append(-1)
    nodes["threshold"][node] = 0.0
    Yn = Y[idx]
    n = len(idx)
    can_split = (depth < params.max_depth and n >= 2 * params.min_samples_leaf
                 and not (Yn == Yn[0]).all())
    best = None
    if can_split:
        m = params.n_candidates
        feats = rng.integers(0, X.shape[1], size=m)
        u = rng.random(m)
        V = X[idx][:, feats].T                   # (m, n)
        lo, hi = V.min(axis=1), V.max(axis=1)
        thr = lo + u * (hi - lo)
        masks = V > thr[:, None]
        nl = masks.sum(axis=1)
        scores = candidate_scores(Yn, masks, params.weighted)
        ok = (nl >= params.min_samples_leaf) & (n - nl >= params.min_samples_leaf)
        scores = np.where(ok, scores, -np.inf)
        j = int(np.argmax(scores))
        if scores[j] > 1e-12:
            best = (int(feats[j]), float(thr[j]), masks[j])
    if best is None:
        nodes["leaf"][node] = len(values)
        values.append(Yn.mean(axis=0))
        return node
    f, t, go = best
    nodes["feature"][node] = f
    nodes["threshold"][node] = t
    nodes["left"][node] = _grow(X, Y, idx[go], depth + 1, params, rng, nodes, values)
    nodes["right"][node] = _grow(X, Y, idx[~go], depth + 1, params, rng, nodes, values)
    return node


def fit_multilabel_forest(X, Y, params=None, seed=0):
    """Grow ``params.n_trees`` multi-label trees on features ``X`` and presence matrix ``Y``."""
    params = params or IlpParams()
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if len(X) < 2:
        raise ValueError("need at least 2 training images")
    if len(X) != len(Y):
        raise ValueError("feature and presence rows differ")
    nodes = {k: [] for k in ("feature", "threshold", "left", "right", "leaf")}
    values, roots = [], []
    for ss in np.random.SeedSequence(seed).spawn(params.n_trees):
        rng = np.random.default_rng(ss)
        sub = {k: [] for k in nodes}
        vals = []
        _grow(X, Y, np.arange(len(X)), 0, params, rng, sub, vals)
        off, loff = len(nodes["left"]), len(values)
        roots.append(off)
        for k in ("left", "right"):
            nodes[k].extend(v + off if v >= 0 else -1 for v in sub[k])
        nodes["leaf"].extend(v + loff if v >= 0 else -1 for v in sub["leaf"])
        nodes["feature"].extend(max(v, 0) for v in sub["feature"])
        nodes["threshold"].extend(sub["threshold"])
        values.extend(vals)
    return MultiLabelForest(params, nodes["feature"], nodes["threshold"], nodes["left"], nodes["right"],
                            nodes["leaf"], roots, np.array(values))


class ImageLevelPrior:
    """Feature extractor plus one or more forests covering the class columns.

    ``kind == "context"``: one multi-label forest over all classes.
    ``kind == "multiclass"``: one single-class forest per class.
    """

    def __init__(self, kind, params, forests, num_classes, extractor):
        self.kind = kind
        self.params = params
        self.forests = forests
        self.num_classes = num_classes
        self.extractor = extractor

    def predict_features(self, X):
        parts = [f.predict(X) for f in self.forests]
        return np.concatenate(parts, axis=1)

    def predict(self, image):
        return self.predict_features(self.extractor(image)[None, :])[0]

    def to_bytes(self):
        arrays = {}
        for i, f in enumerate(self.forests):
            arrays.update(f.arrays("f%d_" % i))
        meta = {"kind": self.kind, "params": asdict(self.params), "num_classes": self.num_classes,
                "n_forests": len(self.forests)}
        return binfmt.dumps("ILPFORST", meta, arrays)

    @classmethod
    def from_bytes(cls, data, forest=None):
        _, meta, a = binfmt.loads(data, "ILPFORST")
        params = IlpParams(**meta["params"])
        forests = [MultiLabelForest.from_arrays(params, a, "f%d_" % i) for i in range(meta["n_forests"])]
        return cls(meta["kind"], params, forests, meta["num_classes"], get_extractor(params.extractor, forest))

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path, forest=None):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), forest)


def _features(images, extractor):
    return np.stack([extractor(im) for im in images])


def train_ilp(images, labels, num_classes, params=None, seed=0, void_id=255, forest=None):
    """Context-sensitive prior: one multi-label forest over all classes."""
    params = params or IlpParams()
    if len(images) < 2:
        raise ValueError("need at least 2 training images")
    extractor = get_extractor(params.extractor, forest)
    X = _features(images, extractor)
    Y = presence_vectors(labels, num_classes, void_id, params.presence_min_pixels, params.presence_min_fraction)
    return ImageLevelPrior("context", params, [fit_multilabel_forest(X, Y, params, seed)], num_classes, extractor)


def train_ilp_multiclass_baseline(images, labels, num_classes, params=None, seed=0, void_id=255, forest=None):
    """Baseline prior: an independent single-class forest per class (class ``k`` uses ``seed + k``)."""
    params = params or IlpParams()
    if len(images) < 2:
        raise ValueError("need at least 2 training images")
    extractor = get_extractor(params.extractor, forest)
    X = _features(images, extractor)
    Y = presence_vectors(labels, num_classes, void_id, params.presence_min_pixels, params.presence_min_fraction)
    forests = [fit_multilabel_forest(X, Y[:, [k]], params, seed + k) for k in range(num_classes)]
    return ImageLevelPrior("multiclass", params, forests, num_classes, extractor)


def predict_ilp(model, image):
    """Per-class presence probabilities for one image (not normalized across classes)."""
    return model.predict(image)


def ideal_prior(labels, num_classes, void_id=255, min_pixels=50, min_fraction=0.001):
    """Ground-truth presence as a prior, for upper-bound experiments."""
    return presence_vectors([labels], num_classes, void_id, min_pixels, min_fraction)[0].astype(np.float64)
