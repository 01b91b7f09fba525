"""Decorrelated semantic texton forests.

Pipeline: a temporary forest is trained on everything; its leaf class
distributions give a class correlation matrix, which is turned into a
distance and clustered hierarchically.  Training images are then ranked per
cluster with class co-occurrence scores, one specialist forest is trained per
cluster, and a linear cluster recognizer routes every test image to exactly
one specialist.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from . import binfmt
from .features import get_extractor
from .stf import StfParams, TextonForest, classify_image, train_stf

log = logging.getLogger(__name__)

LINKAGES = ("average", "single", "complete", "weighted")


@dataclass(frozen=True)
class DstfParams:
    cap_fraction: float = 0.07
    min_members: int = 3
    linkage: str = "average"
    extractor: str = "color_grid"
    epochs: int = 50
    learning_rate: float = 0.01
    l2: float = 1e-4

    def __post_init__(self):
        if not 0.0 < self.cap_fraction <= 1.0:
            raise ValueError("cap_fraction must lie in (0, 1]")
        if self.linkage not in LINKAGES:
            raise ValueError("linkage must be one of %s" % (LINKAGES,))
        if self.min_members < 1:
            raise ValueError("min_members must be >= 1")


@dataclass
class ClusterAssignment:
    cluster_of: np.ndarray
    K: int

    def members(self, k):
        return [int(c) for c in np.flatnonzero(self.cluster_of == k)]

    def to_json(self, class_names=None):
        names = class_names or [str(c) for c in range(len(self.cluster_of))]
        return {"K": self.K, "cluster_of": {n: int(k) for n, k in zip(names, self.cluster_of)}}


# ---------------------------------------------------------------------------
# correlation and clustering
# ---------------------------------------------------------------------------

def collect_leaf_observations(forest):
    """Leaf class distributions as columns: a ``(C, T)`` matrix over all trees' leaves."""
    if forest.n_leaves < 2:
        raise ValueError("need at least 2 leaves to estimate class covariance, forest has %d"
                         % forest.n_leaves)
    return forest.leaf_dist.T.copy()


def zero_variance_classes(obs):
    obs = np.asarray(obs, dtype=np.float64)
    return [int(c) for c in np.flatnonzero(obs.var(axis=1) <= 1e-300)]


def class_correlation(obs):
    """Pearson correlation between the rows of ``obs``.

    Classes whose row is constant get zero correlation with every other
    class (and 1 on the diagonal).
    """
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[1] < 2:
        raise ValueError("need a (C, T) observation matrix with T >= 2")
    centered = obs - obs.mean(axis=1, keepdims=True)
    cov = centered @ centered.T / (obs.shape[1] - 1)
    sd = np.sqrt(np.diag(cov))
    flat = zero_variance_classes(obs)
    if flat:
        log.warning("classes with zero leaf variance (correlation set to 0): %s", flat)
    sd_safe = np.where(sd > 0, sd, 1.0)
    omega = cov / np.outer(sd_safe, sd_safe)
    omega[flat, :] = 0.0
    omega[:, flat] = 0.0
    omega = np.clip((omega + omega.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(omega, 1.0)
    return omega


def correlation_distance(omega):
    """``D = omega - min(omega)`` off the diagonal, zero on it."""
    omega = np.asarray(omega, dtype=np.float64)
    D = omega - omega.min()
    np.fill_diagonal(D, 0.0)
    return D


def _relabel(raw):
    """Renumber cluster labels by the smallest class id they contain."""
    order = {}
    for lab in raw:
        if lab not in order:
            order[lab] = len(order)
    return np.array([order[lab] for lab in raw], dtype=np.int64)


def cluster_classes(D, min_members=3, method="average"):
    """Agglomerative clustering cut at the lowest height leaving every cluster >= ``min_members``.

    All merges at or below the cut height are applied, so tied heights are
    never split.  Falls back to a single cluster when no cut qualifies.
    """
    D = np.asarray(D, dtype=np.float64)
    C = D.shape[0]
    if C < 2:
        raise ValueError("need at least 2 classes")
    if min_members <= 1:
        return ClusterAssignment(np.arange(C), C)
    Z = linkage(squareform(D, checks=False), method=method)
    for h in np.unique(Z[:, 2]):
        raw = fcluster(Z, t=h, criterion="distance")
        sizes = np.bincount(raw)[1:]
        sizes = sizes[sizes > 0]
        if len(sizes) > 1 and sizes.min() >= min_members:
            lab = _relabel(raw)
            return ClusterAssignment(lab, int(lab.max()) + 1)
    return ClusterAssignment(np.zeros(C, dtype=np.int64), 1)


# ---------------------------------------------------------------------------
# gathering images
# ---------------------------------------------------------------------------

def _present(labels, C, void_id):
    P = np.zeros((len(labels), C), dtype=bool)
    for i, lab in enumerate(labels):
        vals = np.asarray(lab).ravel()
        vals = vals[vals != void_id]
        P[i, np.unique(vals)] = True
    return P


def class_cooccurrence(labels, num_classes, void_id=255):
    """``psi[x, y] = P(image contains y | image contains x)``; absent classes get a zero row."""
    if not labels:
        raise ValueError("need at least one training image")
    P = _present(labels, num_classes, void_id).astype(np.float64)
    both = P.T @ P
    n_x = P.sum(axis=0)
    absent = np.flatnonzero(n_x == 0)
    if len(absent):
        log.warning("classes absent from every training image: %s", absent.tolist())
    return both / np.where(n_x > 0, n_x, 1.0)[:, None]


def score_image(c, G, psi, void_id=255):
    """Co-occurrence score of ground-truth image ``G`` for class ``c``."""
    vals = np.asarray(G).ravel()
    vals = vals[vals != void_id]
    counts = np.bincount(vals, minlength=psi.shape[0])
    return float(counts @ psi[c])


def gather_training_sets(assignment, psi, labels, cap_fraction=0.07, void_id=255):
    """Per-cluster lists of training-image indices.

    Each member class ranks the images by :func:`score_image` (descending,
    ties by index, zero scores dropped); the rankings are merged round-robin
    in class-id order without duplicates until ``ceil(cap_fraction * N)``
    images are taken.
    """
    N = len(labels)
    budget = max(1, math.ceil(cap_fraction * N - 1e-9))
    counts = np.stack([np.bincount(np.asarray(g).ravel()[np.asarray(g).ravel() != void_id],
                                   minlength=psi.shape[0]) for g in labels]).astype(np.float64)
    scores = counts @ psi.T   # (N, C): scores[i, c] = S(c, G_i)
    out = []
    for k in range(assignment.K):
        members = assignment.members(k)
        rankings = []
        for c in members:
            s = scores[:, c]
            order = np.lexsort((np.arange(N), -s))
            rankings.append([int(i) for i in order if s[i] > 0])
        if not any(rankings):
            raise ValueError("cluster %d (classes %s) appears in no training image" % (k, members))
        taken, seen = [], set()
        depth = 0
        while len(taken) < budget and any(depth < len(r) for r in rankings):
            for r in rankings:
                if depth < len(r) and r[depth] not in seen and len(taken) < budget:
                    seen.add(r[depth])
                    taken.append(r[depth])
            depth += 1
        out.append(taken)
    return out


# ---------------------------------------------------------------------------
# cluster recognizer
# ---------------------------------------------------------------------------

class ClusterRecognizer:
    """One-vs-rest linear classifier over standardized global features."""

    def __init__(self, extractor_id, mean, scale, weights, bias, extractor=None):
        self.extractor_id = extractor_id
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.extractor = extractor or get_extractor(extractor_id)

    @property
    def K(self):
        return len(self.bias)

    def scores(self, feature):
        z = (np.asarray(feature) - self.mean) / self.scale
        return self.weights @ z + self.bias

    def predict(self, image, stats=None):
        if stats is not None:
            stats.recognizer_calls += 1
        if self.K == 1:
            return 0
        return int(np.argmax(self.scores(self.extractor(image))))

    def to_bytes(self):
        return binfmt.dumps("RECOGNZR", {"extractor": self.extractor_id},
                            {"mean": self.mean, "scale": self.scale, "weights": self.weights, "bias": self.bias})

    @classmethod
    def from_bytes(cls, data, forest=None):
        _, meta, a = binfmt.loads(data, "RECOGNZR")
        return cls(meta["extractor"], a["mean"], a["scale"], a["weights"], a["bias"],
                   get_extractor(meta["extractor"], forest))


def fit_linear_ovr(X, y, K, epochs=50, learning_rate=0.01, l2=1e-4, seed=0):
    """Hinge-loss SGD, one-vs-rest; returns ``(mean, scale, weights, bias)``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    Z = (X - mean) / scale
    n, F = Z.shape
    W = np.zeros((K, F))
    b = np.zeros(K)
    if K == 1:
        return mean, scale, W, b
    rng = np.random.default_rng(seed)
    T = np.where(y[:, None] == np.arange(K)[None, :], 1.0, -1.0)
    for _ in range(epochs):
        for i in rng.permutation(n):
            z = Z[i]
            t = T[i]
            active = t * (W @ z + b) < 1.0
            W *= 1.0 - learning_rate * l2
            W[active] += learning_rate * t[active, None] * z[None, :]
            b[active] += learning_rate * t[active]
    return mean, scale, W, b


def train_recognizer(images, cluster_ids, K, params, seed=0, forest=None):
    extractor = get_extractor(params.extractor, forest)
    X = np.stack([extractor(im) for im in images])
    mean, scale, W, b = fit_linear_ovr(X, cluster_ids, K, params.epochs, params.learning_rate, params.l2, seed)
    return ClusterRecognizer(params.extractor, mean, scale, W, b, extractor)


def predict_cluster(recognizer, image, stats=None):
    return recognizer.predict(image, stats)


# ---------------------------------------------------------------------------
# the decorrelated model
# ---------------------------------------------------------------------------

@dataclass
class DecorrelatedModel:
    assignment: ClusterAssignment
    recognizer: ClusterRecognizer
    specialists: list
    omega: np.ndarray = None
    psi: np.ndarray = None
    gathered: list = None

    @property
    def K(self):
        return self.assignment.K

    def save(self, directory, class_names=None, extra_meta=None):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "recognizer.bin").write_bytes(self.recognizer.to_bytes())
        for k, f in enumerate(self.specialists):
            f.save(d / ("specialist_%d.bin" % k))
        with open(d / "assignment.json", "w") as fh:
            json.dump(self.assignment.to_json(class_names), fh, indent=1, sort_keys=True)
        if self.omega is not None:
            np.savetxt(d / "omega.csv", self.omega, delimiter=",", fmt="%.10g")
        if self.psi is not None:
            np.savetxt(d / "psi.csv", self.psi, delimiter=",", fmt="%.10g")

    @classmethod
    def load(cls, directory, class_names=None, forest=None):
        d = Path(directory)
        with open(d / "assignment.json") as fh:
            doc = json.load(fh)
        names = class_names or sorted(doc["cluster_of"], key=int)
        assignment = ClusterAssignment(np.array([doc["cluster_of"][n] for n in names], dtype=np.int64), doc["K"])
        recognizer = ClusterRecognizer.from_bytes((d / "recognizer.bin").read_bytes(), forest)
        specialists = [TextonForest.load(d / ("specialist_%d.bin" % k)) for k in range(assignment.K)]
        omega = np.loadtxt(d / "omega.csv", delimiter=",", ndmin=2) if (d / "omega.csv").exists() else None
        psi = np.loadtxt(d / "psi.csv", delimiter=",", ndmin=2) if (d / "psi.csv").exists() else None
        return cls(assignment, recognizer, specialists, omega, psi)


def _seeds(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def train_dstf(images, labels, num_classes, stf_params=None, params=None, seed=0, void_id=255,
               temp_forest=None):
    """Full decorrelation pipeline; ``temp_forest`` may be supplied to skip retraining it."""
    stf_params = stf_params or StfParams()
    params = params or DstfParams()
    s_temp, s_rec, s_spec = _seeds(seed, 3)
    if temp_forest is None:
        temp_forest = train_stf(images, labels, num_classes, stf_params, s_temp, void_id, tag="temporary")
    obs = collect_leaf_observations(temp_forest)
    omega = class_correlation(obs)
    D = correlation_distance(omega)
    assignment = cluster_classes(D, params.min_members, params.linkage)
    psi = class_cooccurrence(labels, num_classes, void_id)
    gathered = gather_training_sets(assignment, psi, labels, params.cap_fraction, void_id)
    log.info("DSTF: %d clusters, gathered sizes %s", assignment.K, [len(g) for g in gathered])
    specialists = []
    for k, (idx, s) in enumerate(zip(gathered, _seeds(s_spec, assignment.K))):
        if not idx:
            raise ValueError("cluster %d received no training images" % k)
        specialists.append(train_stf([images[i] for i in idx], [labels[i] for i in idx], num_classes,
                                     stf_params, s, void_id, tag="specialist_%d" % k))
    rec_images, rec_targets = [], []
    for k, idx in enumerate(gathered):
        for i in idx:
            rec_images.append(images[i])
            rec_targets.append(k)
    recognizer = train_recognizer(rec_images, rec_targets, assignment.K, params, s_rec, temp_forest)
    return DecorrelatedModel(assignment, recognizer, specialists, omega, psi, gathered)


def dstf_classify_image(model, image, stats=None):
    """One recognizer call, then the chosen specialist's per-pixel distributions."""
    k = model.recognizer.predict(image, stats)
    return classify_image(model.specialists[k], image, stats)
