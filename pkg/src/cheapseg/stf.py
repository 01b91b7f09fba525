"""Semantic texton forests: extremely randomized trees over raw patch tests.

Each split node applies one :class:`PatchTest` to the pixels around the pixel
being classified; each leaf stores a class distribution.  Trees are stored as
flat node arrays so that a whole image can be pushed through a tree with a
handful of vectorized gathers per level.
"""

import json
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from . import binfmt

KINDS = ("value", "sum", "diff", "absdiff")
VALUE, SUM, DIFF, ABSDIFF = range(4)


@dataclass(frozen=True)
class StfParams:
    patch_size: int = 21
    n_trees: int = 5
    max_depth: int = 10
    n_candidates: int = 400
    min_samples_leaf: int = 5
    stride: int = 3
    leaf_smoothing: float = 1.0

    def __post_init__(self):
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be a positive odd integer")
        if self.n_trees < 1:
            raise ValueError("need at least one tree")
        if self.max_depth < 0 or self.n_candidates < 1 or self.min_samples_leaf < 1 or self.stride < 1:
            raise ValueError("invalid forest parameters: %r" % (self,))
        if self.leaf_smoothing < 0:
            raise ValueError("leaf_smoothing must be >= 0")

    @property
    def radius(self):
        return self.patch_size // 2


@dataclass(frozen=True)
class PatchTest:
    kind: int
    dy1: int
    dx1: int
    c1: int
    dy2: int = 0
    dx2: int = 0
    c2: int = 0
    threshold: float = 0.0


@dataclass
class InferenceStats:
    """Call counters used to check the routing contract of the decorrelated model."""

    recognizer_calls: int = 0
    forest_calls: Counter = field(default_factory=Counter)
    pixel_inferences: Counter = field(default_factory=Counter)

    def record_forest(self, tag, n_pixels):
        self.forest_calls[tag] += 1
        self.pixel_inferences[tag] += n_pixels


def _gather(flat, base, H, W, ys, xs, dy, dx, c):
    yy = np.clip(ys + dy, 0, H - 1)
    xx = np.clip(xs + dx, 0, W - 1)
    return flat[base + (yy * W + xx) * 3 + c]


def _combine(kind, v1, v2):
    out = np.where(kind == SUM, v1 + v2, v1)
    out = np.where(kind == DIFF, v1 - v2, out)
    return np.where(kind == ABSDIFF, np.abs(v1 - v2), out)


def patch_feature(image, ys, xs, kind, dy1, dx1, c1, dy2, dx2, c2):
    """Feature values of (possibly per-pixel) patch tests, borders clamped."""
    img = np.asarray(image)
    H, W = img.shape[:2]
    flat = img.reshape(-1).astype(np.int32)
    v1 = _gather(flat, 0, H, W, ys, xs, dy1, dx1, c1)
    v2 = _gather(flat, 0, H, W, ys, xs, dy2, dx2, c2)
    return _combine(kind, v1, v2)


def eval_patch_test(image, center, test):
    """``True`` when the test's feature value at ``center = (y, x)`` exceeds its threshold."""
    y, x = center
    f = patch_feature(image, np.array([y]), np.array([x]), test.kind, test.dy1, test.dx1, test.c1,
                      test.dy2, test.dx2, test.c2)
    return bool(f[0] > test.threshold)


class TextonForest:
    """Trained forest; node arrays are concatenated across trees."""

    _FIELDS = ("kind", "dy1", "dx1", "c1", "dy2", "dx2", "c2", "threshold", "left", "right", "leaf")

    def __init__(self, params, num_classes, roots, nodes, leaf_dist, leaf_count, tag="stf"):
        self.params = params
        self.num_classes = num_classes
        self.roots = np.asarray(roots, dtype=np.int32)
        for name in self._FIELDS:
            setattr(self, name, np.asarray(nodes[name]))
        self.leaf_dist = np.asarray(leaf_dist, dtype=np.float64)
        self.leaf_count = np.asarray(leaf_count, dtype=np.int64)
        self.tag = tag

    @property
    def n_trees(self):
        return len(self.roots)

    @property
    def n_leaves(self):
        return len(self.leaf_dist)

    def tree_of_leaf(self):
        """Tree index for every global leaf id."""
        out = np.empty(self.n_leaves, dtype=np.int32)
        bounds = list(self.roots) + [len(self.left)]
        for t in range(self.n_trees):
            ids = self.leaf[bounds[t]:bounds[t + 1]]
            out[ids[ids >= 0]] = t
        return out

    # -- inference ---------------------------------------------------------

    def leaf_indices(self, image, ys=None, xs=None):
        """Global leaf id reached in every tree, shape ``(n_trees, n_pixels)``."""
        img = np.asarray(image)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError("expected an RGB image of shape (H, W, 3), got %s" % (img.shape,))
        H, W = img.shape[:2]
        if ys is None:
            yy, xx = np.mgrid[0:H, 0:W]
            ys, xs = yy.ravel(), xx.ravel()
        ys = np.asarray(ys, dtype=np.int64)
        xs = np.asarray(xs, dtype=np.int64)
        flat = img.reshape(-1).astype(np.int32)
        out = np.empty((self.n_trees, len(ys)), dtype=np.int64)
        for t, root in enumerate(self.roots):
            node = np.full(len(ys), root, dtype=np.int64)
            sel = np.arange(len(ys))
            while True:
                nd = node[sel]
                internal = self.left[nd] >= 0
                if not internal.all():
                    sel = sel[internal]
                    nd = nd[internal]
                if len(sel) == 0:
                    break
                py, px = ys[sel], xs[sel]
                v1 = _gather(flat, 0, H, W, py, px, self.dy1[nd], self.dx1[nd], self.c1[nd])
                v2 = _gather(flat, 0, H, W, py, px, self.dy2[nd], self.dx2[nd], self.c2[nd])
                f = _combine(self.kind[nd], v1, v2)
                node[sel] = np.where(f > self.threshold[nd], self.left[nd], self.right[nd])
            out[t] = self.leaf[node]
        return out

    def predict_coords(self, image, ys, xs):
        leaves = self.leaf_indices(image, ys, xs)
        acc = self.leaf_dist[leaves[0]].copy()
        for t in range(1, self.n_trees):
            acc += self.leaf_dist[leaves[t]]
        return acc / self.n_trees

    # -- persistence -------------------------------------------------------

    def to_arrays(self):
        arrays = {name: getattr(self, name) for name in self._FIELDS}
        arrays["roots"] = self.roots
        arrays["leaf_dist"] = self.leaf_dist
        arrays["leaf_count"] = self.leaf_count
        return arrays

    def meta(self):
        return {"params": asdict(self.params), "num_classes": self.num_classes, "tag": self.tag}

    def to_bytes(self):
        return binfmt.dumps("TEXTONF", self.meta(), self.to_arrays())

    @classmethod
    def from_parts(cls, meta, arrays):
        nodes = {name: arrays[name] for name in cls._FIELDS}
        return cls(StfParams(**meta["params"]), meta["num_classes"], arrays["roots"], nodes,
                   arrays["leaf_dist"], arrays["leaf_count"], meta.get("tag", "stf"))

    @classmethod
    def from_bytes(cls, data):
        _, meta, arrays = binfmt.loads(data, "TEXTONF")
        return cls.from_parts(meta, arrays)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_debug_dict(self):
        def node(i):
            if self.left[i] < 0:
                lid = int(self.leaf[i])
                return {"leaf": lid, "count": int(self.leaf_count[lid]),
                        "dist": [round(float(p), 6) for p in self.leaf_dist[lid]]}
            return {"test": {"kind": KINDS[self.kind[i]],
                             "a": [int(self.dy1[i]), int(self.dx1[i]), int(self.c1[i])],
                             "b": [int(self.dy2[i]), int(self.dx2[i]), int(self.c2[i])],
                             "threshold": float(self.threshold[i])},
                    "left": node(self.left[i]), "right": node(self.right[i])}
        return {"meta": self.meta(), "trees": [node(r) for r in self.roots]}

    def dump_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_debug_dict(), fh, indent=1)


def classify_pixel(forest, image, coord):
    """Class distribution at ``coord = (y, x)``: mean of the reached leaves."""
    y, x = coord
    return forest.predict_coords(image, np.array([y]), np.array([x]))[0]


def classify_image(forest, image, stats=None):
    """Per-pixel class distributions, shape ``(H, W, C)``."""
    H, W = np.asarray(image).shape[:2]
    if stats is not None:
        stats.record_forest(forest.tag, H * W)
    yy, xx = np.mgrid[0:H, 0:W]
    return forest.predict_coords(image, yy.ravel(), xx.ravel()).reshape(H, W, forest.num_classes)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

class _TrainingPixels:
    """All training images flattened into one buffer plus per-image geometry."""

    def __init__(self, images, labels, void_id):
        self.void_id = void_id
        self.flat = np.concatenate([np.asarray(im, dtype=np.int32).reshape(-1) for im in images])
        self.offsets = np.cumsum([0] + [im.size for im in images[:-1]])
        self.shapes = [im.shape[:2] for im in images]
        self.labels = labels

    def sample(self, stride, rng):
        """Non-void pixels on a stride grid with a random per-image phase."""
        base, hs, ws, ys, xs, ls = [], [], [], [], [], []
        for i, lab in enumerate(self.labels):
            H, W = self.shapes[i]
            oy, ox = (rng.integers(0, stride, size=2) if stride > 1 else (0, 0))
            sub = lab[oy::stride, ox::stride]
            yy, xx = np.nonzero(sub != self.void_id)
            n = len(yy)
            ys.append(yy * stride + oy)
            xs.append(xx * stride + ox)
            ls.append(sub[yy, xx])
            base.append(np.full(n, self.offsets[i], dtype=np.int64))
            hs.append(np.full(n, H, dtype=np.int64))
            ws.append(np.full(n, W, dtype=np.int64))
        cat = np.concatenate
        return (cat(base), cat(hs), cat(ws), cat(ys).astype(np.int64), cat(xs).astype(np.int64),
                cat(ls).astype(np.int64))


def _entropy(counts, total):
    safe = np.where(counts > 0, counts, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.log(np.where(total > 0, total, 1.0)) - (counts * np.log(safe)).sum(axis=-1) / np.where(total > 0, total, 1.0)
    return np.where(total > 0, h, 0.0)


class _TreeBuilder:
    def __init__(self, pixels, sample, params, num_classes, rng):
        self.flat = pixels.flat
        self.base, self.H, self.W, self.ys, self.xs, self.lab = sample
        self.params = params
        self.C = num_classes
        self.rng = rng
        self.onehot = np.zeros((len(self.lab), num_classes), dtype=np.float32)
        self.onehot[np.arange(len(self.lab)), self.lab] = 1.0
        self.nodes = {k: [] for k in TextonForest._FIELDS}
        self.leaf_counts = []

    def _new_node(self):
        for v in self.nodes.values():
            v.append(0)
        return len(self.nodes["left"]) - 1

    def _make_leaf(self, node, idx):
        counts = np.bincount(self.lab[idx], minlength=self.C)
        nodes = self.nodes
        nodes["left"][node] = -1
        nodes["right"][node] = -1
        nodes["leaf"][node] = len(self.leaf_counts)
        self.leaf_counts.append(counts)

    def _features(self, idx, tests):
        kind, dy1, dx1, c1, dy2, dx2, c2 = tests
        b, H, W, ys, xs = self.base[idx], self.H[idx], self.W[idx], self.ys[idx], self.xs[idx]
        v1 = _gather(self.flat, b, H, W, ys, xs, dy1[:, None], dx1[:, None], c1[:, None])
        v2 = _gather(self.flat, b, H, W, ys, xs, dy2[:, None], dx2[:, None], c2[:, None])
        return _combine(kind[:, None], v1, v2)

    def build(self, idx, depth):
        node = self._new_node()
        p = self.params
        n = len(idx)
        counts = np.bincount(self.lab[idx], minlength=self.C)
        if depth >= p.max_depth or n < 2 * p.min_samples_leaf or np.count_nonzero(counts) <= 1:
            self._make_leaf(node, idx)
            return node
        m, r, rng = p.n_candidates, p.radius, self.rng
        kind = rng.integers(0, 4, size=m)
        offs = rng.integers(-r, r + 1, size=(m, 4))
        chans = rng.integers(0, 3, size=(m, 2))
        u = rng.random(m)
        tests = (kind, offs[:, 0], offs[:, 1], chans[:, 0], offs[:, 2], offs[:, 3], chans[:, 1])

        onehot = self.onehot[idx]
        parent_h = _entropy(counts.astype(np.float64), float(n))
        best_gain, best = 0.0, None
        chunk = max(1, int(4_000_000 // max(n, 1)))
        for s in range(0, m, chunk):
            sl = slice(s, s + chunk)
            F = self._features(idx, tuple(a[sl] for a in tests))
            fmin, fmax = F.min(axis=1), F.max(axis=1)
            thr = fmin + u[sl] * (fmax - fmin)
            mask = F > thr[:, None]
            left = (mask.astype(np.float32) @ onehot).astype(np.float64)
            nl = left.sum(axis=1)
            nr = n - nl
            right = counts[None, :] - left
            gain = parent_h - (nl / n) * _entropy(left, nl) - (nr / n) * _entropy(right, nr)
            valid = (nl >= p.min_samples_leaf) & (nr >= p.min_samples_leaf)
            gain = np.where(valid, gain, -np.inf)
            j = int(np.argmax(gain))
            if gain[j] > best_gain + 1e-12:
                best_gain = float(gain[j])
                best = (s + j, float(thr[j]), mask[j])
        if best is None:
            self._make_leaf(node, idx)
            return node
        j, thr, go_left = best
        nodes = self.nodes
        for name, arr in zip(("kind", "dy1", "dx1", "c1", "dy2", "dx2", "c2"), tests):
            nodes[name][node] = int(arr[j])
        nodes["threshold"][node] = thr
        nodes["leaf"][node] = -1
        lchild = self.build(idx[go_left], depth + 1)
        rchild = self.build(idx[~go_left], depth + 1)
        nodes["left"][node] = lchild
        nodes["right"][node] = rchild
        return node


def tree_seeds(seed, n):
    """Independent per-tree generators derived from a master seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def train_stf(images, labels, num_classes, params=None, seed=0, void_id=255, tag="stf"):
    """Grow a texton forest on the non-void pixels of ``images``/``labels``."""
    params = params or StfParams()
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if not images:
        raise ValueError("no training images")
    labels = [np.asarray(l) for l in labels]
    if not any((l != void_id).any() for l in labels):
        raise ValueError("training labels are all void")
    for l in labels:
        bad = (l >= num_classes) & (l != void_id)
        if bad.any():
            raise ValueError("label value %d out of range" % int(l[bad][0]))
    pixels = _TrainingPixels(images, labels, void_id)
    roots, leaf_counts = [], []
    nodes = {k: [] for k in TextonForest._FIELDS}
    for rng in tree_seeds(seed, params.n_trees):
        sample = pixels.sample(params.stride, rng)
        if len(sample[-1]) == 0:
            sample = pixels.sample(1, rng)
        builder = _TreeBuilder(pixels, sample, params, num_classes, rng)
        builder.build(np.arange(len(sample[-1])), 0)
        offset = len(nodes["left"])
        leaf_off = len(leaf_counts)
        roots.append(offset)
        for name in TextonForest._FIELDS:
            vals = builder.nodes[name]
            if name in ("left", "right"):
                vals = [v + offset if v >= 0 else -1 for v in vals]
            elif name == "leaf":
                vals = [v + leaf_off if v >= 0 else -1 for v in vals]
            nodes[name].extend(vals)
        leaf_counts.extend(builder.leaf_counts)
    counts = np.array(leaf_counts, dtype=np.float64)
    smoothed = counts + params.leaf_smoothing
    leaf_dist = smoothed / smoothed.sum(axis=1, keepdims=True)
    dtypes = {"kind": np.int8, "dy1": np.int16, "dx1": np.int16, "c1": np.int8, "dy2": np.int16,
              "dx2": np.int16, "c2": np.int8, "threshold": np.float64, "left": np.int32,
              "right": np.int32, "leaf": np.int32}
    arrays = {k: np.array(v, dtype=dtypes[k]) for k, v in nodes.items()}
    return TextonForest(params, num_classes, roots, arrays, leaf_dist, counts.sum(axis=1).astype(np.int64), tag)
