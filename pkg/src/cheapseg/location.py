"""Location potentials: per-class frequency of normalized image positions.

Images are split by orientation (landscape when ``W >= H``, portrait
otherwise).  Each group keeps a ``G x G x C`` table; pixel ``(y, x)`` of a
``H x W`` image falls in cell ``(y * G // H, x * G // W)``.
"""

import csv
from pathlib import Path

import numpy as np

from . import binfmt

LANDSCAPE, PORTRAIT = 0, 1
GROUPS = ("landscape", "portrait")


def orientation(height, width):
    return LANDSCAPE if width >= height else PORTRAIT


def _cells(n, G):
    return np.minimum(np.arange(n) * G // n, G - 1)


class LocationPotentials:
    def __init__(self, grids, counts=None):
        self.grids = np.asarray(grids, dtype=np.float64)   # (2, G, G, C)
        self.counts = None if counts is None else np.asarray(counts, dtype=np.float64)
        if self.grids.ndim != 4 or self.grids.shape[0] != 2 or self.grids.shape[1] != self.grids.shape[2]:
            raise ValueError("location grids must have shape (2, G, G, C)")

    @property
    def G(self):
        return self.grids.shape[1]

    @property
    def num_classes(self):
        return self.grids.shape[3]

    def grid_for(self, height, width):
        return self.grids[orientation(height, width)]

    def to_bytes(self):
        arrays = {"grids": self.grids}
        if self.counts is not None:
            arrays["counts"] = self.counts
        return binfmt.dumps("LOCATION", {"G": self.G, "num_classes": self.num_classes}, arrays)

    @classmethod
    def from_bytes(cls, data):
        _, _, a = binfmt.loads(data, "LOCATION")
        return cls(a["grids"], a.get("counts"))

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())

    def dump_csv(self, directory, class_names=None):
        """One CSV per class: ``group,row,col,prob``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        names = class_names or [str(c) for c in range(self.num_classes)]
        paths = []
        for c, name in enumerate(names):
            p = d / ("location_%02d_%s.csv" % (c, name))
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["group", "row", "col", "prob"])
                for g, gname in enumerate(GROUPS):
                    for r in range(self.G):
                        for q in range(self.G):
                            w.writerow([gname, r, q, "%.10g" % self.grids[g, r, q, c]])
            paths.append(p)
        return paths


def train_location(labels, num_classes, grid_size=21, void_id=255, smoothing=1.0):
    """Count class occurrences per normalized cell, per orientation group."""
    if grid_size < 1:
        raise ValueError("grid size must be >= 1")
    if len(labels) == 0:
        raise ValueError("need at least one training label image")
    G = grid_size
    counts = np.zeros((2, G, G, num_classes))
    seen = [False, False]
    for lab in labels:
        lab = np.asarray(lab)
        H, W = lab.shape
        o = orientation(H, W)
        ok = lab != void_id
        if not ok.any():
            continue
        seen[o] = True
        cy = np.broadcast_to(_cells(H, G)[:, None], lab.shape)[ok]
        cx = np.broadcast_to(_cells(W, G)[None, :], lab.shape)[ok]
        flat = (cy * G + cx) * num_classes + lab[ok].astype(np.int64)
        counts[o] += np.bincount(flat, minlength=G * G * num_classes).reshape(G, G, num_classes)
    if not any(seen):
        raise ValueError("all training labels are void")
    for o in (LANDSCAPE, PORTRAIT):
        if not seen[o]:
            counts[o] = counts[1 - o].transpose(1, 0, 2)
    sm = counts + smoothing
    grids = sm / sm.sum(axis=3, keepdims=True)
    return LocationPotentials(grids, counts)


def lookup_location(pot, dims, coord, c=None):
    """Probability of class ``c`` (or the full distribution) at ``coord = (y, x)`` of an ``(H, W)`` image."""
    H, W = dims
    y, x = coord
    if not (0 <= y < H and 0 <= x < W):
        raise ValueError("coordinate %r outside a %dx%d image" % (coord, H, W))
    G = pot.G
    dist = pot.grid_for(H, W)[min(y * G // H, G - 1), min(x * G // W, G - 1)]
    return dist if c is None else float(dist[c])


def location_map(pot, height, width):
    """Per-pixel location distribution, shape ``(H, W, C)``."""
    grid = pot.grid_for(height, width)
    return grid[_cells(height, pot.G)[:, None], _cells(width, pot.G)[None, :]]
