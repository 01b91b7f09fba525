"""Image-level descriptors for the cluster recognizer and the image-level prior.

Two built-in extractors:

``color_grid``
    16-bin histogram per RGB channel (48 values) followed by the mean RGB of
    each cell of a 4x4 grid (48 values); L1-normalized, 96 dimensions.
``texton_color``
    normalized histogram of the leaves reached in a texton forest, averaged
    over trees, concatenated with ``color_grid``.  Needs the forest.
"""

import numpy as np

HIST_BINS = 16
GRID = 4


def color_grid_feature(image):
    img = np.asarray(image)
    H, W = img.shape[:2]
    npix = H * W
    hist = [np.bincount(img[..., c].ravel() // (256 // HIST_BINS), minlength=HIST_BINS) / npix
            for c in range(3)]
    ys = np.minimum(np.arange(H) * GRID // H, GRID - 1)
    xs = np.minimum(np.arange(W) * GRID // W, GRID - 1)
    cell = (ys[:, None] * GRID + xs[None, :]).ravel()
    counts = np.bincount(cell, minlength=GRID * GRID).astype(np.float64)
    counts[counts == 0] = 1.0
    means = [np.bincount(cell, weights=img[..., c].ravel().astype(np.float64), minlength=GRID * GRID)
             / counts / 255.0 for c in range(3)]
    vec = np.concatenate(hist + [np.stack(means, axis=1).ravel()])
    total = vec.sum()
    return vec / total if total > 0 else vec


class ColorGridExtractor:
    name = "color_grid"

    def __init__(self, forest=None):
        pass

    @property
    def dim(self):
        return 3 * HIST_BINS + 3 * GRID * GRID

    def __call__(self, image):
        return color_grid_feature(image)


class TextonColorExtractor:
    name = "texton_color"
    stride = 2

    def __init__(self, forest=None):
        if forest is None:
            raise ValueError("texton_color extractor needs a trained texton forest")
        self.forest = forest

    @property
    def dim(self):
        return self.forest.n_leaves + ColorGridExtractor().dim

    def __call__(self, image):
        img = np.asarray(image)
        H, W = img.shape[:2]
        yy, xx = np.mgrid[0:H:self.stride, 0:W:self.stride]
        leaves = self.forest.leaf_indices(img, yy.ravel(), xx.ravel())
        hist = np.bincount(leaves.ravel(), minlength=self.forest.n_leaves).astype(np.float64)
        hist /= hist.sum()
        return np.concatenate([hist, color_grid_feature(img)]) / 2.0


EXTRACTORS = {cls.name: cls for cls in (ColorGridExtractor, TextonColorExtractor)}


def get_extractor(name, forest=None):
    try:
        cls = EXTRACTORS[name]
    except KeyError:
        raise ValueError("unknown feature extractor %r (known: %s)" % (name, ", ".join(sorted(EXTRACTORS)))) from None
    return cls(forest)


def extract_global_feature(image, extractor="color_grid", forest=None):
    """Fixed-length descriptor of ``image``; ``extractor`` is an id or an extractor instance."""
    if isinstance(extractor, str):
        extractor = get_extractor(extractor, forest)
    return extractor(image)
