"""Image/label I/O, dataset manifests and the synthetic scene generator.

Images are ``(H, W, 3)`` uint8 arrays stored as binary PPM (P6); label images
are ``(H, W)`` uint8 arrays of class ids stored as binary PGM (P5), with the
void sentinel (255 by default) marking unlabeled pixels.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

VOID = 255
SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    """Raised for malformed manifests, rasters or label values."""


# ---------------------------------------------------------------------------
# raster I/O
# ---------------------------------------------------------------------------

def _read_netpbm(path, magic):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError("%s: truncated header" % path)
        tokens.append(data[start:pos])
    if tokens[0] != magic:
        raise DatasetError("%s: expected %s raster, found %r" % (path, magic.decode(), tokens[0]))
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DatasetError("%s: malformed header" % path) from None
    if width < 1 or height < 1:
        raise DatasetError("%s: empty raster" % path)
    if maxval != 255:
        raise DatasetError("%s: only maxval 255 is supported" % path)
    pos += 1  # single whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    count = width * height * channels
    payload = np.frombuffer(data, dtype=np.uint8, count=count, offset=pos) if len(data) - pos >= count else None
    if payload is None:
        raise DatasetError("%s: truncated pixel data" % path)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return payload.reshape(shape).copy()


def read_ppm(path):
    return _read_netpbm(path, b"P6")


def read_pgm(path):
    return _read_netpbm(path, b"P5")


def write_ppm(path, image):
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("RGB image must have shape (H, W, 3)")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(image).tobytes())


def write_pgm(path, labels):
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError("label image must be 2-D")
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ValueError("label values must fit in one byte")
    h, w = labels.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassSet:
    names: tuple
    void_id: int = VOID
    palette: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) < 2:
            raise DatasetError("need at least 2 classes, got %d" % len(self.names))
        if len(set(self.names)) != len(self.names):
            raise DatasetError("class names must be unique")
        if 0 <= self.void_id < len(self.names):
            raise DatasetError("void id %d collides with a class id" % self.void_id)
        if self.palette is not None:
            pal = tuple(tuple(int(v) for v in rgb) for rgb in self.palette)
            if len(pal) != len(self.names):
                raise DatasetError("palette needs one colour per class")
            object.__setattr__(self, "palette", pal)

    @property
    def count(self):
        return len(self.names)

    def colors(self):
        """Palette as a (C, 3) uint8 array; falls back to a tab20 colour cycle."""
        if self.palette is not None:
            return np.array(self.palette, dtype=np.uint8)
        from matplotlib import colormaps

        cmap = colormaps["tab20"]
        return np.array([[int(255 * v) for v in cmap(i % 20)[:3]] for i in range(self.count)],
                        dtype=np.uint8)


@dataclass(frozen=True)
class Entry:
    image: str
    labels: str
    split: str
    category: int = None


@dataclass
class DatasetManifest:
    entries: list
    class_set: ClassSet
    root: Path = field(default_factory=Path)

    @property
    def num_classes(self):
        return self.class_set.count

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def image_path(self, entry):
        return self.root / entry.image

    def label_path(self, entry):
        return self.root / entry.labels

    def load(self, entry):
        return read_ppm(self.image_path(entry)), read_pgm(self.label_path(entry))

    def load_split(self, name):
        """Return ``(images, labels)`` lists for one split."""
        pairs = [self.load(e) for e in self.split(name)]
        return [p[0] for p in pairs], [p[1] for p in pairs]

    def to_json(self):
        doc = {
            "classes": list(self.class_set.names),
            "void": self.class_set.void_id,
            "entries": [],
        }
        if self.class_set.palette is not None:
            doc["palette"] = [list(c) for c in self.class_set.palette]
        for e in self.entries:
            item = {"image": e.image, "labels": e.labels, "split": e.split}
            if e.category is not None:
                item["category"] = e.category
            doc["entries"].append(item)
        return doc


def write_manifest(manifest, path):
    with open(path, "w") as fh:
        json.dump(manifest.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def check_pair(image, labels, num_classes, void_id=VOID, name="<memory>"):
    if image.ndim != 3 or image.shape[2] != 3:
        raise DatasetError("%s: image must be RGB" % name)
    if labels.shape != image.shape[:2]:
        raise DatasetError("%s: label size %s does not match image size %s"
                           % (name, labels.shape[::-1], image.shape[1::-1]))
    bad = (labels >= num_classes) & (labels != void_id)
    if bad.any():
        raise DatasetError("%s: label value %d outside [0, %d) and not void"
                           % (name, int(labels[bad][0]), num_classes))


def load_dataset(manifest_path, validate=True):
    """Parse and validate a JSON manifest.

    Every referenced raster is decoded once when ``validate`` is true so that
    missing files, size mismatches and out-of-range labels fail early.
    """
    manifest_path = Path(manifest_path)
    try:
        with open(manifest_path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise DatasetError("manifest not found: %s" % manifest_path) from None
    except json.JSONDecodeError as exc:
        raise DatasetError("%s: invalid JSON (%s)" % (manifest_path, exc)) from None
    for key in ("classes", "entries"):
        if key not in doc:
            raise DatasetError("%s: missing key %r" % (manifest_path, key))
    class_set = ClassSet(doc["classes"], int(doc.get("void", VOID)), doc.get("palette"))
    entries = []
    for item in doc["entries"]:
        split = item.get("split", "train")
        if split not in SPLITS:
            raise DatasetError("unknown split tag %r" % split)
        entries.append(Entry(item["image"], item["labels"], split, item.get("category")))
    if not entries:
        raise DatasetError("%s: empty dataset" % manifest_path)
    manifest = DatasetManifest(entries, class_set, manifest_path.parent)
    if validate:
        for e in entries:
            for p in (manifest.image_path(e), manifest.label_path(e)):
                if not p.is_file():
                    raise DatasetError("missing file: %s" % p)
            image, labels = manifest.load(e)
            check_pair(image, labels, class_set.count, class_set.void_id, name=str(manifest.label_path(e)))
    return manifest


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

PATTERNS = ("flat", "stripes", "checker", "noise")


@dataclass(frozen=True)
class Appearance:
    color: tuple
    pattern: str = "flat"
    amplitude: int = 0
    period: int = 4
    jitter: int = 0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise DatasetError("unknown texture pattern %r" % self.pattern)


@dataclass(frozen=True)
class Category:
    name: str
    classes: tuple
    # probability that each class (by position) appears in an image; 1.0 if omitted
    presence: tuple = None


@dataclass(frozen=True)
class SynthSpec:
    appearances: dict          # class name -> Appearance, insertion order = class id
    categories: tuple
    n_train: int = 8
    n_val: int = 0
    n_test: int = 0
    width: int = 64
    height: int = 64
    layout: str = "strips"     # "strips": random guillotine cuts; "bands": fixed top-to-bottom order
    portrait_fraction: float = 0.0
    band_jitter: float = 0.25
    void_border: int = 0

    @property
    def class_names(self):
        return tuple(self.appearances)


def render_texture(app, ys, xs, rng):
    """Pixel values of appearance ``app`` at absolute coordinates ``(ys, xs)``."""
    base = np.array(app.color, dtype=np.int32)
    out = np.broadcast_to(base, ys.shape + (3,)).copy()
    if app.pattern == "stripes":
        sign = np.where((xs // app.period) % 2 == 0, 1, -1)
        out += app.amplitude * sign[..., None]
    elif app.pattern == "checker":
        sign = np.where(((xs // app.period) + (ys // app.period)) % 2 == 0, 1, -1)
        out += app.amplitude * sign[..., None]
    elif app.pattern == "noise":
        out += rng.integers(-app.amplitude, app.amplitude + 1, size=out.shape)
    if app.jitter:
        out += rng.integers(-app.jitter, app.jitter + 1, size=out.shape)
    return np.clip(out, 0, 255).astype(np.uint8)


def _strip_layout(present, h, w, rng):
    labels = np.empty((h, w), dtype=np.uint8)
    order = list(rng.permutation(present))
    shares = rng.uniform(0.6, 1.4, size=len(order))
    y0, y1, x0, x1 = 0, h, 0, w
    remaining = shares.sum()
    for k, cls in enumerate(order):
        if k == len(order) - 1:
            labels[y0:y1, x0:x1] = cls
            break
        frac = float(np.clip(shares[k] / remaining, 0.15, 0.85))
        remaining -= shares[k]
        if rng.random() < 0.5 and (y1 - y0) >= 2:
            cut = y0 + max(1, min(y1 - y0 - 1, int(round(frac * (y1 - y0)))))
            labels[y0:cut, x0:x1] = cls
            y0 = cut
        elif (x1 - x0) >= 2:
            cut = x0 + max(1, min(x1 - x0 - 1, int(round(frac * (x1 - x0)))))
            labels[y0:y1, x0:cut] = cls
            x0 = cut
        else:
            cut = y0 + max(1, min(y1 - y0 - 1, int(round(frac * (y1 - y0)))))
            labels[y0:cut, x0:x1] = cls
            y0 = cut
    return labels


def _band_layout(present, h, w, rng, jitter):
    # present is ordered by palette position: first class on top
    m = len(present)
    weights = 1.0 + rng.uniform(-jitter, jitter, size=m)
    edges = np.concatenate([[0.0], np.cumsum(weights) / weights.sum()])
    rows = np.minimum((edges * h).round().astype(int), h)
    labels = np.empty((h, w), dtype=np.uint8)
    for k, cls in enumerate(present):
        labels[rows[k]:rows[k + 1], :] = cls
    labels[rows[-2]:, :] = present[-1]
    return labels


def _carve_void(labels, width):
    if width <= 0:
        return labels
    out = labels.copy()
    h, w = labels.shape
    edge = np.zeros((h, w), dtype=bool)
    edge[:, 1:] |= labels[:, 1:] != labels[:, :-1]
    edge[1:, :] |= labels[1:, :] != labels[:-1, :]
    ys, xs = np.nonzero(edge)
    for dy in range(-(width // 2), width - width // 2):
        for dx in range(-(width // 2), width - width // 2):
            out[np.clip(ys + dy, 0, h - 1), np.clip(xs + dx, 0, w - 1)] = VOID
    return out


def _validate_spec(spec):
    names = spec.class_names
    if len(names) < 2:
        raise DatasetError("synthetic spec needs at least 2 classes")
    if not spec.categories:
        raise DatasetError("synthetic spec needs at least 1 scene category")
    for cat in spec.categories:
        if len(cat.classes) < 1:
            raise DatasetError("category %r has no classes" % cat.name)
        for c in cat.classes:
            if c not in spec.appearances:
                raise DatasetError("category %r uses unknown class %r" % (cat.name, c))
        if cat.presence is not None and len(cat.presence) != len(cat.classes):
            raise DatasetError("category %r: presence needs one probability per class" % cat.name)
    used = {c for cat in spec.categories for c in cat.classes}
    if len(used) < 2:
        raise DatasetError("synthetic spec must place at least 2 distinct classes")
    if spec.layout not in ("strips", "bands"):
        raise DatasetError("unknown layout %r" % spec.layout)


def synthesize(spec, seed):
    """Generate ``(images, labels, splits, categories)`` in memory."""
    _validate_spec(spec)
    rng = np.random.default_rng(seed)
    names = spec.class_names
    ids = {n: i for i, n in enumerate(names)}
    K = len(spec.categories)
    seen = [0] * K
    images, labels, splits, cats = [], [], [], []
    for split, count in zip(SPLITS, (spec.n_train, spec.n_val, spec.n_test)):
        for j in range(count):
            k = j % K
            cat = spec.categories[k]
            t = seen[k]
            seen[k] += 1
            probs = cat.presence or (1.0,) * len(cat.classes)
            draw = rng.random(len(cat.classes))
            present = [ids[c] for c, p, u in zip(cat.classes, probs, draw) if u < p]
            forced = ids[cat.classes[t % len(cat.classes)]]
            if forced not in present:
                present.append(forced)
            present = [ids[c] for c in cat.classes if ids[c] in present]
            h, w = spec.height, spec.width
            if rng.random() < spec.portrait_fraction:
                h, w = w, h
            if spec.layout == "bands":
                lab = _band_layout(present, h, w, rng, spec.band_jitter)
            else:
                lab = _strip_layout(np.array(present), h, w, rng)
            ys, xs = np.mgrid[0:h, 0:w]
            img = np.zeros((h, w, 3), dtype=np.uint8)
            for cls in present:
                mask = lab == cls
                img[mask] = render_texture(spec.appearances[names[cls]], ys[mask], xs[mask], rng)
            images.append(img)
            labels.append(_carve_void(lab, spec.void_border))
            splits.append(split)
            cats.append(k)
    return images, labels, splits, cats


def generate_synthetic(spec, seed, out_dir):
    """Render a synthetic dataset into ``out_dir`` and return its manifest."""
    images, labels, splits, cats = synthesize(spec, seed)
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (img, lab, split, k) in enumerate(zip(images, labels, splits, cats)):
        stem = "%s_%04d" % (split, i)
        write_ppm(out_dir / "images" / (stem + ".ppm"), img)
        write_pgm(out_dir / "labels" / (stem + ".pgm"), lab)
        entries.append(Entry("images/%s.ppm" % stem, "labels/%s.pgm" % stem, split, k))
    palette = tuple(tuple(a.color) for a in spec.appearances.values())
    manifest = DatasetManifest(entries, ClassSet(spec.class_names, VOID, palette), out_dir)
    write_manifest(manifest, out_dir / "manifest.json")
    return manifest


def spec_to_json(spec):
    return {
        "appearances": {n: {"color": list(a.color), "pattern": a.pattern, "amplitude": a.amplitude,
                            "period": a.period, "jitter": a.jitter}
                        for n, a in spec.appearances.items()},
        "categories": [{"name": c.name, "classes": list(c.classes),
                        "presence": None if c.presence is None else list(c.presence)}
                       for c in spec.categories],
        "n_train": spec.n_train, "n_val": spec.n_val, "n_test": spec.n_test,
        "width": spec.width, "height": spec.height, "layout": spec.layout,
        "portrait_fraction": spec.portrait_fraction, "band_jitter": spec.band_jitter,
        "void_border": spec.void_border,
    }


def spec_from_json(doc):
    doc = dict(doc)
    apps = {n: Appearance(tuple(a["color"]), a.get("pattern", "flat"), a.get("amplitude", 0),
                          a.get("period", 4), a.get("jitter", 0))
            for n, a in doc.pop("appearances").items()}
    cats = tuple(Category(c["name"], tuple(c["classes"]),
                          None if c.get("presence") is None else tuple(c["presence"]))
                 for c in doc.pop("categories"))
    try:
        return SynthSpec(apps, cats, **doc)
    except TypeError as exc:
        raise DatasetError("bad synthetic spec: %s" % exc) from None


def void_mask(labels, void_id=VOID):
    return np.asarray(labels) == void_id

