"""Versioned little-endian binary envelope shared by every trained model file.

Layout::

    offset  size  field
    0       4     magic b"CSEG"
    4       2     format version (uint16, little-endian)
    6       2     reserved, zero
    8       8     kind tag, ASCII, NUL padded (e.g. b"TEXTONF\\0")
    16      4     header length N (uint32)
    20      N     UTF-8 JSON header: {"meta": {...}, "arrays": [{"name", "dtype", "shape"}, ...]}
    20+N    ...   raw array payloads, C order, in header order

All array dtypes are stored explicitly little-endian (``<f8``, ``<i4`` ...).
"""

import json
import struct

import numpy as np

MAGIC = b"CSEG"
VERSION = 1


class FormatError(ValueError):
    pass


def _le(arr):
    arr = np.ascontiguousarray(arr)
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False)


def dumps(kind, meta, arrays):
    """Serialize ``arrays`` (an ordered mapping name -> ndarray) plus ``meta``."""
    tag = kind.encode("ascii")
    if len(tag) > 8:
        raise ValueError("kind tag longer than 8 bytes: %r" % kind)
    converted = [(name, _le(a)) for name, a in arrays.items()]
    header = {
        "meta": meta,
        "arrays": [
            {"name": name, "dtype": a.dtype.str, "shape": list(a.shape)}
            for name, a in converted
        ],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<HH", VERSION, 0),
        tag.ljust(8, b"\0"),
        struct.pack("<I", len(hbytes)),
        hbytes,
    ]
    parts.extend(a.tobytes(order="C") for _, a in converted)
    return b"".join(parts)


def loads(data, kind=None):
    """Inverse of :func:`dumps`; returns ``(kind, meta, arrays)``."""
    if len(data) < 20 or data[:4] != MAGIC:
        raise FormatError("not a cheapseg model file (bad magic)")
    version, _ = struct.unpack_from("<HH", data, 4)
    if version != VERSION:
        raise FormatError("unsupported format version %d" % version)
    found = data[8:16].rstrip(b"\0").decode("ascii")
    if kind is not None and found != kind:
        raise FormatError("expected a %s file, found %s" % (kind, found))
    (hlen,) = struct.unpack_from("<I", data, 16)
    header = json.loads(data[20:20 + hlen].decode("utf-8"))
    pos = 20 + hlen
    arrays = {}
    for desc in header["arrays"]:
        dt = np.dtype(desc["dtype"])
        shape = tuple(desc["shape"])
        nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(data):
            raise FormatError("truncated payload for array %r" % desc["name"])
        arrays[desc["name"]] = np.frombuffer(data, dtype=dt, count=int(np.prod(shape, dtype=np.int64)),
                                             offset=pos).reshape(shape).astype(dt.newbyteorder("="))
        pos += nbytes
    return found, header["meta"], arrays


def save(path, kind, meta, arrays):
    with open(path, "wb") as fh:
        fh.write(dumps(kind, meta, arrays))


def load(path, kind=None):
    with open(path, "rb") as fh:
        return loads(fh.read(), kind)
