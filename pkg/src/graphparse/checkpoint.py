"""Flat binary checkpoint files: parameter name -> shape -> float64 buffer.

Layout (all integers little-endian unsigned):

    magic   4 bytes  b"GPCK"
    version u32      currently 1
    count   u32      number of entries
    entry*  count times:
        name_len u16, name utf-8
        ndim     u8,  dims u32 * ndim
        payload  float64 little-endian, prod(dims) values

Round-trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"GPCK"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class Truncated(CheckpointError):
    pass


def save_checkpoint(path, arrays):
    """Write a name -> numpy array mapping; insertion order is preserved."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(arr).astype("<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into an ordered name -> float64 array dict."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagic(f"not a checkpoint file: magic {blob[:4]!r} != {MAGIC!r}")
    pos = 4

    def take(n, what):
        nonlocal pos
        if pos + n > len(blob):
            raise Truncated(f"checkpoint truncated while reading {what}")
        piece = blob[pos:pos + n]
        pos += n
        return piece

    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {VERSION}")
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1, "rank"))
        dims = tuple(struct.unpack("<I", take(4, "dims"))[0] for _ in range(ndim))
        n = int(np.prod(dims, dtype=np.int64)) if dims else 1
        payload = take(8 * n, f"payload of {name}")
        out[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    return out
