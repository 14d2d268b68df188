"""EMB1 binary sidecar format.

Layout: magic "EMB1", u32 record count, u32 dimension, then per record a
u32 index followed by `dim` little-endian f32 values. This matches the
consumer's embedding-file contract byte for byte.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import IoError

MAGIC = b"EMB1"


def write_embeddings(path, records: list[tuple[int, np.ndarray]]) -> None:
    dim = np.asarray(records[0][1]).size if records else 0
    try:
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<II", len(records), dim))
            for idx, vec in records:
                v = np.asarray(vec, dtype="<f4").ravel()
                if v.size != dim:
                    raise IoError(f"record dim {v.size} != header dim {dim}")
                f.write(struct.pack("<I", idx))
                f.write(v.tobytes())
    except OSError as e:
        raise IoError(str(e)) from e


def read_embeddings(path) -> list[tuple[int, np.ndarray]]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IoError(str(e)) from e
    if data[:4] != MAGIC:
        raise IoError("bad magic, not an EMB1 file")
    count, dim = struct.unpack_from("<II", data, 4)
    rec = 4 + 4 * dim
    if len(data) != 12 + count * rec:
        raise IoError("truncated embedding file")
    out, off = [], 12
    for _ in range(count):
        (idx,) = struct.unpack_from("<I", data, off)
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=off + 4).astype(np.float64)
        out.append((int(idx), vec))
        off += rec
    return out
