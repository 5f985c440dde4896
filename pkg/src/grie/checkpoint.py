"""Binary checkpoint format for named parameter arrays.

Layout (all integers little-endian u32, floats little-endian f32):

    magic  b"GRIE1"
    count
    repeated count times:
        name_len, name (UTF-8), rank, extents[rank], values (row-major f32)

Entries are written in sorted name order so files are byte-reproducible.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"GRIE1"


def save_checkpoint(path, arrays: dict):
    """Write a name -> ndarray mapping; values are stored as float32."""
    chunks = [MAGIC, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict:
    """Read a checkpoint back into a name -> float32 ndarray mapping."""
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a GRIE1 checkpoint (bad magic {blob[:5]!r})")
    off = len(MAGIC)

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise ValueError(f"{path}: truncated checkpoint (needed {n} bytes at offset {off})")
        piece = blob[off : off + n]
        off += n
        return piece

    (count,) = struct.unpack("<I", take(4))
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        n_vals = int(np.prod(shape, dtype=np.int64)) if rank else 1
        values = np.frombuffer(take(4 * n_vals), dtype="<f4").reshape(shape)
        arrays[name] = values.astype(np.float32).copy()
    if off != len(blob):
        raise ValueError(f"{path}: {len(blob) - off} trailing bytes after last entry")
    return arrays
