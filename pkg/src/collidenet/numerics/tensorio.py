"""CNT1 binary tensor files.

Layout: magic ``b"CNT1"``, uint32 rank, ``rank`` uint32 extents, then the
row-major payload as little-endian float32.  All integers little-endian.
Loading widens to float64.
"""
from __future__ import annotations

import io
import os
import struct

import numpy as np

from ..errors import LoadError

MAGIC = b"CNT1"


def encode_tensor(array) -> bytes:
    arr = np.asarray(array)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def decode_tensor(blob: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one tensor starting at ``offset``; return it and the end offset."""
    if blob[offset : offset + 4] != MAGIC:
        raise LoadError("not a CNT1 tensor (bad magic)")
    pos = offset + 4
    try:
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", blob, pos)
    except struct.error as exc:
        raise LoadError("truncated CNT1 header") from exc
    pos += 4 * rank
    if any(s == 0 for s in shape):
        raise LoadError("CNT1 extents must be positive")
    count = int(np.prod(shape)) if rank else 1
    end = pos + 4 * count
    if end > len(blob):
        raise LoadError("truncated CNT1 payload")
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).astype(np.float64)
    return data.reshape(shape), end


def save_tensor(path: str | os.PathLike, array) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(array))


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    arr, end = decode_tensor(blob)
    if end != len(blob):
        raise LoadError(f"{path}: trailing bytes after CNT1 payload")
    return arr
