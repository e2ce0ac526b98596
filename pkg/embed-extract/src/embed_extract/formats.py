"""LMPE0001 embedding binary: magic, u32 N, u32 d', then f32 LE row-major.

Deliberately self-contained: the extractor and the consumer toolkit share
the byte layout, not code.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

EMBEDDING_MAGIC = b"LMPE0001"


def write_embedding_file(values: np.ndarray, path: str | Path) -> None:
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"embedding matrix must be 2-D, got shape {arr.shape}")
    n, d = arr.shape
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<II", n, d))
        fh.write(arr.tobytes())


def read_embedding_file(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != EMBEDDING_MAGIC:
        raise DataError(f"{path}: not an LMPE0001 embedding file")
    n, d = struct.unpack("<II", data[8:16])
    expected = 16 + 4 * n * d
    if len(data) != expected:
        raise DataError(
            f"{path}: truncated embedding file (expected {expected} bytes, got {len(data)})"
        )
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(n, d).copy()
