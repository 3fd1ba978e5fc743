"""Self-contained reader for the NVTF tensor container.

Layout (little-endian): magic "NVTF", u32 version (= 1), u8 dtype code
(0 = f32, 1 = f64, 2 = i64), u8 ndim, ndim u64 dims, then the row-major
payload. Kept independent of the producing side on purpose, so it doubles
as a cross-implementation check of the format.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"NVTF"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}


class TensorFormatError(ValueError):
    """Malformed NVTF input; `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def read_array(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {data[:4]!r}", 0)
    if len(data) < 10:
        raise TensorFormatError(f"{path}: truncated header", len(data))
    version, code, ndim = struct.unpack_from("<IBB", data, 4)
    if version != VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}", 4)
    if code not in DTYPES:
        raise TensorFormatError(f"{path}: unknown dtype code {code}", 8)
    offset = 10
    if len(data) < offset + 8 * ndim:
        raise TensorFormatError(f"{path}: truncated dims", len(data))
    dims = struct.unpack_from(f"<{ndim}Q", data, offset)
    offset += 8 * ndim
    dtype = DTYPES[code]
    count = 1
    for d in dims:
        count *= d
    if len(data) - offset != count * dtype.itemsize:
        raise TensorFormatError(
            f"{path}: payload is {len(data) - offset} bytes, expected {count * dtype.itemsize}",
            offset,
        )
    return np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(dims).copy()
