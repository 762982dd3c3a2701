"""Binary tensor records: magic "CFTN", version, dtype, dims, then payload.

Layout (all integers little-endian):

    bytes 0..3   magic b"CFTN"
    byte  4      version, currently 1
    byte  5      dtype code, 0 = float32 (the only serialized dtype)
    bytes 6..9   u32 ndim
    then         ndim x u32 dims
    then         row-major float32 payload, little-endian

Round-trips are bit-exact. Used for dataset media and checkpoint records.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import FormatError

MAGIC = b"CFTN"
VERSION = 1
DTYPE_F32 = 0

_HEADER = struct.Struct("<4sBBI")


def _read_exact(fh: BinaryIO, n: int, source: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"{source}: truncated tensor record (wanted {n} bytes, got {len(buf)})")
    return buf


def write_tensor(fh: BinaryIO, array: np.ndarray) -> None:
    """Write one tensor record to an open binary stream."""
    if array.dtype != np.float32:
        raise FormatError(f"tensor records store float32 only, got {array.dtype}")
    arr = np.ascontiguousarray(array)
    fh.write(_HEADER.pack(MAGIC, VERSION, DTYPE_F32, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.astype("<f4", copy=False).tobytes())


def read_tensor(fh: BinaryIO, source: str = "<stream>") -> np.ndarray:
    """Read one tensor record; raises FormatError naming the source on corruption."""
    magic, version, dtype_code, ndim = _HEADER.unpack(_read_exact(fh, _HEADER.size, source))
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported tensor record version {version}")
    if dtype_code != DTYPE_F32:
        raise FormatError(f"{source}: unsupported dtype code {dtype_code}")
    dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, source))
    count = 1
    for d in dims:
        count *= d
    payload = _read_exact(fh, 4 * count, source)
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32, copy=True)


def save_tensor(path: str | Path, array: np.ndarray) -> None:
    """Write a single-tensor file atomically (temp file, then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        write_tensor(fh, array)
    tmp.replace(path)


def load_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        arr = read_tensor(fh, source=path.name)
        trailing = fh.read(1)
    if trailing:
        raise FormatError(f"{path.name}: trailing bytes after tensor payload")
    return arr
