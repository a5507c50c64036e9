"""NCHW array helpers and the FDMT v1 binary tensor container.

Tensors are plain :class:`numpy.ndarray` objects (float32 or float64).
FDMT layout, little-endian::

    b"FDMT" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u16 reserved=0
    | u32 rank | rank x u32 dims | row-major scalars
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError

MAGIC = b"FDMT"
VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}
_HEADER = struct.Struct("<4sBBHI")


def as_nchw(x, name="x") -> np.ndarray:
    """Validate a 4-d float tensor with positive extents; returns it unchanged."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"{name} must be NCHW (rank 4), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension: {x.shape}")
    if x.dtype not in (np.float32, np.float64):
        raise ShapeError(f"{name} must be float32 or float64, got {x.dtype}")
    return x


def encode(x: np.ndarray) -> bytes:
    x = np.asarray(x)
    dt = x.dtype.newbyteorder("<")
    if dt not in _DTYPE_CODES:
        raise FormatError(f"FDMT stores float32/float64 only, got {x.dtype}")
    header = _HEADER.pack(MAGIC, VERSION, _DTYPE_CODES[dt], 0, x.ndim)
    dims = struct.pack(f"<{x.ndim}I", *x.shape)
    return header + dims + np.ascontiguousarray(x, dtype=dt).tobytes()


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated FDMT header")
    magic, version, code, reserved, rank = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported FDMT version {version}")
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    if reserved != 0:
        raise FormatError("reserved header field must be zero")
    offset = _HEADER.size + 4 * rank
    if len(buf) < offset:
        raise FormatError("truncated FDMT dims")
    dims = struct.unpack_from(f"<{rank}I", buf, _HEADER.size)
    dtype = _CODE_DTYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(buf) - offset != expected:
        raise FormatError(
            f"payload length {len(buf) - offset} does not match dims {dims} ({expected} bytes)")
    return np.frombuffer(buf, dtype=dtype, offset=offset).reshape(dims).astype(dtype.newbyteorder("="))


def save(path, x: np.ndarray) -> str:
    """Write ``x`` to ``path``; returns the sha256 of the written bytes."""
    data = encode(x)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def checksum(x: np.ndarray) -> str:
    return hashlib.sha256(encode(x)).hexdigest()
