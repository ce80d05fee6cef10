"""Reader/writer for the LTSR v1 tensor file format.

Layout: ``b"LTSR"``, u8 version (1), u8 dtype code (1 = float64), u8 ndim,
ndim little-endian u32 dims, then the row-major little-endian payload.
"""
from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"LTSR"
VERSION = 1
DTYPE_F64 = 1


class LtsrError(ValueError):
    pass


def to_bytes(array) -> bytes:
    arr = np.array(array, dtype="<f8", order="C")  # ascontiguousarray would turn 0-d into 1-d
    if arr.ndim > 255:
        raise LtsrError("too many dimensions for LTSR")
    header = MAGIC + struct.pack("<BBB", VERSION, DTYPE_F64, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise LtsrError("not an LTSR file (bad magic)")
    version, dtype, ndim = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise LtsrError(f"unsupported LTSR version {version}")
    if dtype != DTYPE_F64:
        raise LtsrError(f"unsupported LTSR dtype code {dtype}")
    off = 7 + 4 * ndim
    if len(buf) < off:
        raise LtsrError("truncated LTSR header")
    shape = struct.unpack_from(f"<{ndim}I", buf, 7)
    count = int(np.prod(shape)) if ndim else 1
    if len(buf) != off + 8 * count:
        raise LtsrError(f"payload size {len(buf) - off} does not match shape {shape}")
    return np.frombuffer(buf, dtype="<f8", offset=off, count=count).reshape(shape).astype(np.float64)


def save(path: str | os.PathLike, array) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(array))


def load(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
