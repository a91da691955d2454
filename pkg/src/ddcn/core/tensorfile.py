"""Portable tensor files: ``DDCT`` magic, u32 version/ndim/dims, little-endian f32 payload."""
from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from ddcn.errors import CorruptFileError

MAGIC = b"DDCT"
VERSION = 1


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    head = MAGIC + struct.pack("<II", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CorruptFileError(f"truncated {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def read_tensor(fh: BinaryIO) -> np.ndarray:
    """Read one DDCT record; values are promoted to float64."""
    magic = _read_exact(fh, 4, "tensor magic")
    if magic != MAGIC:
        raise CorruptFileError(f"bad tensor magic {magic!r}")
    version, ndim = struct.unpack("<II", _read_exact(fh, 8, "tensor header"))
    if version != VERSION:
        raise CorruptFileError(f"unsupported tensor version {version}")
    dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "tensor dims"))
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    payload = _read_exact(fh, 4 * count, "tensor payload")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)


def save_tensor(arr, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        arr = read_tensor(fh)
        if fh.read(1):
            raise CorruptFileError(f"{path}: trailing bytes after tensor")
    return arr
