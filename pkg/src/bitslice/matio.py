"""Raw matrix interchange files.

The CLI passes matrices between subcommands in a tiny fixed-layout binary
format: a 9-byte little-endian header ``rows:u32 cols:u32 dtype:u8`` followed
by the row-major payload.  Dtype tags: 1 = int8, 2 = float32.  There is no
magic string; the format is only meant for trusted local pipelines.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CorruptContainerError

_HEADER = struct.Struct("<IIB")

_TAG_TO_DTYPE = {1: np.dtype(np.int8), 2: np.dtype(np.float32)}
_DTYPE_TO_TAG = {v: k for k, v in _TAG_TO_DTYPE.items()}


def write_matrix(path: str, matrix: np.ndarray) -> None:
    arr = np.ascontiguousarray(matrix)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
    if arr.dtype not in _DTYPE_TO_TAG:
        raise ValueError(f"unsupported dtype {arr.dtype}; use int8 or float32")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(arr.shape[0], arr.shape[1], _DTYPE_TO_TAG[arr.dtype]))
        fh.write(arr.tobytes())


def read_matrix(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise CorruptContainerError(f"{path}: shorter than the matrix header")
    rows, cols, tag = _HEADER.unpack_from(raw)
    dtype = _TAG_TO_DTYPE.get(tag)
    if dtype is None:
        raise CorruptContainerError(f"{path}: unknown dtype tag {tag}")
    expect = _HEADER.size + rows * cols * dtype.itemsize
    if len(raw) != expect:
        raise CorruptContainerError(
            f"{path}: payload is {len(raw) - _HEADER.size} bytes, "
            f"expected {expect - _HEADER.size}"
        )
    data = np.frombuffer(raw, dtype=dtype, offset=_HEADER.size)
    return data.reshape(rows, cols).copy()
