"""Two-state run/group codec for weight bit planes.

A plane is serialized as a stream of group symbols.  Each m-bit column group
(the same m-row slabs the kernels use) becomes either a single ``0`` control
bit when the whole group is zero, or a ``1`` control bit followed by the m
group bits with the slab's top row first.  Groups are visited slab by slab,
left to right within a slab, so a stream can be cut on column boundaries and
every segment decoded on its own.

Encoded size is ``z + (g - z) * (m + 1)`` bits for ``g`` groups of which
``z`` are zero, against ``g * m`` raw bits, so compression wins exactly when
the zero-group rate exceeds ``1 / m``.

Decoding walks the positions of set bits, which lets runs of zero symbols be
skipped in bulk instead of bit by bit.  A non-canonical ``1`` control bit
with an all-zero payload decodes to a zero group; the encoder never emits
it, but tolerating it keeps the decoder a pure function of stream content.
"""

from __future__ import annotations

import numpy as np

from .errors import CorruptStreamError
from .gemm import group_keys

_MAX_GROUP = 16


def _check_plane(plane: np.ndarray, m: int) -> np.ndarray:
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise ValueError(f"expected a 2-D bit plane, got shape {plane.shape}")
    if not 1 <= m <= _MAX_GROUP:
        raise ValueError(f"group size m must be in 1..{_MAX_GROUP}, got {m}")
    if plane.shape[0] % m != 0:
        raise ValueError(f"group size {m} does not divide {plane.shape[0]} rows")
    return plane.astype(np.uint8)


def encode_plane(plane: np.ndarray, m: int) -> tuple[bytes, int]:
    """Encode a bit plane; returns ``(payload, bit_length)``.

    The payload is padded to a whole byte with zero bits; ``bit_length`` is
    the exact stream length the decoder must consume.
    """
    plane = _check_plane(plane, m)
    keys = group_keys(plane, m).ravel()
    lengths = np.where(keys == 0, 1, m + 1)
    total = int(lengths.sum())
    starts = np.empty_like(lengths)
    starts[0] = 0
    np.cumsum(lengths[:-1], out=starts[1:])
    bits = np.zeros(total, dtype=np.uint8)
    nz = np.flatnonzero(keys)
    bits[starts[nz]] = 1
    for i in range(m):
        bits[starts[nz] + 1 + i] = (keys[nz] >> (m - 1 - i)) & 1
    return np.packbits(bits).tobytes(), total


def _decode_keys(bits: np.ndarray, m: int, expected: int) -> np.ndarray:
    length = bits.shape[0]
    ones = np.flatnonzero(bits)
    n_ones = ones.shape[0]
    keys = np.zeros(expected, dtype=np.int64)
    weights = (1 << (m - 1 - np.arange(m, dtype=np.int64)))
    pos = 0
    g = 0
    oi = 0
    while True:
        while oi < n_ones and ones[oi] < pos:
            oi += 1
        nxt = int(ones[oi]) if oi < n_ones else length
        run = nxt - pos
        if g + run > expected:
            raise CorruptStreamError("more group symbols than the segment declares")
        g += run
        pos = nxt
        if pos == length:
            break
        if g == expected:
            raise CorruptStreamError("trailing bits after the last group")
        if pos + 1 + m > length:
            raise CorruptStreamError("control bit with a truncated payload")
        keys[g] = int(bits[pos + 1 : pos + 1 + m] @ weights)
        g += 1
        pos += 1 + m
    if g != expected:
        raise CorruptStreamError(f"stream ended after {g} of {expected} groups")
    return keys


def decode_plane(data: bytes, bit_length: int, rows: int, cols: int, m: int) -> np.ndarray:
    """Decode :func:`encode_plane` output back into an ``(rows, cols)`` plane."""
    if not 1 <= m <= _MAX_GROUP:
        raise ValueError(f"group size m must be in 1..{_MAX_GROUP}, got {m}")
    if rows < 1 or cols < 1 or rows % m != 0:
        raise ValueError(f"bad plane shape ({rows}, {cols}) for group size {m}")
    if bit_length < 0 or len(data) * 8 < bit_length:
        raise CorruptStreamError(
            f"{len(data)} payload bytes cannot hold {bit_length} bits"
        )
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=bit_length)
    slabs = rows // m
    keys = _decode_keys(bits, m, slabs * cols).reshape(slabs, 1, cols)
    shifts = (m - 1 - np.arange(m, dtype=np.int64)).reshape(1, m, 1)
    return ((keys >> shifts) & 1).astype(np.uint8).reshape(rows, cols)


def pack_plane_raw(plane: np.ndarray, m: int) -> tuple[bytes, int]:
    """Store a plane uncompressed, m bits per group in stream traversal order.

    Using the same slab/column traversal as :func:`encode_plane` keeps raw
    and compressed segments interchangeable units of the container.
    """
    plane = _check_plane(plane, m)
    rows, cols = plane.shape
    grouped = plane.reshape(rows // m, m, cols).transpose(0, 2, 1).ravel()
    return np.packbits(grouped).tobytes(), rows * cols


def unpack_plane_raw(data: bytes, bit_length: int, rows: int, cols: int, m: int) -> np.ndarray:
    if not 1 <= m <= _MAX_GROUP:
        raise ValueError(f"group size m must be in 1..{_MAX_GROUP}, got {m}")
    if rows < 1 or cols < 1 or rows % m != 0:
        raise ValueError(f"bad plane shape ({rows}, {cols}) for group size {m}")
    if bit_length != rows * cols:
        raise CorruptStreamError(
            f"raw segment holds {bit_length} bits, expected {rows * cols}"
        )
    if len(data) * 8 < bit_length:
        raise CorruptStreamError(
            f"{len(data)} payload bytes cannot hold {bit_length} bits"
        )
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=bit_length)
    grouped = bits.reshape(rows // m, cols, m).transpose(0, 2, 1)
    return np.ascontiguousarray(grouped.reshape(rows, cols))


def compression_policy(plane: np.ndarray, threshold: float = 0.65) -> bool:
    """Compress a plane only when its zero-bit fraction exceeds ``threshold``.

    Near the 50% sparsity of dense low-order planes the two-state stream is
    larger than raw storage, so those planes are kept verbatim.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    plane = np.asarray(plane)
    return float(1.0 - plane.mean()) > threshold


def model_compression_ratio(p0: float, m: int) -> float:
    """Expected raw/encoded size ratio for zero-group rate ``p0``.

    ``m / (p0 + (1 - p0) * (m + 1))``; greater than 1 exactly when ``p0``
    exceeds ``1 / m``.
    """
    if not 0.0 <= p0 <= 1.0:
        raise ValueError(f"zero-group rate must be in [0, 1], got {p0}")
    if not 1 <= m <= _MAX_GROUP:
        raise ValueError(f"group size m must be in 1..{_MAX_GROUP}, got {m}")
    return m / (p0 + (1.0 - p0) * (m + 1))


def measured_compression_ratio(plane: np.ndarray, m: int) -> float:
    """Raw grouped bits over actual encoded bits for one plane."""
    _, nbits = encode_plane(plane, m)
    return plane.size / nbits
