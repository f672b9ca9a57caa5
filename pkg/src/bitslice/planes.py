"""Sign-magnitude bit-plane decomposition of small signed integers.

Layout conventions used throughout the package:

* A bit plane is a dense C-contiguous ``uint8`` matrix of 0/1 values, so a
  row slab ``plane[r : r + m]`` is a cheap view.
* A ``k``-bit value is stored as one sign plane plus ``k - 1`` magnitude
  planes.  Plane ``b`` for ``b in 1 .. k-1`` holds magnitude bit
  ``2**(b - 1)``: plane 1 is the magnitude LSB and plane ``k - 1`` the MSB.
  Plane ``k`` is the sign plane, where 1 marks a negative value.
* ``value = (1 - 2 * sign) * sum_b plane_b * 2**(b - 1)``.  Zero keeps a
  sign bit of 0.

The only two's-complement input without a sign-magnitude counterpart is
``-2**(k-1)``; it saturates to ``-(2**(k-1) - 1)``.  Every other value
round-trips exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MIN_BITS = 2
_MAX_BITS = 16


@dataclass
class SignMagnitudeTensor:
    """A signed integer matrix stored as bit planes.

    ``magnitude[b - 1]`` is plane ``b`` (LSB first), ``sign`` is plane ``k``.
    """

    bit_width: int
    sign: np.ndarray
    magnitude: np.ndarray  # shape (bit_width - 1, rows, cols)

    @property
    def rows(self) -> int:
        return self.sign.shape[0]

    @property
    def cols(self) -> int:
        return self.sign.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.sign.shape

    def plane(self, b: int) -> np.ndarray:
        """Return plane ``b``: magnitudes for 1..k-1, the sign plane for k."""
        if not 1 <= b <= self.bit_width:
            raise ValueError(f"plane index {b} outside 1..{self.bit_width}")
        if b == self.bit_width:
            return self.sign
        return self.magnitude[b - 1]

    def magnitude_values(self) -> np.ndarray:
        weights = (1 << np.arange(self.bit_width - 1, dtype=np.int32))
        return np.tensordot(weights, self.magnitude.astype(np.int32), axes=([0], [0]))

    def values(self) -> np.ndarray:
        """Reassemble the signed integer matrix (int32)."""
        mag = self.magnitude_values()
        return np.where(self.sign == 1, -mag, mag).astype(np.int32)


def to_sign_magnitude(values: np.ndarray, bit_width: int = 8) -> SignMagnitudeTensor:
    """Decompose an integer matrix into sign-magnitude bit planes.

    ``-2**(k-1)`` saturates to ``-(2**(k-1) - 1)``; any value further out of
    the k-bit range is rejected.
    """
    if not _MIN_BITS <= bit_width <= _MAX_BITS:
        raise ValueError(f"bit_width {bit_width} outside {_MIN_BITS}..{_MAX_BITS}")
    arr = np.asarray(values)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("expected a non-empty 2-D integer matrix")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"expected an integer dtype, got {arr.dtype}")
    arr = arr.astype(np.int64)
    lo, hi = -(1 << (bit_width - 1)), (1 << (bit_width - 1)) - 1
    if arr.min() < lo or arr.max() > hi:
        raise ValueError(f"values outside the {bit_width}-bit range [{lo}, {hi}]")
    mag = np.minimum(np.abs(arr), hi)
    sign = (arr < 0).astype(np.uint8)
    shifts = np.arange(bit_width - 1, dtype=np.int64)[:, None, None]
    planes = ((mag[None, :, :] >> shifts) & 1).astype(np.uint8)
    return SignMagnitudeTensor(bit_width=bit_width, sign=sign, magnitude=planes)


def from_sign_magnitude(t: SignMagnitudeTensor) -> np.ndarray:
    """Inverse of :func:`to_sign_magnitude` (exact except the saturated input)."""
    return t.values()


def split_signed(t: SignMagnitudeTensor) -> tuple[SignMagnitudeTensor, SignMagnitudeTensor]:
    """Split into nonnegative positive/negative parts: ``values = P - N``.

    Both halves carry all-zero sign planes, so downstream plane arithmetic
    never has to reason about signs.
    """
    neg = t.sign.astype(bool)
    pos_mag = np.where(neg[None, :, :], 0, t.magnitude).astype(np.uint8)
    neg_mag = np.where(neg[None, :, :], t.magnitude, 0).astype(np.uint8)
    zero_sign = np.zeros_like(t.sign)
    pos = SignMagnitudeTensor(t.bit_width, zero_sign, pos_mag)
    neg_t = SignMagnitudeTensor(t.bit_width, zero_sign.copy(), neg_mag)
    return pos, neg_t


@dataclass
class SparsityReport:
    """Zero statistics of a sign-magnitude tensor at group size ``m``.

    ``per_plane_sparsity[b - 1]`` is the zero-bit fraction of plane ``b``
    (the sign plane included at index ``k - 1``).  ``avg_bit_sparsity``
    averages the magnitude planes only.  ``zero_group_rate[b - 1]`` is the
    fraction of all-zero m-bit column groups of plane ``b``.
    """

    m: int
    per_plane_sparsity: np.ndarray
    avg_bit_sparsity: float
    value_sparsity: float
    zero_group_rate: np.ndarray

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "per_plane_sr": [float(x) for x in self.per_plane_sparsity],
            "avg_bit_sparsity": float(self.avg_bit_sparsity),
            "value_sparsity": float(self.value_sparsity),
            "zero_group_rate": [float(x) for x in self.zero_group_rate],
        }


def sparsity_stats(t: SignMagnitudeTensor, m: int) -> SparsityReport:
    """Per-plane sparsity and all-zero group rates.

    ``m`` must divide the row count; this layer rejects rather than pads so
    the reported group statistics are never diluted by synthetic rows.
    """
    if m < 1:
        raise ValueError(f"group size m must be >= 1, got {m}")
    if t.rows % m != 0:
        raise ValueError(f"group size {m} does not divide {t.rows} rows")
    k = t.bit_width
    srs = np.empty(k, dtype=np.float64)
    p0 = np.empty(k, dtype=np.float64)
    slabs = t.rows // m
    for b in range(1, k + 1):
        plane = t.plane(b)
        srs[b - 1] = 1.0 - plane.mean()
        groups = plane.reshape(slabs, m, t.cols)
        p0[b - 1] = (groups.sum(axis=1) == 0).mean()
    values = t.magnitude_values()
    return SparsityReport(
        m=m,
        per_plane_sparsity=srs,
        avg_bit_sparsity=float(srs[: k - 1].mean()),
        value_sparsity=float((values == 0).mean()),
        zero_group_rate=p0,
    )


def gen_gaussian_weights(rows: int, cols: int, std: float = 0.02, seed: int = 42) -> np.ndarray:
    """Seeded Gaussian weight matrix (float64).

    Uses numpy's PCG64 generator; the same (rows, cols, std, seed) always
    yields byte-identical output, which the CLI relies on for reproducible
    interchange files.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be positive")
    if std <= 0:
        raise ValueError("std must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.normal(0.0, std, (rows, cols))
