"""Analytic operation-count models and the group-size design sweep.

The closed-form models estimate additions for one k-bit GEMV over an H-wide
layer at average magnitude-plane sparsity ``bs`` and value sparsity ``vs``:

* merged kernel, per m-row slab pass: ``k * (H * (1 - bs) + m * 2**(m-1))``
  (merge work on nonzero bits plus the fixed reconstruction ceiling);
* merged kernel, whole matrix: ``k * H**2 / m * (1 - bs) + k * H * 2**(m-1)``;
* plain bit-serial: ``k * H * m * (1 - bs)``;
* value-sparsity skipping: ``k * H * m * (1 - vs)`` by default.  Work scales
  with the values that are present, so the sparsity enters as ``1 - vs``;
  the complementary form ``k * H * m * vs`` is available behind
  ``literal_sparsity=True`` for comparison.

``dse_sweep`` puts the models next to ground truth for a concrete weight
tensor: exact addition counts from two independent routes (the kernel's
bucket counters and a sort-based recount) plus modeled and measured
compression ratios, one row per candidate group size.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .codec import model_compression_ratio
from .container import write_container
from .gemm import gemv_bitsliced
from .planes import SignMagnitudeTensor, sparsity_stats, split_signed


def _check_fraction(name: str, value: float) -> float:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {value}")
    return float(value)


def _check_positive(name: str, value: int) -> int:
    if value < 1:
        raise ValueError(f"{name} must be >= 1, got {value}")
    return int(value)


def merged_gemv_adds(h: int, m: int, bit_width: int, bit_sparsity: float) -> float:
    """Modeled additions for the merged kernel over one m-row slab pass."""
    h = _check_positive("h", h)
    m = _check_positive("m", m)
    k = _check_positive("bit_width", bit_width)
    bs = _check_fraction("bit_sparsity", bit_sparsity)
    return k * (h * (1.0 - bs) + m * float(2 ** (m - 1)))


def whole_matrix_merged_adds(
    rows: int, cols: int, m: int, bit_width: int, bit_sparsity: float
) -> float:
    """Merged-kernel model extended to a full rows-by-cols matrix."""
    rows = _check_positive("rows", rows)
    cols = _check_positive("cols", cols)
    m = _check_positive("m", m)
    k = _check_positive("bit_width", bit_width)
    bs = _check_fraction("bit_sparsity", bit_sparsity)
    return k * rows * cols / m * (1.0 - bs) + k * rows * float(2 ** (m - 1))


def bitserial_gemv_adds(h: int, m: int, bit_width: int, bit_sparsity: float) -> float:
    """Sparsity-aware bit-serial baseline: one add per nonzero bit visit."""
    h = _check_positive("h", h)
    m = _check_positive("m", m)
    k = _check_positive("bit_width", bit_width)
    bs = _check_fraction("bit_sparsity", bit_sparsity)
    return k * h * m * (1.0 - bs)


def value_gemv_adds(
    h: int,
    m: int,
    bit_width: int,
    value_sparsity: float,
    literal_sparsity: bool = False,
) -> float:
    """Value-sparsity-skipping baseline, see the module docstring."""
    h = _check_positive("h", h)
    m = _check_positive("m", m)
    k = _check_positive("bit_width", bit_width)
    vs = _check_fraction("value_sparsity", value_sparsity)
    rate = vs if literal_sparsity else 1.0 - vs
    return k * h * m * rate


def _pad_tensor(t: SignMagnitudeTensor, m: int) -> SignMagnitudeTensor:
    pad = (-t.rows) % m
    if pad == 0:
        return t
    sign = np.vstack([t.sign, np.zeros((pad, t.cols), dtype=np.uint8)])
    mag = np.concatenate(
        [t.magnitude, np.zeros((t.bit_width - 1, pad, t.cols), dtype=np.uint8)], axis=1
    )
    return SignMagnitudeTensor(t.bit_width, sign, mag)


def exact_adds(tensor: SignMagnitudeTensor, m: int) -> int:
    """Merge plus reconstruction adds recounted without the GEMM kernel.

    Keys come from byte packing and occupancy from sorted runs, so this and
    the kernel's bincount-based counters confirm each other.
    """
    if not 1 <= m <= 16:
        raise ValueError(f"group size m must be in 1..16, got {m}")
    total_merge = 0
    total_recon = 0
    for half in split_signed(tensor):
        for b in range(1, tensor.bit_width):
            plane = half.magnitude[b - 1]
            pad = (-plane.shape[0]) % m
            if pad:
                plane = np.vstack(
                    [plane, np.zeros((pad, plane.shape[1]), dtype=np.uint8)]
                )
            ns = plane.shape[0] // m
            grouped = plane.reshape(ns, m, plane.shape[1])
            if m <= 8:
                packed = np.packbits(grouped, axis=1)
                keys = packed[:, 0, :].astype(np.int64) >> (8 - m)
            else:
                weights = (1 << (m - 1 - np.arange(m, dtype=np.int64)))
                keys = np.einsum("smc,m->sc", grouped.astype(np.int64), weights)
            srt = np.sort(keys, axis=1)
            first = np.ones_like(srt, dtype=bool)
            first[:, 1:] = srt[:, 1:] != srt[:, :-1]
            nonzero = srt != 0
            nz_cols = int(nonzero.sum())
            distinct = first & nonzero
            total_merge += nz_cols - int(distinct.sum())
            occ_keys = np.where(distinct, srt, 0)
            for r in range(m):
                n_r = ((occ_keys >> (m - 1 - r)) & 1).sum(axis=1)
                total_recon += int(np.maximum(n_r - 1, 0).sum())
    return total_merge + total_recon


@dataclass
class DseRow:
    """One group-size candidate: models next to measurements."""

    m: int
    model_adds_analytic: float
    model_adds_exact: int
    measured_adds: int
    cr_model: float
    cr_measured: float
    divides_rows: bool
    recommended: bool = False

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "model_adds_analytic": self.model_adds_analytic,
            "model_adds_exact": self.model_adds_exact,
            "measured_adds": self.measured_adds,
            "cr_model": self.cr_model,
            "cr_measured": self.cr_measured,
            "divides_rows": self.divides_rows,
            "recommended": self.recommended,
        }


DSE_CSV_COLUMNS = (
    "m",
    "model_adds_analytic",
    "model_adds_exact",
    "measured_adds",
    "cr_model",
    "cr_measured",
    "divides_rows",
    "recommended",
)


def dse_csv(rows: Sequence[DseRow]) -> str:
    lines = [",".join(DSE_CSV_COLUMNS)]
    for row in rows:
        d = row.to_dict()
        lines.append(
            ",".join(
                str(int(v)) if isinstance(v, bool) else repr(v) if isinstance(v, float) else str(v)
                for v in (d[c] for c in DSE_CSV_COLUMNS)
            )
        )
    return "\n".join(lines) + "\n"


def dse_sweep(
    tensor: SignMagnitudeTensor,
    x: np.ndarray,
    m_values: Sequence[int],
    segment_len: int = 1024,
    threshold: float = 0.65,
) -> list[DseRow]:
    """Evaluate candidate group sizes against one weight tensor.

    Group sizes that do not divide the row count are evaluated on a
    zero-padded copy (flagged in ``divides_rows``); padding adds empty
    groups, which slightly flatters the compression ratio of such sizes.

    The recommended size is the smallest m whose measured additions are
    within 2% of the sweep minimum and whose measured compression ratio is
    the best among that shortlist.
    """
    ms = [int(m) for m in m_values]
    if not ms:
        raise ValueError("m_values must not be empty")
    if len(set(ms)) != len(ms):
        raise ValueError("duplicate group sizes in m_values")

    stats = sparsity_stats(tensor, 1)
    bs = stats.avg_bit_sparsity
    rows = []
    for m in ms:
        padded = _pad_tensor(tensor, m)
        _, counters = gemv_bitsliced(tensor, x, m)
        summary = write_container(io.BytesIO(), padded, m, segment_len, threshold)
        p0 = float(sparsity_stats(padded, m).zero_group_rate.mean())
        rows.append(
            DseRow(
                m=m,
                model_adds_analytic=whole_matrix_merged_adds(
                    tensor.rows, tensor.cols, m, tensor.bit_width, bs
                ),
                model_adds_exact=exact_adds(tensor, m),
                measured_adds=counters.total_adds,
                cr_model=model_compression_ratio(p0, m),
                cr_measured=summary.raw_bits / summary.payload_bits,
                divides_rows=tensor.rows % m == 0,
            )
        )

    floor = min(r.measured_adds for r in rows)
    shortlist = [r for r in rows if r.measured_adds <= 1.02 * floor]
    best = max(shortlist, key=lambda r: (r.cr_measured, -r.m))
    best.recommended = True
    return rows
