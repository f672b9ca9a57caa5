"""Grouped bit-slice integer GEMM with redundant-column merging.

The weight matrix lives as sign-magnitude planes (see ``planes``).  Within
one magnitude plane the rows are cut into slabs of ``m`` consecutive rows,
and each column of a slab is read as an m-bit key with slab row 0 as the
most significant bit.  Columns that share a key are redundant: their
activations are summed once into a merged accumulator vector indexed by key,
and the slab's m row outputs are rebuilt from the at most ``2**m - 1``
occupied accumulators instead of one add per set bit.

Work accounting follows fixed conventions used by the whole package:

* routing the first activation into a bucket is a move, so a bucket holding
  ``c`` columns costs ``c - 1`` merge adds;
* rebuilding slab row ``r`` costs ``n_r - 1`` adds, where ``n_r`` counts the
  occupied buckets whose key has bit ``m - 1 - r`` set;
* a slab with any occupied bucket pays ``m`` shifts per activation column
  on every plane above the LSB plane (the LSB plane needs no shift);
* columns with key 0 are skipped outright and tallied;
* ``weight_bits_loaded`` charges ``bit_width`` bits per stored weight every
  time a weight tile is streamed in;
* ``activation_loads`` counts one fetch per nonzero-key column per plane,
  slab, sign half and activation column.

Signed values are handled by splitting the matrix into nonnegative halves
(``values = P - N``) and running the plane passes on each half.  Integer
results are exact, so they do not depend on tile sizes or visit order; the
counters do, because they model the schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .planes import SignMagnitudeTensor, split_signed

_MAX_GROUP = 16
_I32_MAX = np.iinfo(np.int32).max


@dataclass
class OpCounters:
    """Operation tallies for one kernel invocation.  Addable and JSON-able."""

    merge_adds: int = 0
    recon_adds: int = 0
    shifts: int = 0
    skipped_zero_columns: int = 0
    weight_bits_loaded: int = 0
    activation_loads: int = 0

    def __add__(self, other: "OpCounters") -> "OpCounters":
        return OpCounters(
            self.merge_adds + other.merge_adds,
            self.recon_adds + other.recon_adds,
            self.shifts + other.shifts,
            self.skipped_zero_columns + other.skipped_zero_columns,
            self.weight_bits_loaded + other.weight_bits_loaded,
            self.activation_loads + other.activation_loads,
        )

    @property
    def total_adds(self) -> int:
        return self.merge_adds + self.recon_adds

    def to_dict(self) -> dict:
        return {
            "merge_adds": self.merge_adds,
            "recon_adds": self.recon_adds,
            "shifts": self.shifts,
            "skipped_zero_columns": self.skipped_zero_columns,
            "weight_bits_loaded": self.weight_bits_loaded,
            "activation_loads": self.activation_loads,
        }


def enumeration_matrix(m: int) -> np.ndarray:
    """``E[r, key]`` is bit ``m - 1 - r`` of ``key``; shape ``(m, 2**m)``.

    Row ``r`` of a slab's output is the sum of merged accumulators over the
    keys selected by row ``r`` of this matrix.
    """
    if not 1 <= m <= _MAX_GROUP:
        raise ValueError(f"group size m must be in 1..{_MAX_GROUP}, got {m}")
    keys = np.arange(1 << m, dtype=np.int64)
    shifts = (m - 1 - np.arange(m, dtype=np.int64))[:, None]
    return ((keys[None, :] >> shifts) & 1).astype(np.int64)


def group_keys(plane: np.ndarray, m: int) -> np.ndarray:
    """Keys of every m-row column group of a bit plane; shape ``(rows//m, cols)``."""
    if not 1 <= m <= _MAX_GROUP:
        raise ValueError(f"group size m must be in 1..{_MAX_GROUP}, got {m}")
    rows, cols = plane.shape
    if rows % m != 0:
        raise ValueError(f"group size {m} does not divide {rows} rows")
    resh = np.ascontiguousarray(plane).reshape(rows // m, m, cols)
    keys = np.zeros((rows // m, cols), dtype=np.int64)
    for r in range(m):
        keys = (keys << 1) | resh[:, r, :]
    return keys


def cam_bucketize(keys: np.ndarray) -> tuple[dict[int, np.ndarray], int]:
    """Group column indices by key, skipping key 0.

    Returns ``(buckets, zero_columns)`` where ``buckets[key]`` lists the
    column indices carrying that key in ascending order.  This is the
    reference single-slab formulation; the kernels below batch the same
    grouping across all slabs with ``bincount``.
    """
    keys = np.asarray(keys)
    if keys.ndim != 1:
        raise ValueError("cam_bucketize expects the keys of one slab (1-D)")
    buckets: dict[int, list[int]] = {}
    zero_columns = 0
    for j, key in enumerate(keys.tolist()):
        if key == 0:
            zero_columns += 1
        else:
            buckets.setdefault(int(key), []).append(j)
    return {k: np.asarray(v, dtype=np.int64) for k, v in buckets.items()}, zero_columns


@dataclass
class MergedVector:
    """Merged activation accumulators of one slab.

    ``z[key]`` sums the activations of all columns with that key; index 0 is
    never accumulated.  ``occupied`` tracks true occupancy, which matters
    when cancelling activations sum to zero.
    """

    z: np.ndarray
    occupied: np.ndarray
    merge_adds: int


def merge_activations(keys: np.ndarray, x: np.ndarray, m: int) -> MergedVector:
    """Fold activations into the ``2**m`` merged accumulators of one slab."""
    keys = np.asarray(keys, dtype=np.int64)
    x = np.asarray(x)
    if keys.shape != x.shape or keys.ndim != 1:
        raise ValueError("keys and activations must be matching 1-D arrays")
    if keys.min(initial=0) < 0 or keys.max(initial=0) >= (1 << m):
        raise ValueError(f"keys outside 0..{(1 << m) - 1}")
    counts = np.bincount(keys, minlength=1 << m)
    z = np.bincount(keys, weights=x.astype(np.float64), minlength=1 << m)
    z = z.astype(np.int64)
    z[0] = 0
    occupied = counts > 0
    occupied[0] = False
    merge_adds = int(counts[1:].sum() - occupied.sum())
    return MergedVector(z=z, occupied=occupied, merge_adds=merge_adds)


def reconstruct_merged(mv: MergedVector) -> tuple[np.ndarray, int]:
    """Rebuild the m slab-row partial sums from merged accumulators.

    Returns ``(y, recon_adds)`` with ``y[r]`` the partial output of slab row
    ``r``.
    """
    size = mv.z.shape[0]
    m = size.bit_length() - 1
    if size != (1 << m):
        raise ValueError(f"accumulator vector length {size} is not a power of two")
    e = enumeration_matrix(m)
    y = e @ mv.z
    n_r = e @ mv.occupied.astype(np.int64)
    recon_adds = int(np.maximum(n_r - 1, 0).sum())
    return y, recon_adds


def _pad_to_slabs(plane: np.ndarray, m: int) -> np.ndarray:
    pad = (-plane.shape[0]) % m
    if pad:
        plane = np.vstack([plane, np.zeros((pad, plane.shape[1]), dtype=np.uint8)])
    return np.ascontiguousarray(plane)


def _tally(counts: np.ndarray, occ: np.ndarray, e: np.ndarray) -> tuple[int, int, int, int, int]:
    """Schedule-independent per-plane tallies from bucket occupancy."""
    zero_cols = int(counts[:, 0].sum())
    nz_cols = int(counts.sum()) - zero_cols
    occupied = int(occ.sum())
    n_r = occ.astype(np.int64) @ e.T
    recon = int(np.maximum(n_r - 1, 0).sum())
    active_slabs = int(occ.any(axis=1).sum())
    return zero_cols, nz_cols, occupied, recon, active_slabs


def _check_inputs(weights: SignMagnitudeTensor, x: np.ndarray, m: int, ndim: int) -> np.ndarray:
    if not isinstance(weights, SignMagnitudeTensor):
        raise ValueError("weights must be a SignMagnitudeTensor")
    if not 1 <= m <= _MAX_GROUP:
        raise ValueError(f"group size m must be in 1..{_MAX_GROUP}, got {m}")
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.integer):
        raise ValueError(f"activations must be integers, got {x.dtype}")
    if x.ndim != ndim or x.shape[0] != weights.cols:
        raise ValueError(
            f"activation shape {x.shape} does not match {weights.cols} weight columns"
        )
    return x.astype(np.int64)


def _finalize(y: np.ndarray) -> np.ndarray:
    if np.abs(y).max(initial=0) > _I32_MAX:
        raise OverflowError("accumulated output exceeds the int32 range")
    return y.astype(np.int32)


def gemv_bitsliced(
    weights: SignMagnitudeTensor, x: np.ndarray, m: int = 4
) -> tuple[np.ndarray, OpCounters]:
    """Bit-sliced matrix-vector product with merged redundant columns.

    Returns the exact int32 product ``weights.values() @ x`` together with
    the operation counters.  Rows are zero-padded internally to a multiple
    of ``m``; padded rows carry no set bits, so they add nothing to the
    output or the tallies.
    """
    x = _check_inputs(weights, x, m, ndim=1)
    k = weights.bit_width
    rows, cols = weights.shape
    e = enumeration_matrix(m)
    ctr = OpCounters(weight_bits_loaded=k * rows * cols)
    xf = x.astype(np.float64)
    padded_rows = rows + ((-rows) % m)
    y = np.zeros(padded_rows, dtype=np.int64)

    for sgn, half in zip((1, -1), split_signed(weights)):
        for b in range(1, k):
            keys = group_keys(_pad_to_slabs(half.magnitude[b - 1], m), m)
            ns = keys.shape[0]
            flat = (keys + (np.arange(ns, dtype=np.int64)[:, None] << m)).ravel()
            minlength = ns << m
            counts = np.bincount(flat, minlength=minlength).reshape(ns, 1 << m)
            occ = counts > 0
            occ[:, 0] = False
            zero_cols, nz_cols, occupied, recon, active = _tally(counts, occ, e)
            ctr.skipped_zero_columns += zero_cols
            ctr.activation_loads += nz_cols
            ctr.merge_adds += nz_cols - occupied
            ctr.recon_adds += recon
            if b > 1:
                ctr.shifts += m * active
            weights_flat = np.broadcast_to(xf, keys.shape).ravel()
            z = np.bincount(flat, weights=weights_flat, minlength=minlength)
            z = z.astype(np.int64).reshape(ns, 1 << m)
            z[:, 0] = 0
            y += sgn * ((z @ e.T).ravel() << (b - 1))

    return _finalize(y[:rows]), ctr


def gemm_tiled(
    weights: SignMagnitudeTensor,
    x: np.ndarray,
    m: int = 4,
    tile_m: int = 64,
    tile_k: int = 256,
    tile_n: int = 32,
) -> tuple[np.ndarray, OpCounters]:
    """Output-stationary tiled GEMM over the bit-sliced weight matrix.

    The weight tile at row block ``i0`` and reduction block ``k0`` is
    re-streamed for every activation block ``j0`` (weights are charged per
    visit), while bucket structure is shared across the activation columns
    of a block, so per-column work scales the structural tallies by the
    block width.  Row slabs are formed inside each tile, zero-padded when
    ``tile_m`` is not a multiple of ``m``.
    """
    x = _check_inputs(weights, x, m, ndim=2)
    if min(tile_m, tile_k, tile_n) < 1:
        raise ValueError("tile sizes must be positive")
    k = weights.bit_width
    rows, cols = weights.shape
    n = x.shape[1]
    e = enumeration_matrix(m)
    ctr = OpCounters()
    y = np.zeros((rows, n), dtype=np.int64)
    halves = split_signed(weights)

    for i0 in range(0, rows, tile_m):
        tm = min(tile_m, rows - i0)
        for k0 in range(0, cols, tile_k):
            tk = min(tile_k, cols - k0)
            passes = []
            for sgn, half in zip((1, -1), halves):
                for b in range(1, k):
                    tile = half.magnitude[b - 1, i0 : i0 + tm, k0 : k0 + tk]
                    keys = group_keys(_pad_to_slabs(tile, m), m)
                    ns = keys.shape[0]
                    flat = (keys + (np.arange(ns, dtype=np.int64)[:, None] << m)).ravel()
                    counts = np.bincount(flat, minlength=ns << m).reshape(ns, 1 << m)
                    occ = counts > 0
                    occ[:, 0] = False
                    passes.append((sgn, b, flat, ns, _tally(counts, occ, e)))
            for j0 in range(0, n, tile_n):
                tn = min(tile_n, n - j0)
                ctr.weight_bits_loaded += k * tm * tk
                xt = x[k0 : k0 + tk, j0 : j0 + tn].astype(np.float64)
                for sgn, b, flat, ns, tallies in passes:
                    zero_cols, nz_cols, occupied, recon, active = tallies
                    ctr.skipped_zero_columns += zero_cols * tn
                    ctr.activation_loads += nz_cols * tn
                    ctr.merge_adds += (nz_cols - occupied) * tn
                    ctr.recon_adds += recon * tn
                    if b > 1:
                        ctr.shifts += m * active * tn
                    bsz = ns << m
                    col_flat = (flat[None, :] + (np.arange(tn, dtype=np.int64) * bsz)[:, None]).ravel()
                    col_w = np.broadcast_to(xt.T[:, None, :], (tn, ns, tk)).ravel()
                    z = np.bincount(col_flat, weights=col_w, minlength=tn * bsz)
                    z = z.astype(np.int64).reshape(tn, ns, 1 << m)
                    z[:, :, 0] = 0
                    yt = (z @ e.T).reshape(tn, ns * m)[:, :tm]
                    y[i0 : i0 + tm, j0 : j0 + tn] += sgn * (yt.T << (b - 1))

    return _finalize(y), ctr
