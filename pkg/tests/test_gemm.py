"""Grouped bit-slice kernel tests.

The central claims checked here:

* the kernels are bit exact against a plain int64 matmul, always;
* the operation counters agree with an independent slab-by-slab recount
  built from the small reference helpers (bucketize / merge / reconstruct).
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bitslice import (
    OpCounters,
    cam_bucketize,
    enumeration_matrix,
    gemm_tiled,
    gemv_bitsliced,
    group_keys,
    merge_activations,
    reconstruct_merged,
    split_signed,
    to_sign_magnitude,
)


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def test_enumeration_matrix_rows_select_key_bits():
    e = enumeration_matrix(3)
    assert e.shape == (3, 8)
    # row r selects keys whose bit (m-1-r) is set: row 0 is the MSB row
    assert np.array_equal(e[0], (np.arange(8) >> 2) & 1)
    assert np.array_equal(e[1], (np.arange(8) >> 1) & 1)
    assert np.array_equal(e[2], np.arange(8) & 1)


def test_group_keys_top_row_is_msb():
    plane = np.array(
        [
            [1, 1, 0, 0, 0],
            [0, 0, 1, 1, 0],
            [0, 1, 0, 0, 0],
        ],
        dtype=np.uint8,
    )
    keys = group_keys(plane, 3)
    assert np.array_equal(keys[0], [4, 5, 2, 2, 0])


def test_cam_bucketize_groups_and_counts_zeros():
    buckets, zero_cols = cam_bucketize(np.array([1, 2, 3, 1]))
    assert zero_cols == 0
    assert np.array_equal(buckets[1], [0, 3])
    assert np.array_equal(buckets[2], [1])
    assert np.array_equal(buckets[3], [2])

    buckets, zero_cols = cam_bucketize(np.array([4, 5, 2, 2, 0]))
    assert zero_cols == 1
    assert set(buckets) == {4, 5, 2}
    assert np.array_equal(buckets[2], [2, 3])


def test_merge_and_reconstruct_hand_example():
    # Five columns share three distinct keys; merging should cost 2 adds
    # (two columns land in already-occupied buckets) and reconstruction 4,
    # versus 9 adds for the naive slab (non-zero bits minus first deposits).
    plane = np.array(
        [
            [1, 1, 1, 1, 0],
            [1, 1, 1, 1, 1],
            [0, 1, 0, 1, 1],
        ],
        dtype=np.uint8,
    )
    keys = group_keys(plane, 3)[0]
    assert np.array_equal(keys, [6, 7, 6, 7, 3])
    x = np.array([10, 20, 30, 40, 50])
    mv = merge_activations(keys, x, 3)
    assert mv.merge_adds == 2
    assert mv.z[6] == 40 and mv.z[7] == 60 and mv.z[3] == 50
    y, recon_adds = reconstruct_merged(mv)
    assert recon_adds == 4
    # row sums must equal the naive plane product
    assert np.array_equal(y, plane.astype(np.int64) @ x)
    # the naive kernel needs one add per nonzero bit beyond the first per row
    naive = int(plane.sum() - (plane.sum(axis=1) > 0).sum())
    assert mv.merge_adds + recon_adds == 6 < naive + 3  # 6 total vs 9


def test_merge_zero_key_carries_nothing():
    mv = merge_activations(np.array([0, 0, 2]), np.array([5, 7, 9]), 2)
    assert mv.z[0] == 0 and not mv.occupied[0]
    assert mv.merge_adds == 0
    y, recon = reconstruct_merged(mv)
    assert np.array_equal(y, [9, 0])


def test_merge_counts_true_occupancy_under_cancellation():
    # +5 and -5 cancel numerically; occupancy must still be recorded
    mv = merge_activations(np.array([3, 3]), np.array([5, -5]), 2)
    assert mv.z[3] == 0
    assert mv.occupied[3]
    assert mv.merge_adds == 1


# ---------------------------------------------------------------------------
# Exactness of the full kernels
# ---------------------------------------------------------------------------


def _random_codes(rng, rows, cols, sparsity=0.0):
    w = rng.integers(-127, 128, (rows, cols)).astype(np.int8)
    if sparsity:
        w[rng.random((rows, cols)) < sparsity] = 0
    return w


@pytest.mark.parametrize("m", [1, 2, 3, 4, 5, 6, 8])
def test_gemv_exact_all_group_sizes(m):
    rng = np.random.Generator(np.random.PCG64(100 + m))
    w = _random_codes(rng, 24, 31, sparsity=0.4)
    x = rng.integers(-127, 128, 31)
    y, _ = gemv_bitsliced(to_sign_magnitude(w), x, m)
    assert np.array_equal(y, w.astype(np.int64) @ x)


def test_gemv_rows_not_divisible_by_m():
    rng = np.random.Generator(np.random.PCG64(9))
    w = _random_codes(rng, 10, 7)
    x = rng.integers(-127, 128, 7)
    y, _ = gemv_bitsliced(to_sign_magnitude(w), x, 4)
    assert np.array_equal(y, w.astype(np.int64) @ x)


def test_gemv_uint8_activations():
    rng = np.random.Generator(np.random.PCG64(10))
    w = _random_codes(rng, 16, 16)
    x = rng.integers(0, 256, 16)
    y, _ = gemv_bitsliced(to_sign_magnitude(w), x, 4)
    assert np.array_equal(y, w.astype(np.int64) @ x)


@given(st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_gemv_exact_property(seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    rows = int(rng.integers(1, 40))
    cols = int(rng.integers(1, 48))
    m = int(rng.integers(1, 7))
    w = _random_codes(rng, rows, cols, sparsity=float(rng.uniform(0, 0.9)))
    x = rng.integers(-200, 201, cols)
    y, counters = gemv_bitsliced(to_sign_magnitude(w), x, m)
    assert np.array_equal(y, w.astype(np.int64) @ x)
    assert counters.total_adds >= 0


def test_gemm_tiled_matches_gemv_outputs_and_oracle():
    rng = np.random.Generator(np.random.PCG64(11))
    w = _random_codes(rng, 40, 52, sparsity=0.5)
    x = rng.integers(-127, 128, (52, 7)).astype(np.int8)
    t = to_sign_magnitude(w)
    y, _ = gemm_tiled(t, x, m=4, tile_m=16, tile_k=24, tile_n=3)
    assert np.array_equal(y, w.astype(np.int64) @ x.astype(np.int64))
    for j in range(7):
        yj, _ = gemv_bitsliced(t, x[:, j], 4)
        assert np.array_equal(y[:, j], yj)


def test_gemm_tile_shape_does_not_change_result():
    rng = np.random.Generator(np.random.PCG64(12))
    w = _random_codes(rng, 33, 29, sparsity=0.6)
    x = rng.integers(-127, 128, (29, 5)).astype(np.int8)
    t = to_sign_magnitude(w)
    ref, ref_ctr = gemm_tiled(t, x, m=3, tile_m=33, tile_k=29, tile_n=5)
    for tm, tk, tn in [(8, 8, 1), (16, 32, 2), (64, 64, 64), (5, 7, 3)]:
        y, _ = gemm_tiled(t, x, m=3, tile_m=tm, tile_k=tk, tile_n=tn)
        assert np.array_equal(y, ref)


def test_accumulator_overflow_is_detected():
    w = np.full((1, 70000), 127, dtype=np.int8)
    x = np.full(70000, 250, dtype=np.int64)
    with pytest.raises(OverflowError):
        gemv_bitsliced(to_sign_magnitude(w), x, 4)


def test_input_validation():
    t = to_sign_magnitude(np.ones((4, 4), dtype=np.int8))
    with pytest.raises(ValueError):
        gemv_bitsliced(t, np.ones(3, dtype=np.int64), 4)  # length mismatch
    with pytest.raises(ValueError):
        gemv_bitsliced(t, np.ones(4, dtype=np.int64), 0)  # bad m
    with pytest.raises(ValueError):
        gemm_tiled(t, np.ones((4, 2), dtype=np.int64), 4, tile_m=0)


# ---------------------------------------------------------------------------
# Counters: independent recount from the reference helpers
# ---------------------------------------------------------------------------


def reference_gemv_counters(tensor, x, m):
    """Recount every counter with the scalar helpers, slab by slab."""
    k = tensor.bit_width
    rows, cols = tensor.rows, tensor.cols
    pad = (-rows) % m
    total = OpCounters()
    pos, neg = split_signed(tensor)
    for half in (pos, neg):
        for b in range(1, k):  # magnitude planes only
            plane = half.plane(b)
            if pad:
                plane = np.vstack([plane, np.zeros((pad, cols), dtype=np.uint8)])
            keys = group_keys(plane, m)
            active_slabs = 0
            for s in range(keys.shape[0]):
                buckets, zero_cols = cam_bucketize(keys[s])
                mv = merge_activations(keys[s], x, m)
                _, recon = reconstruct_merged(mv)
                total.merge_adds += mv.merge_adds
                total.recon_adds += recon
                total.skipped_zero_columns += zero_cols
                total.activation_loads += cols - zero_cols
                if buckets:
                    active_slabs += 1
            if b > 1:
                total.shifts += active_slabs * m
    total.weight_bits_loaded = k * rows * cols
    return total


@pytest.mark.parametrize("m", [1, 2, 4, 5])
def test_gemv_counters_match_reference_recount(m):
    rng = np.random.Generator(np.random.PCG64(40 + m))
    w = _random_codes(rng, 20, 30, sparsity=0.5)
    x = rng.integers(-127, 128, 30)
    t = to_sign_magnitude(w)
    y, counters = gemv_bitsliced(t, x, m)
    ref = reference_gemv_counters(t, x, m)
    assert counters.to_dict() == ref.to_dict()


def test_gemm_counters_scale_with_output_tiles():
    # output-stationary schedule revisits each weight tile once per n-tile,
    # so a single-column tile shape multiplies per-visit counters by n
    rng = np.random.Generator(np.random.PCG64(13))
    w = _random_codes(rng, 16, 16, sparsity=0.5)
    x0 = rng.integers(-127, 128, 16).astype(np.int8)
    x = np.repeat(x0[:, None], 3, axis=1)
    t = to_sign_magnitude(w)
    _, one = gemv_bitsliced(t, x0, 4)
    _, three = gemm_tiled(t, x, m=4, tile_m=16, tile_k=16, tile_n=1)
    assert three.merge_adds == 3 * one.merge_adds
    assert three.recon_adds == 3 * one.recon_adds
    assert three.weight_bits_loaded == 3 * one.weight_bits_loaded
    assert three.skipped_zero_columns == 3 * one.skipped_zero_columns


def test_counters_zero_matrix():
    t = to_sign_magnitude(np.zeros((8, 8), dtype=np.int8))
    y, counters = gemv_bitsliced(t, np.arange(8), 4)
    assert not y.any()
    assert counters.total_adds == 0
    assert counters.shifts == 0
    assert counters.activation_loads == 0
    # every column of every plane/half carries key 0
    assert counters.skipped_zero_columns == 14 * 2 * 8
    assert counters.weight_bits_loaded == 8 * 8 * 8


def test_counter_addition():
    a = OpCounters(merge_adds=1, recon_adds=2, shifts=3, skipped_zero_columns=4,
                   weight_bits_loaded=5, activation_loads=6)
    b = a + a
    assert b.merge_adds == 2 and b.activation_loads == 12
    assert b.total_adds == 6
