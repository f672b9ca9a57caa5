"""Plane decomposition tests.

The reference decomposition below is deliberately scalar and slow; the
package implementation must agree with it bit for bit.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bitslice import (
    SignMagnitudeTensor,
    from_sign_magnitude,
    gen_gaussian_weights,
    sparsity_stats,
    split_signed,
    to_sign_magnitude,
)


def reference_planes(values, bit_width=8):
    """One bit at a time, one element at a time."""
    values = np.asarray(values)
    rows, cols = values.shape
    sign = np.zeros((rows, cols), dtype=np.uint8)
    mag = np.zeros((bit_width - 1, rows, cols), dtype=np.uint8)
    limit = (1 << (bit_width - 1)) - 1
    for i in range(rows):
        for j in range(cols):
            v = int(values[i, j])
            if v < 0:
                sign[i, j] = 1
                v = min(-v, limit)
            else:
                v = min(v, limit)
            for b in range(bit_width - 1):
                mag[b, i, j] = (v >> b) & 1
    return sign, mag


# ---------------------------------------------------------------------------
# Round trip and reference agreement
# ---------------------------------------------------------------------------


def test_round_trip_small_fixture():
    w = np.array([[0, 1, -1], [127, -127, 64], [-64, 3, -3]], dtype=np.int8)
    t = to_sign_magnitude(w)
    assert t.bit_width == 8
    assert t.magnitude.shape == (7, 3, 3)
    assert np.array_equal(t.values(), w.astype(np.int32))
    assert np.array_equal(from_sign_magnitude(t), w.astype(np.int32))


def test_matches_scalar_reference():
    rng = np.random.Generator(np.random.PCG64(0))
    w = rng.integers(-127, 128, (13, 17)).astype(np.int8)
    t = to_sign_magnitude(w)
    sign, mag = reference_planes(w)
    assert np.array_equal(t.sign, sign)
    assert np.array_equal(t.magnitude, mag)


def test_plane_indexing_is_one_based_lsb_first():
    w = np.array([[5]], dtype=np.int8)  # 5 = 0b101
    t = to_sign_magnitude(w)
    assert t.plane(1)[0, 0] == 1
    assert t.plane(2)[0, 0] == 0
    assert t.plane(3)[0, 0] == 1
    assert t.plane(8)[0, 0] == 0  # sign plane
    with pytest.raises(ValueError):
        t.plane(0)
    with pytest.raises(ValueError):
        t.plane(9)


def test_minus_128_saturates():
    w = np.array([[-128, 127]], dtype=np.int8)
    t = to_sign_magnitude(w)
    assert t.values()[0, 0] == -127
    assert t.values()[0, 1] == 127


def test_zero_keeps_positive_sign():
    t = to_sign_magnitude(np.zeros((2, 2), dtype=np.int8))
    assert not t.sign.any()
    assert not t.magnitude.any()


@given(
    st.integers(min_value=1, max_value=12),
    st.integers(min_value=1, max_value=12),
    st.integers(min_value=0, max_value=2**32 - 1),
    st.sampled_from([2, 4, 8, 12, 16]),
)
@settings(max_examples=60, deadline=None)
def test_round_trip_property(rows, cols, seed, bit_width):
    rng = np.random.Generator(np.random.PCG64(seed))
    limit = (1 << (bit_width - 1)) - 1
    w = rng.integers(-limit, limit + 1, (rows, cols))
    t = to_sign_magnitude(w, bit_width=bit_width)
    assert np.array_equal(t.values(), w.astype(np.int32))


def test_input_validation():
    with pytest.raises(ValueError):
        to_sign_magnitude(np.zeros((0, 3), dtype=np.int8))
    with pytest.raises(ValueError):
        to_sign_magnitude(np.zeros(5, dtype=np.int8))
    with pytest.raises(ValueError):
        to_sign_magnitude(np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(ValueError):
        to_sign_magnitude(np.array([[300]]), bit_width=8)
    with pytest.raises(ValueError):
        to_sign_magnitude(np.array([[1]]), bit_width=1)
    with pytest.raises(ValueError):
        to_sign_magnitude(np.array([[1]]), bit_width=17)


# ---------------------------------------------------------------------------
# Signed split
# ---------------------------------------------------------------------------


def test_split_signed_partitions_magnitudes():
    w = np.array([[3, -3, 0], [-1, 2, -127]], dtype=np.int8)
    t = to_sign_magnitude(w)
    pos, neg = split_signed(t)
    assert np.array_equal(pos.values(), np.where(w > 0, w, 0).astype(np.int32))
    assert np.array_equal(neg.values(), np.where(w < 0, -w.astype(np.int32), 0))
    assert not pos.sign.any() and not neg.sign.any()
    # the two halves recombine to the original
    assert np.array_equal(pos.values() - neg.values(), w.astype(np.int32))


# ---------------------------------------------------------------------------
# Sparsity statistics
# ---------------------------------------------------------------------------


def test_sparsity_stats_hand_counted():
    # 4x2 matrix, m=2: count every zero bit and zero group by hand.
    w = np.array([[1, 0], [0, 2], [3, 0], [0, 0]], dtype=np.int8)
    t = to_sign_magnitude(w)
    stats = sparsity_stats(t, 2)
    # plane 1 (bit 1): column of bits per value 1,0,0,2,3,0,0,0 -> 1,0,0,0,1,0,0,0
    assert stats.per_plane_sparsity[0] == pytest.approx(6 / 8)
    # plane 2 (bit 2): only 2 and 3 set it
    assert stats.per_plane_sparsity[1] == pytest.approx(6 / 8)
    # planes 3..7 and the sign plane are all zero
    for p in stats.per_plane_sparsity[2:]:
        assert p == 1.0
    # five of the eight entries are zero
    assert stats.value_sparsity == pytest.approx(5 / 8)
    # the average covers magnitude planes only, not the sign plane
    expected_avg = sum(stats.per_plane_sparsity[:7]) / 7
    assert stats.avg_bit_sparsity == pytest.approx(expected_avg)


def test_sparsity_zero_group_rate_reference():
    rng = np.random.Generator(np.random.PCG64(4))
    w = rng.integers(-4, 5, (12, 9)).astype(np.int8)
    t = to_sign_magnitude(w)
    stats = sparsity_stats(t, 3)
    # recount zero groups with plain slicing, one plane at a time
    for b in range(1, 9):
        plane = t.plane(b)
        zero_groups = 0
        for r0 in range(0, 12, 3):
            blk = plane[r0 : r0 + 3]
            zero_groups += int((blk.sum(axis=0) == 0).sum())
        assert stats.zero_group_rate[b - 1] == pytest.approx(zero_groups / (4 * 9))


def test_sparsity_stats_requires_divisible_rows():
    t = to_sign_magnitude(np.ones((5, 2), dtype=np.int8))
    with pytest.raises(ValueError):
        sparsity_stats(t, 4)


# ---------------------------------------------------------------------------
# Weight generator
# ---------------------------------------------------------------------------


def test_gen_gaussian_weights_reproducible():
    a = gen_gaussian_weights(8, 8, 0.02, seed=3)
    b = gen_gaussian_weights(8, 8, 0.02, seed=3)
    c = gen_gaussian_weights(8, 8, 0.02, seed=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.shape == (8, 8)
    # same stream as a PCG64 generator used directly
    ref = np.random.Generator(np.random.PCG64(3)).normal(0.0, 0.02, (8, 8))
    assert np.allclose(a, ref)
