"""Quantizer and fused-rescale tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bitslice import (
    FusedAffine,
    QuantParams,
    apply_fused,
    encode_activations,
    fuse_rescale,
    output_range_params,
    quantize_activations,
    quantize_symmetric,
    quantize_weights,
    round_half_away,
)


# ---------------------------------------------------------------------------
# Rounding
# ---------------------------------------------------------------------------


def test_round_half_away_ties():
    x = np.array([0.5, -0.5, 1.5, -1.5, 2.5, 0.49, -0.49])
    out = round_half_away(x)
    # ties go away from zero, never to even
    assert np.array_equal(out, np.array([1.0, -1.0, 2.0, -2.0, 3.0, 0.0, 0.0]))


# ---------------------------------------------------------------------------
# Weights: per-row symmetric
# ---------------------------------------------------------------------------


def test_quantize_weights_row_scales():
    w = np.array([[1.0, -2.0, 0.5], [0.0, 0.0, 0.0], [10.0, 5.0, -10.0]], dtype=np.float32)
    codes, delta = quantize_weights(w)
    assert codes.dtype == np.int8
    assert delta.shape == (3,)
    assert delta[0] == pytest.approx(2.0 / 127)
    assert delta[1] == 1.0  # all-zero row falls back to unit scale
    assert delta[2] == pytest.approx(10.0 / 127)
    assert codes[0, 1] == -127
    assert codes[2, 0] == 127 and codes[2, 2] == -127
    assert not codes[1].any()


def test_quantize_weights_never_produces_minus_128():
    rng = np.random.Generator(np.random.PCG64(2))
    w = rng.normal(0, 1, (50, 40)).astype(np.float32)
    codes, delta = quantize_weights(w)
    assert codes.min() >= -127
    err = np.abs(codes.astype(np.float64) * delta[:, None] - w)
    assert err.max() <= 0.5 * delta.max() + 1e-12


# ---------------------------------------------------------------------------
# Activations: per-tensor asymmetric
# ---------------------------------------------------------------------------


def test_quantize_activations_range():
    x = np.array([[-1.0, 0.0], [3.0, 1.0]])
    codes, delta, zero = quantize_activations(x)
    assert codes.dtype == np.uint8
    assert delta == pytest.approx(4.0 / 255)
    # -1.0 maps to 0 and 3.0 maps to 255
    assert codes.min() == 0 and codes.max() == 255
    recon = (codes.astype(np.float64) - zero) * delta
    assert np.abs(recon - x).max() <= 0.5 * delta + 1e-12


def test_quantize_activations_degenerate():
    codes, delta, zero = quantize_activations(np.full((2, 2), 7.25))
    assert delta == 1.0 and np.all(codes == codes[0, 0])


def test_encode_activations_frozen_params():
    x = np.array([-2.0, 0.0, 2.0])
    codes, delta, zero = quantize_activations(x)
    again = encode_activations(x, delta, zero)
    assert np.array_equal(codes, again)
    # clamping applies when the frozen range is exceeded
    wild = encode_activations(np.array([100.0, -100.0]), delta, zero)
    assert wild.max() <= 255 and wild.min() >= 0


def test_quantize_symmetric_vector():
    q, delta = quantize_symmetric(np.array([0.5, -1.0, 0.25]))
    assert q.dtype == np.int8
    assert delta == pytest.approx(1.0 / 127)
    assert q[1] == -127
    assert q[0] == 64  # 0.5/delta = 63.5 rounds away from zero


def test_output_range_params():
    delta, zero = output_range_params(-4.0, 4.0)
    assert delta == pytest.approx(8.0 / 254)
    # symmetric range centres the zero point
    assert round(-127 - (-4.0) / delta) == zero
    lo = (-127 - zero) * delta
    hi = (127 - zero) * delta
    assert lo == pytest.approx(-4.0)
    assert hi == pytest.approx(4.0)


# ---------------------------------------------------------------------------
# Fused rescale
# ---------------------------------------------------------------------------


def _dequant_reference(wq, delta_w, xq, params):
    """Float reference: dequantize both operands, multiply, requantize."""
    wf = wq.astype(np.float64) * delta_w[:, None]
    xf = (xq.astype(np.float64) - params.zero_x) * params.delta_x
    yf = wf @ xf
    yq = round_half_away(yf / params.delta_y + params.zero_y)
    return np.clip(yq, -127, 127).astype(np.int32)


def test_apply_fused_matches_dequant_reference():
    rng = np.random.Generator(np.random.PCG64(5))
    w = rng.normal(0, 0.5, (12, 20)).astype(np.float32)
    x = rng.normal(0, 1.0, 20)
    wq, delta_w = quantize_weights(w)
    xq, delta_x, zero_x = quantize_activations(x)
    delta_y, zero_y = output_range_params(-30.0, 30.0)
    params = QuantParams(delta_w=delta_w, delta_x=delta_x, zero_x=zero_x,
                         delta_y=delta_y, zero_y=zero_y)
    fused = fuse_rescale(params, wq)
    acc = wq.astype(np.int64) @ xq.astype(np.int64)
    got = apply_fused(acc, fused)
    want = _dequant_reference(wq, delta_w, xq, params)
    assert np.abs(got.astype(np.int64) - want).max() <= 1


def test_fused_bias_absorbs_zero_point():
    # with zero_x = 0 the bias reduces to the output zero point
    wq = np.array([[1, 2], [3, 4]], dtype=np.int8)
    params = QuantParams(delta_w=np.array([1.0, 1.0]), delta_x=1.0, zero_x=0,
                         delta_y=1.0, zero_y=7)
    fused = fuse_rescale(params, wq)
    assert np.allclose(fused.bias, 7.0)
    assert np.array_equal(fused.row_sums, np.array([3, 7]))


@given(st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_fused_within_one_step_property(seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    rows = int(rng.integers(1, 16))
    cols = int(rng.integers(1, 24))
    w = rng.normal(0, rng.uniform(0.01, 2.0), (rows, cols)).astype(np.float32)
    x = rng.normal(rng.uniform(-1, 1), rng.uniform(0.1, 2.0), cols)
    wq, delta_w = quantize_weights(w)
    xq, delta_x, zero_x = quantize_activations(x)
    bound = float(np.abs(w.astype(np.float64) @ x).max()) + 1.0
    delta_y, zero_y = output_range_params(-bound, bound)
    params = QuantParams(delta_w=delta_w, delta_x=delta_x, zero_x=zero_x,
                         delta_y=delta_y, zero_y=zero_y)
    fused = fuse_rescale(params, wq)
    acc = wq.astype(np.int64) @ xq.astype(np.int64)
    got = apply_fused(acc, fused)
    want = _dequant_reference(wq, delta_w, xq, params)
    assert np.abs(got.astype(np.int64) - want).max() <= 1


def test_params_dict_round_trip():
    params = QuantParams(delta_w=np.array([0.5, 0.25]), delta_x=0.1, zero_x=3,
                         delta_y=0.2, zero_y=-4)
    back = QuantParams.from_dict(params.to_dict())
    assert np.array_equal(back.delta_w, params.delta_w)
    assert back.zero_y == -4
