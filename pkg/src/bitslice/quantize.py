"""INT8 quantization with per-row weight scales and a fused output rescale.

Weights are quantized symmetrically per output channel (matrix row), so a
row of ``W_q`` times a quantized activation column accumulates in int32/int64
and is brought back to int8 by a single affine per row.  Activations use an
asymmetric per-tensor uint8 mapping; query/key/value tensors, which need a
signed layout downstream, use the symmetric per-tensor variant.

All rounding is round-half-away-from-zero, applied uniformly so that every
reference computation in the tests reproduces the production path bit for
bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest with ties away from zero (numpy rounds ties to even)."""
    x = np.asarray(x)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_weights(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric per-row int8 weights.

    Returns ``(w_q, delta_w)`` with ``w ~= delta_w[:, None] * w_q``.  A row of
    zeros gets step 1.0 so the scale stays invertible.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"expected a 2-D weight matrix, got shape {w.shape}")
    amax = np.abs(w).max(axis=1)
    delta = np.where(amax > 0, amax / 127.0, 1.0)
    q = np.clip(round_half_away(w / delta[:, None]), -127, 127).astype(np.int8)
    return q, delta


def quantize_activations(x: np.ndarray) -> tuple[np.ndarray, float, int]:
    """Asymmetric per-tensor uint8 activations.

    Returns ``(x_q, delta_x, zero_x)`` with ``x ~= delta_x * (x_q - zero_x)``.
    A constant tensor degenerates to ``(1.0, 0)``.
    """
    x = np.asarray(x, dtype=np.float64)
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        delta, zero = 1.0, 0
    else:
        delta = (hi - lo) / 255.0
        zero = int(np.clip(round_half_away(-lo / delta), 0, 255))
    q = np.clip(round_half_away(x / delta + zero), 0, 255).astype(np.uint8)
    return q, delta, zero


def encode_activations(x: np.ndarray, delta_x: float, zero_x: int) -> np.ndarray:
    """Quantize with frozen calibration parameters (values outside clip)."""
    if delta_x <= 0:
        raise ValueError(f"delta_x must be positive, got {delta_x}")
    x = np.asarray(x, dtype=np.float64)
    return np.clip(round_half_away(x / delta_x + zero_x), 0, 255).astype(np.uint8)


def quantize_symmetric(x: np.ndarray) -> tuple[np.ndarray, float]:
    """Symmetric per-tensor int8 (zero point 0), for signed tensors."""
    x = np.asarray(x, dtype=np.float64)
    amax = float(np.abs(x).max())
    delta = amax / 127.0 if amax > 0 else 1.0
    q = np.clip(round_half_away(x / delta), -127, 127).astype(np.int8)
    return q, delta


def output_range_params(lo: float, hi: float) -> tuple[float, int]:
    """Signed affine output mapping of ``[lo, hi]`` onto ``[-127, 127]``.

    Returns ``(delta_y, zero_y)`` with ``y ~= delta_y * (y_q - zero_y)``.
    """
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
        return 1.0, 0
    delta = (hi - lo) / 254.0
    zero = int(round_half_away(-127.0 - lo / delta))
    return delta, zero


def dequantize_activations(x_q: np.ndarray, delta_x: float, zero_x: int) -> np.ndarray:
    return (x_q.astype(np.float64) - zero_x) * delta_x


def dequantize_output(y_q: np.ndarray, delta_y: float, zero_y: int) -> np.ndarray:
    return (y_q.astype(np.float64) - zero_y) * delta_y


@dataclass
class QuantParams:
    """Everything needed to run one int8 linear layer and rescale its output."""

    delta_w: np.ndarray
    delta_x: float
    zero_x: int
    delta_y: float
    zero_y: int

    def to_dict(self) -> dict:
        return {
            "delta_w": [float(d) for d in np.atleast_1d(self.delta_w)],
            "delta_x": float(self.delta_x),
            "zero_x": int(self.zero_x),
            "delta_y": float(self.delta_y),
            "zero_y": int(self.zero_y),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantParams":
        return cls(
            delta_w=np.asarray(d["delta_w"], dtype=np.float64),
            delta_x=float(d["delta_x"]),
            zero_x=int(d["zero_x"]),
            delta_y=float(d["delta_y"]),
            zero_y=int(d["zero_y"]),
        )


@dataclass
class FusedAffine:
    """Per-row scale/bias folding dequant, zero-point correction and requant.

    For accumulator ``acc_c = sum_j w_q[c, j] * x_q[j]`` the rescaled output is
    ``clamp(round(scale_c * acc_c + bias_c), -127, 127)``.  The bias absorbs
    the activation zero point through the exact int64 row sums of ``w_q``, so
    no zero-point term is left in the inner loop.
    """

    scale: np.ndarray
    bias: np.ndarray
    row_sums: np.ndarray = field(repr=False, default=None)


def fuse_rescale(params: QuantParams, w_q: np.ndarray) -> FusedAffine:
    w_q = np.asarray(w_q)
    row_sums = w_q.astype(np.int64).sum(axis=1)
    scale = np.asarray(params.delta_w, dtype=np.float64) * params.delta_x / params.delta_y
    bias = params.zero_y - scale * params.zero_x * row_sums
    return FusedAffine(scale=scale, bias=bias, row_sums=row_sums)


def apply_fused(acc: np.ndarray, fused: FusedAffine) -> np.ndarray:
    """Rescale integer accumulators to int8 output codes.

    ``acc`` has one row per output channel; columns broadcast against the
    per-row affine.
    """
    acc = np.asarray(acc, dtype=np.float64)
    scale = fused.scale
    bias = fused.bias
    if acc.ndim == 2:
        scale = scale[:, None]
        bias = bias[:, None]
    return np.clip(round_half_away(scale * acc + bias), -127, 127).astype(np.int8)
