"""Progressive bit-grained prediction of high-scoring attention keys.

Instead of computing every query-key dot product at full precision, the
predictor streams key magnitude planes from the most significant bit down,
maintaining partial integer scores for a shrinking survivor set.  After each
round the best partial score sets a threshold (best minus a slack of
``alpha_r * radius``) and keys that can no longer reach it are dropped, so
low-scoring keys cost one or two bit planes of traffic rather than eight.

Round ``r`` (1-based) fetches magnitude plane ``8 - r``; round 1 also
fetches the sign plane for every candidate, and the truncated query is
fetched once.  Two filtering modes exist:

* ``"estimate"`` compares the partial score itself against the threshold,
  treating it as a cheap estimate of the final score;
* ``"upper"`` adds the largest contribution the unseen planes could still
  make (every remaining magnitude bit set), so a key is dropped only when
  even its upper bound falls below the threshold.

A round whose threshold does not exceed the worst survivor skips the compare
stage entirely (the round is "gated"); an infinite ``radius`` gates every
round, which turns the predictor into an exact keep-all pass.  The survivor
holding the best score can never be dropped, so the result is never empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .planes import SignMagnitudeTensor

_KEY_BITS = 8


@dataclass
class PredictorConfig:
    """Schedule and scaling knobs for one prediction pass.

    ``alpha`` may be a scalar reused every round or one value per round.
    ``scale_q`` and ``scale_k`` are the quantization steps of the query and
    key codes; scores are reported on the real scale including the
    ``1 / sqrt(d)`` attention normalizer.
    """

    rounds: int = 4
    alpha: Union[float, Sequence[float]] = 0.55
    radius: float = 3.0
    q_bits: int = 4
    bound_mode: str = "upper"
    scale_q: float = 1.0
    scale_k: float = 1.0

    def alphas(self) -> np.ndarray:
        if np.isscalar(self.alpha):
            return np.full(self.rounds, float(self.alpha))
        arr = np.asarray(self.alpha, dtype=np.float64)
        if arr.shape != (self.rounds,):
            raise ValueError(f"need one alpha per round, got shape {arr.shape}")
        return arr

    def validate(self) -> None:
        if not 1 <= self.rounds <= _KEY_BITS - 1:
            raise ValueError(f"rounds must be in 1..{_KEY_BITS - 1}, got {self.rounds}")
        if not 1 <= self.q_bits <= _KEY_BITS:
            raise ValueError(f"q_bits must be in 1..{_KEY_BITS}, got {self.q_bits}")
        if not (self.radius >= 0 or math.isinf(self.radius)):
            raise ValueError(f"radius must be nonnegative, got {self.radius}")
        if self.bound_mode not in ("estimate", "upper"):
            raise ValueError(f"unknown bound_mode {self.bound_mode!r}")
        if self.scale_q <= 0 or self.scale_k <= 0:
            raise ValueError("scale_q and scale_k must be positive")
        if np.any(self.alphas() < 0):
            raise ValueError("alpha values must be nonnegative")


@dataclass
class PredictionResult:
    """Survivors, their partial scores, and the traffic spent finding them."""

    survivors: np.ndarray
    scores: np.ndarray
    candidates: int
    rounds_run: int
    gated_rounds: int
    k_bits: int
    sign_bits: int
    q_bits_fetched: int
    survivor_curve: list[int]

    @property
    def total_bits(self) -> int:
        return self.k_bits + self.sign_bits + self.q_bits_fetched


def truncate_query(q: np.ndarray, q_bits: int) -> np.ndarray:
    """Keep the top ``q_bits`` magnitude bits of an 8-bit signed query."""
    if not 1 <= q_bits <= _KEY_BITS:
        raise ValueError(f"q_bits must be in 1..{_KEY_BITS}, got {q_bits}")
    q = np.asarray(q)
    if not np.issubdtype(q.dtype, np.integer):
        raise ValueError(f"query must be integer codes, got {q.dtype}")
    q = q.astype(np.int64)
    shift = _KEY_BITS - q_bits
    return np.sign(q) * (np.abs(q) >> shift)


def threshold(scores: np.ndarray, alpha_r: float, radius: float) -> tuple[float, bool]:
    """Per-round cutoff and whether the compare stage can be skipped.

    Returns ``(theta, gated)`` with ``theta = max(scores) - alpha_r * radius``.
    The round is gated when no survivor falls below ``theta``.
    """
    slack = math.inf if math.isinf(radius) else float(alpha_r) * float(radius)
    best = float(scores.max())
    theta = -math.inf if math.isinf(slack) else best - slack
    return theta, bool(theta <= float(scores.min()))


def predict(
    q: np.ndarray, keys: SignMagnitudeTensor, config: PredictorConfig
) -> PredictionResult:
    """Run the progressive rounds of one query against a bank of keys.

    ``keys`` holds one 8-bit key per row; ``q`` is the signed 8-bit query
    code.  Returns the surviving key indices in ascending order along with
    their scaled partial scores.
    """
    config.validate()
    if not isinstance(keys, SignMagnitudeTensor) or keys.bit_width != _KEY_BITS:
        raise ValueError("keys must be an 8-bit SignMagnitudeTensor")
    q = np.asarray(q)
    if q.ndim != 1 or q.shape[0] != keys.cols:
        raise ValueError(f"query shape {q.shape} does not match key width {keys.cols}")
    if not np.issubdtype(q.dtype, np.integer) or np.abs(q).max(initial=0) > 127:
        raise ValueError("query must be signed 8-bit integer codes")

    n, d = keys.shape
    qhat = truncate_query(q, config.q_bits)
    shift = _KEY_BITS - config.q_bits
    eff_scale = config.scale_q * (1 << shift) * config.scale_k / math.sqrt(d)
    qhat_l1 = int(np.abs(qhat).sum())
    alphas = config.alphas()
    sign_factor = (1 - 2 * keys.sign.astype(np.int64))

    partial = np.zeros(n, dtype=np.int64)
    surv = np.arange(n)
    gated_rounds = 0
    k_bits = 0
    sign_bits = n * d
    curve: list[int] = []
    for r in range(1, config.rounds + 1):
        k_bits += surv.shape[0] * d
        plane = keys.magnitude[_KEY_BITS - 1 - r][surv].astype(np.int64)
        contrib = (plane * sign_factor[surv]) @ qhat
        partial[surv] += contrib << (_KEY_BITS - 1 - r)
        scores = partial[surv] * eff_scale
        theta, gated = threshold(scores, alphas[r - 1], config.radius)
        if gated:
            gated_rounds += 1
        else:
            if config.bound_mode == "upper":
                headroom = qhat_l1 * ((1 << (_KEY_BITS - 1 - r)) - 1) * eff_scale
                keep = scores + headroom >= theta
            else:
                keep = scores >= theta
            surv = surv[keep]
        curve.append(int(surv.shape[0]))

    return PredictionResult(
        survivors=surv,
        scores=partial[surv] * eff_scale,
        candidates=n,
        rounds_run=config.rounds,
        gated_rounds=gated_rounds,
        k_bits=k_bits,
        sign_bits=sign_bits,
        q_bits_fetched=config.q_bits * d,
        survivor_curve=curve,
    )


def exact_scores(
    q: np.ndarray,
    keys: SignMagnitudeTensor,
    scale_q: float = 1.0,
    scale_k: float = 1.0,
) -> np.ndarray:
    """Full-precision scaled scores, the oracle the predictor approximates."""
    dots = keys.values().astype(np.int64) @ np.asarray(q, dtype=np.int64)
    return dots * (scale_q * scale_k / math.sqrt(keys.cols))


def exact_topk(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k best scores, descending; ties go to the lower index."""
    scores = np.asarray(scores)
    if not 0 <= k <= scores.shape[0]:
        raise ValueError(f"k={k} outside 0..{scores.shape[0]}")
    return np.argsort(-scores, kind="stable")[:k]


def recall(predicted: np.ndarray, oracle: np.ndarray) -> float:
    """Fraction of oracle indices present in the predicted set."""
    oracle_set = set(int(i) for i in np.asarray(oracle).ravel())
    if not oracle_set:
        return 1.0
    hit = oracle_set & set(int(i) for i in np.asarray(predicted).ravel())
    return len(hit) / len(oracle_set)
