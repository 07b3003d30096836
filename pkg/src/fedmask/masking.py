"""Gradient clipping, noise calibration, and one-time-pad masking.

A client update travels as

    h = encode(clip(g) + e) + A*s  (mod q)

where s is a fresh uniform mask vector, A the public expansion matrix
and e centered Gaussian noise.  Masks of an aggregated batch cancel
exactly once the batch's mask sum is recovered:

    decode(sum(h_i) - A*sum(s_i)) == sum(clip(g_i) + e_i)

up to fixed-point quantization only.

Noise is calibrated through Renyi differential privacy.  For a client
included at most ``rounds_budget`` times, noise variance

    sigma2 = rounds_budget * clip_norm^2 * alpha / (2 * epsilon_budget)

keeps the order-``alpha`` Renyi divergence of the whole run under
``epsilon_budget``; the per-client draw uses variance sigma2 / batch
(the batch sum then carries the full sigma2).  A (epsilon, delta)
target converts through

    dp_epsilon = rdp_epsilon(alpha) + log(1/delta) / (alpha - 1)

minimized over a standard grid of orders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from fedmask.field import FieldVec, FixedPointCodec, PublicMatrix

__all__ = [
    "DpPlan",
    "alpha_grid",
    "calibrate_sigma2",
    "clip_update",
    "dp_epsilon_of",
    "dp_from_rdp",
    "draw_noise",
    "mask_update",
    "max_inclusions",
    "rdp_epsilon",
    "unmask",
]


# ---- clipping ----


def clip_update(gradient: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale a vector down so its L2 norm is at most clip_norm."""
    if clip_norm <= 0:
        raise ValueError("clip_norm must be positive")
    g = np.asarray(gradient, dtype=np.float64)
    norm = float(np.linalg.norm(g))
    return g / max(1.0, norm / clip_norm)


# ---- calibration ----


def calibrate_sigma2(
    rounds_budget: int, clip_norm: float, alpha: float, epsilon_budget: float
) -> float:
    """Noise variance meeting an order-alpha Renyi budget over the run."""
    if rounds_budget < 1 or clip_norm <= 0 or alpha <= 1 or epsilon_budget <= 0:
        raise ValueError("invalid calibration inputs")
    return rounds_budget * clip_norm**2 * alpha / (2.0 * epsilon_budget)


def rdp_epsilon(alpha: float, rounds_budget: int, sigma2: float, clip_norm: float) -> float:
    """Accumulated order-alpha Renyi divergence of the Gaussian mechanism."""
    if sigma2 <= 0:
        return math.inf
    return alpha * rounds_budget * clip_norm**2 / (2.0 * sigma2)


def dp_epsilon_of(
    alpha: float, sigma2: float, rounds_budget: int, clip_norm: float, delta: float
) -> float:
    """Convert a Renyi guarantee at order alpha to an (epsilon, delta) bound."""
    return rdp_epsilon(alpha, rounds_budget, sigma2, clip_norm) + math.log(1.0 / delta) / (
        alpha - 1.0
    )


def alpha_grid() -> Tuple[float, ...]:
    """Search grid: quarter steps on [1.25, 64] plus integers to 256."""
    fine = [1.25 + 0.25 * i for i in range(int((64 - 1.25) / 0.25) + 1)]
    coarse = [float(a) for a in range(65, 257)]
    return tuple(fine + coarse)


def dp_from_rdp(
    epsilon_dp: float, delta: float, rounds_budget: int, clip_norm: float
) -> Tuple[float, float]:
    """Smallest feasible noise variance for an (epsilon, delta) target.

    Returns (alpha, sigma2) minimizing sigma2 over the order grid.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if epsilon_dp <= 0:
        raise ValueError("epsilon_dp must be positive")
    best: Optional[Tuple[float, float]] = None
    log_term = math.log(1.0 / delta)
    for alpha in alpha_grid():
        budget = epsilon_dp - log_term / (alpha - 1.0)
        if budget <= 0:
            continue
        sigma2 = calibrate_sigma2(rounds_budget, clip_norm, alpha, budget)
        if best is None or sigma2 < best[1]:
            best = (alpha, sigma2)
    if best is None:
        raise ValueError(
            f"no order in the grid meets epsilon_dp={epsilon_dp} at delta={delta}"
        )
    return best


def max_inclusions(
    horizon: int, agg_batch: int, cluster_size: int, count_slack: int
) -> int:
    """Per-client inclusion budget over a run of ``horizon`` rounds."""
    if horizon < 1 or agg_batch < 1 or cluster_size < 1 or count_slack < 0:
        raise ValueError("invalid inclusion budget inputs")
    return math.ceil(horizon * agg_batch / cluster_size) + count_slack


# ---- noise ----


def draw_noise(
    sigma2: float,
    agg_batch: int,
    dim: int,
    rng: np.random.Generator,
    max_abs: Optional[float] = None,
) -> np.ndarray:
    """Per-client Gaussian noise with variance sigma2 / agg_batch per coordinate.

    When ``max_abs`` is given, out-of-range coordinates are redrawn so the
    noisy update stays encodable; the bound should sit several standard
    deviations out, where the redraw probability is negligible.
    """
    if sigma2 < 0 or agg_batch < 1:
        raise ValueError("invalid noise parameters")
    if sigma2 == 0:
        return np.zeros(dim)
    std = math.sqrt(sigma2 / agg_batch)
    e = rng.normal(0.0, std, size=dim)
    if max_abs is not None:
        if max_abs <= 0:
            raise ValueError("max_abs must be positive")
        for _ in range(64):
            bad = np.abs(e) > max_abs
            if not bad.any():
                break
            e[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        else:
            raise ValueError("noise resampling failed; max_abs too tight for sigma2")
    return e


# ---- masking ----


@dataclass(frozen=True)
class DpPlan:
    """Resolved privacy parameters for one run."""

    clip_norm: float
    rounds_budget: int
    alpha: float
    sigma2: float
    epsilon_budget: float  # Renyi budget at order alpha
    dp_epsilon: Optional[float] = None
    dp_delta: Optional[float] = None

    @classmethod
    def from_rdp_budget(
        cls, epsilon_budget: float, alpha: float, rounds_budget: int, clip_norm: float
    ) -> "DpPlan":
        sigma2 = calibrate_sigma2(rounds_budget, clip_norm, alpha, epsilon_budget)
        return cls(
            clip_norm=clip_norm,
            rounds_budget=rounds_budget,
            alpha=alpha,
            sigma2=sigma2,
            epsilon_budget=epsilon_budget,
        )

    @classmethod
    def from_dp_target(
        cls, epsilon_dp: float, delta: float, rounds_budget: int, clip_norm: float
    ) -> "DpPlan":
        alpha, sigma2 = dp_from_rdp(epsilon_dp, delta, rounds_budget, clip_norm)
        return cls(
            clip_norm=clip_norm,
            rounds_budget=rounds_budget,
            alpha=alpha,
            sigma2=sigma2,
            epsilon_budget=rdp_epsilon(alpha, rounds_budget, sigma2, clip_norm),
            dp_epsilon=epsilon_dp,
            dp_delta=delta,
        )

    @classmethod
    def off(cls, clip_norm: float, rounds_budget: int = 1) -> "DpPlan":
        """Disable noise (testing and no-privacy baselines)."""
        return cls(
            clip_norm=clip_norm,
            rounds_budget=rounds_budget,
            alpha=2.0,
            sigma2=0.0,
            epsilon_budget=math.inf,
        )


def mask_update(
    noisy_update: np.ndarray,
    mask: FieldVec,
    matrix: PublicMatrix,
    codec: FixedPointCodec,
) -> FieldVec:
    """Encode a noisy update and add the expanded mask."""
    encoded = codec.encode(noisy_update)
    return encoded.add(matrix.mat_vec(mask))


def unmask(
    masked_sum: FieldVec,
    mask_sum: FieldVec,
    matrix: PublicMatrix,
    codec: FixedPointCodec,
) -> np.ndarray:
    """Strip an aggregated mask and decode the summed updates."""
    return codec.decode(masked_sum.sub(matrix.mat_vec(mask_sum)))
