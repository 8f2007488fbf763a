"""Noise-scale mathematics for consistency training.

Everything that lives purely in the sigma domain: the power-law discretized
noise grid, the skip/output/input/level preconditioning weights, the
adjacent-level loss weighting, the Pseudo-Huber distance, the discrete
lognormal level sampler, and the discretization-size curricula.

Levels are indexed 0..N-1 in code (grid[0] == sigma_min, grid[N-1] ==
sigma_max); a trainable adjacent pair is (i, i+1) with i <= N-2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor
from .tensor import Tensor


@dataclass(frozen=True)
class NoiseSchedule:
    """Noise-scale range and grid shape.

    ``sigma_data`` is the assumed data scale used by the preconditioning
    weights; ``n_levels`` is the discretization size N (>= 2).
    """

    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    sigma_data: float = 0.5
    n_levels: int = 2

    def __post_init__(self):
        if not 0.0 < self.sigma_min < self.sigma_max:
            raise ValueError(
                f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}"
            )
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.sigma_data <= 0:
            raise ValueError(f"sigma_data must be positive, got {self.sigma_data}")
        if self.n_levels < 2:
            raise ValueError(f"need at least 2 noise levels, got {self.n_levels}")


def sigma_grid(schedule: NoiseSchedule) -> np.ndarray:
    """Strictly increasing noise grid, power-law spaced in sigma^(1/rho).

    sigma_i = (sigma_min^(1/rho) + u_i * (sigma_max^(1/rho) - sigma_min^(1/rho)))^rho
    with u_i evenly spaced on [0, 1].  Endpoints are pinned exactly to
    sigma_min / sigma_max to remove floating-point pow drift.
    """
    n = schedule.n_levels
    inv_rho = 1.0 / schedule.rho
    lo = schedule.sigma_min**inv_rho
    hi = schedule.sigma_max**inv_rho
    ramp = np.arange(n, dtype=np.float64) / (n - 1)
    grid = (lo + ramp * (hi - lo)) ** schedule.rho
    grid[0] = schedule.sigma_min
    grid[-1] = schedule.sigma_max
    return grid


def scalings(sigma, schedule: NoiseSchedule):
    """Preconditioning weights (c_skip, c_out, c_in, c_noise) at ``sigma``.

    c_skip(sigma) = sigma_data^2 / ((sigma - sigma_min)^2 + sigma_data^2)
    c_out(sigma)  = sigma_data * (sigma - sigma_min) / sqrt(sigma_data^2 + sigma^2)
    c_in(sigma)   = 1 / sqrt(sigma^2 + sigma_data^2)
    c_noise(sigma) = ln(sigma) / 4

    These satisfy c_skip(sigma_min) = 1 and c_out(sigma_min) = 0 exactly, so
    the wrapped model is the identity at the lowest noise level.  Accepts a
    scalar or an ndarray of sigmas; sigma must lie in [sigma_min, sigma_max].
    """
    sig = np.asarray(sigma, dtype=np.float64)
    if np.any(sig < schedule.sigma_min) or np.any(sig > schedule.sigma_max):
        raise ValueError(
            f"sigma must lie in [{schedule.sigma_min}, {schedule.sigma_max}], got {sigma!r}"
        )
    sd2 = schedule.sigma_data**2
    delta = sig - schedule.sigma_min
    c_skip = sd2 / (delta**2 + sd2)
    c_out = schedule.sigma_data * delta / np.sqrt(sd2 + sig**2)
    c_in = 1.0 / np.sqrt(sig**2 + sd2)
    c_noise = np.log(sig) / 4.0
    return c_skip, c_out, c_in, c_noise


def loss_weight(i: int, grid: np.ndarray) -> float:
    """Adjacent-gap weighting 1 / (sigma_{i+1} - sigma_i) for 0-based ``i``."""
    n = len(grid)
    if not 0 <= i < n - 1:
        raise ValueError(f"level index {i} has no successor in a grid of {n} levels")
    return float(1.0 / (grid[i + 1] - grid[i]))


def pseudo_huber(x: Tensor, y: Tensor, c: float) -> Tensor:
    """Element-wise Pseudo-Huber distance sqrt((x - y)^2 + c^2) - c.

    Smoothly interpolates between squared error / (2c) for small residuals
    and |residual| - c for large ones; differentiable everywhere for c > 0.
    Returns a tensor shaped like the inputs (reduction is the caller's job).
    """
    x, y = tensor.as_tensor(x), tensor.as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"pseudo_huber: shapes {x.shape} and {y.shape} differ")
    if c <= 0:
        raise ValueError(f"pseudo_huber constant must be positive, got {c}")
    r = tensor.sub(x, y)
    return tensor.sub(tensor.sqrt(tensor.add(tensor.mul(r, r), c * c)), c)


def pseudo_huber_constant(elements_per_window: int, coefficient: float = 0.00054) -> float:
    """Default distance constant c = coefficient * sqrt(D) for D-element windows."""
    if elements_per_window < 1:
        raise ValueError("window must have at least one element")
    return coefficient * math.sqrt(elements_per_window)


def level_weights(grid: np.ndarray, p_mean: float = -1.1, p_std: float = 2.0) -> np.ndarray:
    """Normalized sampling weights over adjacent level pairs (i, i+1).

    w_i is the lognormal mass between ln(sigma_i) and ln(sigma_{i+1}):
    erf((ln sigma_{i+1} - p_mean) / (sqrt(2) p_std)) - erf((ln sigma_i - p_mean) / (sqrt(2) p_std)).
    All weights are positive and sum to one.
    """
    denom = math.sqrt(2.0) * p_std
    z = [tensor.erf((math.log(s) - p_mean) / denom) for s in grid]
    w = np.array([z[i + 1] - z[i] for i in range(len(grid) - 1)], dtype=np.float64)
    return w / w.sum()


def sample_noise_level(
    grid: np.ndarray,
    rng: np.random.Generator,
    p_mean: float = -1.1,
    p_std: float = 2.0,
) -> int:
    """Draw a 0-based level index i in [0, N-2] by inverse CDF over level_weights."""
    w = level_weights(grid, p_mean, p_std)
    cdf = np.cumsum(w)
    idx = int(np.searchsorted(cdf, rng.random(), side="right"))
    return min(idx, len(grid) - 2)


CURRICULUM_KINDS = ("linear", "constant", "original", "exponential", "pretrain_exponential")


@dataclass(frozen=True)
class CurriculumSchedule:
    """Maps a training step k in [0, K] to the discretization size N(k).

    Kinds:
      linear                s0 + floor((s1 - s0) * k / K)
      constant              s1 throughout
      original              linear but starting from s0 = 2
      exponential           s0 doubling every floor(K / (log2(s1/s0) + 1)) steps,
                            capped at s1
      pretrain_exponential  N = 2 for k < pretrain_fraction * K, then the
                            exponential ramp over the remaining steps
    """

    kind: str = "linear"
    s0: int = 10
    s1: int = 200
    total_steps: int = 1
    pretrain_fraction: float = 1.0 / 3.0

    def __post_init__(self):
        if self.kind not in CURRICULUM_KINDS:
            raise ValueError(f"unknown curriculum kind {self.kind!r}; choose from {CURRICULUM_KINDS}")
        if self.s0 < 2 or self.s1 < self.s0:
            raise ValueError(f"need 2 <= s0 <= s1, got s0={self.s0}, s1={self.s1}")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if not 0.0 < self.pretrain_fraction < 1.0:
            raise ValueError("pretrain_fraction must lie in (0, 1)")


def _exponential_n(k: int, total: int, s0: int, s1: int) -> int:
    if s1 == s0:
        return s1
    period = max(1, int(total / (math.log2(s1 / s0) + 1.0)))
    return min(s0 * 2 ** (k // period), s1)


def curriculum_N(k: int, schedule: CurriculumSchedule) -> int:
    """Discretization size at step ``k``; non-decreasing, N(K) == s1."""
    big_k = schedule.total_steps
    if not 0 <= k <= big_k:
        raise ValueError(f"step {k} outside [0, {big_k}]")
    kind = schedule.kind
    if kind == "constant":
        return schedule.s1
    if kind == "linear":
        return schedule.s0 + (schedule.s1 - schedule.s0) * k // big_k
    if kind == "original":
        return 2 + (schedule.s1 - 2) * k // big_k
    if kind == "exponential":
        return _exponential_n(k, big_k, schedule.s0, schedule.s1)
    # pretrain_exponential
    if k < schedule.pretrain_fraction * big_k:
        return 2
    k0 = math.ceil(schedule.pretrain_fraction * big_k)
    return _exponential_n(k - k0, big_k - k0, schedule.s0, schedule.s1)
