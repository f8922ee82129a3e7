"""Forward-process noise schedule and closed-form noising.

Steps are 1-indexed: beta[t] for t in 1..T is linearly interpolated between
beta_min and beta_max, alpha_bar[t] is the running product of (1 - beta).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    t_steps: int
    beta: np.ndarray  # length T, beta[t-1] is step t
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def beta_at(self, t: int) -> float:
        return float(self.beta[t - 1])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        return float(self.alpha_bar[t - 1])


def make_schedule(t_steps: int, beta_min: float, beta_max: float) -> NoiseSchedule:
    if t_steps < 1:
        raise ValueError(f"t_steps must be >= 1, got {t_steps}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    if t_steps == 1:
        beta = np.array([beta_min])
    else:
        beta = np.linspace(beta_min, beta_max, t_steps)
    alpha = 1.0 - beta
    return NoiseSchedule(t_steps=t_steps, beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))


def q_sample(z0: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Z_t = sqrt(alpha_bar_t) * Z_0 + sqrt(1 - alpha_bar_t) * eps.

    ``t`` is a scalar or a per-sample array (first axis of z0), 1-indexed.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != z0.shape:
        raise ValueError(f"noise shape {eps.shape} != data shape {z0.shape}")
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > schedule.t_steps):
        raise ValueError(f"t must lie in [1, {schedule.t_steps}]")
    ab = schedule.alpha_bar[t_arr - 1]
    if t_arr.ndim == 1:
        ab = ab.reshape((-1,) + (1,) * (z0.ndim - 1))
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps
