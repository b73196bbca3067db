"""Variance-preserving noise schedule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["DiffusionSchedule"]


BETA_CAP = 0.999


@dataclass(frozen=True)
class DiffusionSchedule:
    """Discrete VP schedule with ``T`` steps.

    ``beta[t]`` for ``t = 1..T`` interpolates linearly between
    ``beta_min / T`` and ``beta_max / T`` (the continuous-time VP-SDE rates
    0.1 and 20 by default), so ``T = 1000`` gives the familiar 1e-4 .. 0.02
    and shorter schedules still end near pure noise. ``beta`` is capped at
    0.999 so very short schedules stay valid. Index 0 holds ``beta = 0``,
    ``alpha_bar = 1``.
    """

    T: int = 1000
    beta_min: float = 0.1
    beta_max: float = 20.0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")

    @property
    def beta(self) -> np.ndarray:
        if self.T == 1:
            b = np.array([self.beta_min])
        else:
            frac = np.arange(self.T) / (self.T - 1)
            b = (self.beta_min + frac * (self.beta_max - self.beta_min)) / self.T
        # very short schedules would otherwise reach beta >= 1
        return np.concatenate([[0.0], np.minimum(b, BETA_CAP)])

    @property
    def alpha_bar(self) -> np.ndarray:
        return np.cumprod(1.0 - self.beta)

    def sigma(self, t) -> np.ndarray:
        """Marginal noise std ``sqrt(1 - alpha_bar_t)``."""
        return np.sqrt(1.0 - self.alpha_bar[t])

    def drift(self, x, t):
        """``f_t(x) = -beta_t x / 2``."""
        return -0.5 * self.beta[t] * x

    def diffusion(self, t):
        """``g_t = sqrt(beta_t)``."""
        return np.sqrt(self.beta[t])

    def to_dict(self) -> dict:
        return {"T": self.T, "beta_min": self.beta_min, "beta_max": self.beta_max}
