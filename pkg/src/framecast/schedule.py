"""Noise schedule and the forward (corruption) process.

The forward chain corrupts data step by step,

    x_t = sqrt(alpha_t) * x_{t-1} + sqrt(1 - alpha_t) * noise,

and composing steps 1..t gives the closed-form marginal

    x_t = sqrt(alpha_bar_t) * x_0 + sqrt(1 - alpha_bar_t) * noise,

with alpha_bar_t the cumulative product of the alphas. Steps are 1-based:
``t = 1`` is the first corruption step, ``t = T`` the last. Noise is always
caller-supplied so every consumer can thread an explicit seeded generator.

Both operations only multiply the input by scalar coefficients, so they
accept numpy arrays and torch tensors alike.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

DEFAULT_T_STEPS = 200
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step alpha values plus cached cumulative products.

    Immutable after construction; safe for unrestricted concurrent use.
    """

    t_steps: int
    alpha: np.ndarray
    alpha_bar: np.ndarray = field(default=None)

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        object.__setattr__(self, "alpha", alpha)
        if self.t_steps < 1 or alpha.shape != (self.t_steps,):
            raise ConfigurationError(
                f"alpha must have shape ({self.t_steps},), got {alpha.shape}"
            )
        if np.any(alpha <= 0.0) or np.any(alpha > 1.0):
            raise ConfigurationError("alpha values must lie in (0, 1]")
        if self.alpha_bar is None:
            object.__setattr__(self, "alpha_bar", np.cumprod(alpha))
        else:
            bar = np.asarray(self.alpha_bar, dtype=np.float64)
            object.__setattr__(self, "alpha_bar", bar)
            expected = np.cumprod(alpha)
            if bar.shape != alpha.shape or np.any(
                np.abs(bar - expected) > 1e-12 * np.abs(expected)
            ):
                raise ConfigurationError("alpha_bar inconsistent with alpha")
        if np.any(np.diff(self.alpha_bar) > 0.0):
            raise ConfigurationError("alpha_bar must be non-increasing")

    def alpha_at(self, t: int) -> float:
        self._check_step(t)
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        self._check_step(t)
        return float(self.alpha_bar[t - 1])

    def beta_at(self, t: int) -> float:
        return 1.0 - self.alpha_at(t)

    def _check_step(self, t: int) -> None:
        if not 1 <= t <= self.t_steps:
            raise IndexError(f"step {t} outside [1, {self.t_steps}]")

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.t_steps).encode())
        h.update(self.alpha.tobytes())
        return h.hexdigest()


def make_linear_schedule(
    t_steps: int = DEFAULT_T_STEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Linearly spaced betas; alpha_t = 1 - beta_t."""
    if t_steps < 1:
        raise ConfigurationError(f"t_steps must be >= 1, got {t_steps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigurationError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    steps = np.arange(1, t_steps + 1, dtype=np.float64)
    beta = beta_start + (beta_end - beta_start) * (steps - 1) / max(1, t_steps - 1)
    return NoiseSchedule(t_steps=t_steps, alpha=1.0 - beta)


def forward_step(x_prev, t: int, schedule: NoiseSchedule, noise):
    """One corruption step: sqrt(alpha_t) * x_prev + sqrt(1 - alpha_t) * noise."""
    a = schedule.alpha_at(t)
    return math.sqrt(a) * x_prev + math.sqrt(1.0 - a) * noise


def marginal(x0, t: int, schedule: NoiseSchedule, noise):
    """Closed-form corruption of x0 straight to step t."""
    ab = schedule.alpha_bar_at(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * noise
