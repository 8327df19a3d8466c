"""Retention probability schedules on a discrete time grid.

Two forms are provided.  ``Geometric`` integrates a geometrically
growing rate, ``alpha(t) = exp(-beta_min**(1-t) * beta_max**t)``.
``Linear`` decays retention linearly, ``alpha(t) = 1 - (1-beta_scale)*t``,
which corresponds to the cumulative rate ``-log(1 - (1-beta_scale)*t)``.

Retention is clamped to ``[EPS, 1-EPS]`` so that the log-odds used by
reference ratios stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError

EPS = 1e-6

GEOMETRIC = "geometric"
LINEAR = "linear"


@dataclass(frozen=True)
class Schedule:
    kind: str = GEOMETRIC
    beta_min: float = 1e-3
    beta_max: float = 10.0
    beta_scale: float = 0.01
    num_steps: int = 20

    def __post_init__(self):
        if self.kind not in (GEOMETRIC, LINEAR):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.num_steps < 1:
            raise ConfigError("num_steps must be positive")
        if self.kind == GEOMETRIC and not (0 < self.beta_min < self.beta_max):
            raise ConfigError("need 0 < beta_min < beta_max")
        if self.kind == LINEAR and not (0 < self.beta_scale < 1):
            raise ConfigError("beta_scale must lie in (0, 1)")

    @property
    def grid(self) -> np.ndarray:
        """Timesteps ``k / T`` for ``k = 0..T``."""
        return np.arange(self.num_steps + 1) / self.num_steps

    def time(self, k) -> np.ndarray | float:
        return np.asarray(k) / self.num_steps

    def alpha(self, t):
        return alpha(self, t)

    def beta(self, t):
        return beta(self, t)

    def alpha_at(self, k):
        """Retention at integer grid step(s) ``k``."""
        return alpha(self, np.asarray(k) / self.num_steps)


def _check_t(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(t)) or np.any((t < 0) | (t > 1)):
        raise DomainError("t must lie in [0, 1]")
    return t


def _unwrap(x):
    return float(x) if np.ndim(x) == 0 else x


def cumulative_rate(sched: Schedule, t):
    """``-log alpha(t)`` before clamping."""
    t = _check_t(t)
    if sched.kind == GEOMETRIC:
        return _unwrap(sched.beta_min ** (1 - t) * sched.beta_max**t)
    return _unwrap(-np.log1p(-(1 - sched.beta_scale) * t))


def alpha(sched: Schedule, t):
    """Retention probability at continuous time ``t``, clamped."""
    t = _check_t(t)
    if sched.kind == GEOMETRIC:
        a = np.exp(-(sched.beta_min ** (1 - t)) * sched.beta_max**t)
    else:
        a = 1.0 - (1.0 - sched.beta_scale) * t
    return _unwrap(np.clip(a, EPS, 1 - EPS))


def beta(sched: Schedule, t):
    """Rate ``-d/dt log alpha(t)``; strictly positive."""
    t = _check_t(t)
    if sched.kind == GEOMETRIC:
        b = sched.beta_min ** (1 - t) * sched.beta_max**t * math.log(sched.beta_max / sched.beta_min)
    else:
        c = 1.0 - sched.beta_scale
        b = c / (1.0 - c * t)
    return _unwrap(b)
