"""Reverse preference growing.

Starting from a draw of the non-preference state, each reverse step
turns predicted log ratios at the current state into a reverse row with
:func:`fadegrow.process.reverse_rows` and samples the next state.  The
last step's full row is the grown preference distribution of the user.

Guidance follows the form ``(1 + w) s_user - w s_phi``, so ``w = 0`` is
the plain conditional model.  The alternative parameterization
``w' s_user + (1 - w') s_phi`` maps to this one via ``w' = 1 + w``.

All randomness is pre-drawn per user from ``default_rng([seed, user])``
so a user's trajectory does not depend on which batch it lands in.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import process
from . import scorenet as sn
from .errors import ConfigError, DimensionError
from .fading import FadingMatrix
from .schedule import Schedule

CHUNK = 256

RatioFn = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class SamplerConfig:
    steps: int | None = None
    w: float = 0.0
    n_trajectories: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.steps is not None and self.steps < 1:
            raise ConfigError("sampler steps must be positive")
        if not (np.isfinite(self.w) and self.w >= 0):
            raise ConfigError("guidance strength w must be finite and nonnegative")
        if self.n_trajectories < 1:
            raise ConfigError("need at least one trajectory")

    def grid(self, schedule: Schedule) -> np.ndarray:
        """Decreasing integer grid steps from ``T`` down to ``0``."""
        t = schedule.num_steps
        s = t if self.steps is None else self.steps
        if s > t:
            raise ConfigError(f"cannot take {s} reverse steps on a {t}-step grid")
        return np.round(np.linspace(t, 0, s + 1)).astype(np.int64)


def personalize(s_user, s_nonpref, w: float) -> np.ndarray:
    """``(1 + w) s_user - w s_nonpref``."""
    s_user = np.asarray(s_user, dtype=np.float64)
    s_nonpref = np.asarray(s_nonpref, dtype=np.float64)
    if s_user.shape != s_nonpref.shape:
        raise DimensionError("guidance inputs differ in shape")
    if w == 0:
        return s_user.copy()
    return (1.0 + w) * s_user - w * s_nonpref


@dataclass(frozen=True)
class GrowResult:
    probs: np.ndarray
    x0: np.ndarray
    clamped: int
    rows: int


def _categorical(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    idx = (cdf < u[:, None] * cdf[:, -1:]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def grow(ratio_fn: RatioFn, E: FadingMatrix, schedule: Schedule, grid, uniforms, start_probs) -> GrowResult:
    """Run reverse growing for a batch of trajectories.

    ``uniforms`` has shape ``(B, len(grid))``: column 0 draws the starting
    state from ``start_probs``, column ``i`` samples after reverse step
    ``i``.  ``ratio_fn(x, k)`` returns ``(B, M)`` log ratios at states
    ``x`` and grid step ``k``.
    """
    grid = np.asarray(grid, dtype=np.int64)
    if grid.size < 2 or np.any(np.diff(grid) >= 0):
        raise ConfigError("reverse grid must be strictly decreasing with at least one step")
    u = np.asarray(uniforms, dtype=np.float64)
    b = u.shape[0]
    x = _categorical(np.broadcast_to(start_probs, (b, E.corpus_size)), u[:, 0])
    clamped = 0
    probs = None
    for i in range(grid.size - 1):
        k_t, k_s = grid[i], grid[i + 1]
        lr = ratio_fn(x, int(k_t))
        rows = process.reverse_rows(E, x, schedule.alpha_at(k_s), schedule.alpha_at(k_t), lr)
        clamped += int(rows.clamped.sum())
        probs = rows.probs
        x = _categorical(probs, u[:, i + 1])
    return GrowResult(probs, x, clamped, b * (grid.size - 1))


def exact_ratio_fn(E: FadingMatrix, schedule: Schedule, p0) -> RatioFn:
    """Ratios of the true marginals for a known clean distribution ``p0``."""
    return lambda x, k: process.exact_log_ratios(E, schedule.alpha_at(k), p0, x)


def model_ratio_fn(field: sn.ScoreField, users: np.ndarray, w: float) -> RatioFn:
    """Guided learned ratios for precomputed user vectors ``users``."""
    phi = np.broadcast_to(field.params["phi"], users.shape)

    def fn(x, k):
        s = sn.score_batch(field, x, k, users)
        if w == 0:
            return s.astype(np.float64)
        return personalize(s, sn.score_batch(field, x, k, phi), w)

    return fn


def user_uniforms(seed: int, user_ids, n_traj: int, n_cols: int) -> np.ndarray:
    """Per-user pre-drawn uniforms, shape ``(len(user_ids), n_traj, n_cols)``."""
    return np.stack([np.random.default_rng([seed, int(i)]).random((n_traj, n_cols)) for i in user_ids])


def rank_items(probs, n_items: int) -> np.ndarray:
    """Real items sorted by descending probability, ties by ascending id."""
    p = np.asarray(probs)[..., :n_items]
    ids = np.arange(n_items)
    if p.ndim == 1:
        return np.lexsort((ids, -p))
    return np.stack([np.lexsort((ids, -row)) for row in p])


@dataclass(frozen=True)
class Generation:
    probs: np.ndarray
    ranking: np.ndarray
    x0: np.ndarray
    clamped: int
    rows: int


def generate_batch(field: sn.ScoreField, hist, user_ids, config: SamplerConfig, schedule: Schedule,
                   pbar, E: FadingMatrix, threads: int = 1) -> Generation:
    """Grow preferences for many users.

    Users are processed in fixed chunks of ``CHUNK`` rows; ``threads``
    only changes how many chunks run at once.  ``probs`` is the final
    distribution averaged over ``config.n_trajectories`` trajectories.
    """
    hist = np.asarray(hist, dtype=np.int64)
    user_ids = np.asarray(user_ids, dtype=np.int64)
    if hist.shape[0] != user_ids.size:
        raise DimensionError("one user id per history row")
    grid = config.grid(schedule)
    k = config.n_trajectories
    unif = user_uniforms(config.seed, user_ids, k, grid.size)
    m = E.corpus_size
    pbar = np.asarray(pbar, dtype=np.float64)

    def run(lo):
        hi = min(lo + CHUNK, user_ids.size)
        users = sn.encode_users(field, hist[lo:hi], np.zeros(hi - lo, dtype=bool))
        users = np.repeat(users, k, axis=0)
        res = grow(model_ratio_fn(field, users, config.w), E, schedule, grid,
                   unif[lo:hi].reshape(-1, grid.size), pbar)
        probs = res.probs.reshape(hi - lo, k, m).mean(axis=1)
        return probs, res.x0.reshape(hi - lo, k)[:, 0], res.clamped, res.rows

    starts = list(range(0, user_ids.size, CHUNK))
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    probs = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, m))
    x0 = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, dtype=np.int64)
    return Generation(probs, rank_items(probs, field.config.n_items) if len(probs) else probs,
                      x0, sum(p[2] for p in parts), sum(p[3] for p in parts))


def generate(field: sn.ScoreField, ctx: sn.UserContext, config: SamplerConfig, schedule: Schedule,
             pbar, E: FadingMatrix, user_id: int = 0) -> Generation:
    """Single-user convenience wrapper around :func:`generate_batch`."""
    if ctx.is_nonpref:
        raise ConfigError("generation needs a real user context")
    hist = sn.pad_histories([ctx.history], field.config.history_len)
    g = generate_batch(field, hist, [user_id], config, schedule, pbar, E)
    return Generation(g.probs[0], g.ranking[0], g.x0, g.clamped, g.rows)
