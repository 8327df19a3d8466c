"""Transition algebra of preference fading and growing.

With an idempotent fading matrix ``E`` and retention ``alpha``, the
forward transition between times ``s < t`` is::

    P(t|s) = r I + (1 - r) E,        r = alpha_t / alpha_s

and its inverse swaps ``r`` for ``1/r``.  Everything here touches ``E``
only through :mod:`fadegrow.fading`, so rank-1 and rank-r matrices are
handled by the same code and nothing is densified outside of the
``debug_dense`` oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fading
from .errors import (
    DegenerateReverse,
    DimensionError,
    DomainError,
    OrderingError,
    UnreachableState,
)
from .fading import FadingMatrix, NonPreferenceState

FORWARD = "forward"
INVERSE = "inverse"

DENSE_RATE_LIMIT = 64

# Test-only fault injection: flips the sign of the mixing term of P(t|s).
_FAULT_FLIP_SIGN = False


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    alpha_ratio: float
    fading: FadingMatrix
    direction: str = FORWARD

    @property
    def diag_coef(self) -> float:
        return self.alpha_ratio if self.direction == FORWARD else 1.0 / self.alpha_ratio

    @property
    def mix_coef(self) -> float:
        c = 1.0 - self.diag_coef
        return -c if _FAULT_FLIP_SIGN else c

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        return self.diag_coef * v + self.mix_coef * fading.apply(self.fading, v)

    def row(self, i: int) -> np.ndarray:
        out = self.mix_coef * fading.row(self.fading, i)
        out[i] += self.diag_coef
        return out

    def rows(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        out = self.mix_coef * fading.rows(self.fading, idx)
        out[np.arange(idx.size), idx] += self.diag_coef
        return out

    def debug_dense(self) -> np.ndarray:
        m = self.fading.corpus_size
        return self.diag_coef * np.eye(m) + self.mix_coef * fading.debug_dense(self.fading)


@dataclass(frozen=True, eq=False)
class RateMatrix:
    beta_t: float
    fading: FadingMatrix

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        return self.beta_t * (fading.apply(self.fading, v) - v)

    def row(self, i: int) -> np.ndarray:
        out = self.beta_t * fading.row(self.fading, i)
        out[i] -= self.beta_t
        return out

    def debug_dense(self) -> np.ndarray:
        m = self.fading.corpus_size
        return self.beta_t * (fading.debug_dense(self.fading) - np.eye(m))


def _check_pair(alpha_s, alpha_t):
    if not (np.isfinite(alpha_s) and np.isfinite(alpha_t)):
        raise DomainError("retention must be finite")
    if alpha_t > alpha_s:
        raise OrderingError(f"alpha_t={alpha_t} exceeds alpha_s={alpha_s}")
    if not (0.0 < alpha_t and alpha_s <= 1.0):
        raise DomainError("need 0 < alpha_t <= alpha_s <= 1")


def forward_transition(E: FadingMatrix, alpha_s: float, alpha_t: float) -> TransitionMatrix:
    """``P(t|s)`` for retention values ``alpha_s >= alpha_t``."""
    _check_pair(alpha_s, alpha_t)
    fading.require_full_coverage(E)
    return TransitionMatrix(float(alpha_t) / float(alpha_s), E, FORWARD)


def inverse_transition(E: FadingMatrix, alpha_s: float, alpha_t: float) -> TransitionMatrix:
    """``P(t|s)^-1 = (alpha_s/alpha_t) I + (1 - alpha_s/alpha_t) E``."""
    _check_pair(alpha_s, alpha_t)
    fading.require_full_coverage(E)
    return TransitionMatrix(float(alpha_t) / float(alpha_s), E, INVERSE)


def rate_matrix(E: FadingMatrix, beta_t: float) -> RateMatrix:
    """Forward rate ``Q_t = beta(t) (E - I)``."""
    if not (np.isfinite(beta_t) and beta_t > 0):
        raise DomainError(f"rate must be positive, got {beta_t}")
    fading.require_full_coverage(E)
    return RateMatrix(float(beta_t), E)


def marginal(E: FadingMatrix, alpha_t: float, p0) -> np.ndarray:
    """Distribution at retention ``alpha_t`` starting from ``p0``."""
    p0 = np.asarray(p0, dtype=np.float64)
    return alpha_t * p0 + (1.0 - alpha_t) * fading.apply(E, p0)


# -- forward sampling ---------------------------------------------------------


def sample_forward(x0: int, alpha_t: float, pT: NonPreferenceState, rng) -> int:
    """Keep ``x0`` with probability ``alpha_t``, else draw from ``pT``."""
    if not 0 <= x0 < pT.size:
        raise DimensionError(f"item {x0} outside [0, {pT.size})")
    if rng.random() < alpha_t:
        return int(x0)
    cdf = np.cumsum(pT.normalized)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), pT.size - 1))


def sample_forward_batch(x0, alpha_t, E: FadingMatrix, rng) -> np.ndarray:
    """Vectorized forward fading; replacements come from column ``x0`` of ``E``.

    Draws all retain/replace uniforms first, then all replacement
    uniforms, so the stream layout is fixed for a given batch size.
    """
    x0 = np.asarray(x0, dtype=np.int64)
    alpha_t = np.broadcast_to(np.asarray(alpha_t, dtype=np.float64), x0.shape)
    if np.any((x0 < 0) | (x0 >= E.corpus_size)):
        raise DimensionError("item index out of range")
    fading.require_full_coverage(E)
    keep = rng.random(x0.shape) < alpha_t
    u = rng.random(x0.shape)

    order = E._order
    cum = np.cumsum(E.own[order])
    starts = E._starts
    ends = np.r_[starts[1:], order.size]
    base = np.where(starts > 0, cum[np.maximum(starts - 1, 0)], 0.0)
    c = E.labels[x0]
    width = cum[ends[c] - 1] - base[c]
    pos = np.searchsorted(cum, base[c] + u * width, side="right")
    pos = np.clip(pos, starts[c], ends[c] - 1)
    return np.where(keep, x0, order[pos])


# -- reference ratios ---------------------------------------------------------


def _ratio_parts(x0, x_t, alpha_t, E):
    m = E.corpus_size
    if not (0 <= x0 < m and 0 <= x_t < m):
        raise DimensionError("item index out of range")
    col = fading.column(E, x0)
    num = (1.0 - alpha_t) * col
    num[x0] += alpha_t
    den = num[x_t]
    if den <= 0:
        raise UnreachableState(f"state {x_t} cannot be reached from {x0}")
    return num, den


def reference_ratio(x0: int, x_t: int, y: int, alpha_t: float, E: FadingMatrix) -> float:
    """``log p(y|x0) / p(x_t|x0)`` under forward fading at retention ``alpha_t``."""
    if not 0 <= y < E.corpus_size:
        raise DimensionError("item index out of range")
    num, den = _ratio_parts(x0, x_t, alpha_t, E)
    return float(np.log(num[y] / den)) if num[y] > 0 else -np.inf


def reference_ratios(x0: int, x_t: int, alpha_t: float, E: FadingMatrix) -> np.ndarray:
    """Reference ratios for every ``y`` at once; ``-inf`` where unreachable."""
    num, den = _ratio_parts(x0, x_t, alpha_t, E)
    with np.errstate(divide="ignore"):
        return np.log(num / den)


# -- reverse growing ----------------------------------------------------------


@dataclass(frozen=True)
class ReverseRows:
    probs: np.ndarray
    clamped: np.ndarray
    raw_total: np.ndarray


def reverse_rows(E: FadingMatrix, x_t, alpha_s: float, alpha_t: float, log_ratios) -> ReverseRows:
    """Reverse transition rows ``p(x_s = . | x_t)`` from log preference ratios.

    Uses the O(M) factorization
    ``val(y) = P(t|s)[x_t, y] * (P(t|s)^-1 exp(ratios))[y]``.
    Negative entries (possible with learned ratios, since the inverse has
    negative off-diagonal mass) are clamped to zero and the row
    renormalized; ``clamped`` counts them per row.
    """
    x_t = np.atleast_1d(np.asarray(x_t, dtype=np.int64))
    lr = np.atleast_2d(np.asarray(log_ratios, dtype=np.float64))
    if lr.shape != (x_t.size, E.corpus_size):
        raise DimensionError(f"log ratios must have shape ({x_t.size}, {E.corpus_size})")
    fwd = forward_transition(E, alpha_s, alpha_t)
    inv = inverse_transition(E, alpha_s, alpha_t)

    shift = lr.max(axis=1, keepdims=True)
    v = np.exp(lr - shift)
    val = fwd.rows(x_t) * inv.apply(v)
    with np.errstate(over="ignore"):
        raw_total = val.sum(axis=1) * np.exp(shift[:, 0])

    neg = val < 0
    clamped = neg.sum(axis=1)
    val = np.where(neg, 0.0, val)
    total = val.sum(axis=1, keepdims=True)
    bad = ~(np.isfinite(total[:, 0]) & (total[:, 0] > 0))
    if np.any(bad):
        raise DegenerateReverse(f"reverse row {int(np.flatnonzero(bad)[0])} has no mass left")
    return ReverseRows(val / total, clamped, raw_total)


def reverse_transition_exact(x_t: int, alpha_s: float, alpha_t: float, E: FadingMatrix, true_ratios) -> np.ndarray:
    """Reverse row for one state given log ratios ``log p_t(z) - log p_t(x_t)``."""
    return reverse_rows(E, [x_t], alpha_s, alpha_t, np.asarray(true_ratios)[None, :]).probs[0]


def reverse_rate_exact(alpha_s: float, beta_s: float, E: FadingMatrix, p_s) -> np.ndarray:
    """Dense reverse rate matrix (debug oracle, M <= 64).

    ``R_s = Q_s^T * [p_s / p_s^T] - diag((Q_s p_s) / p_s)``.  With this
    sign convention ``R_s`` generates the process in reverse time:
    ``-d/ds P(s|t) = R_s P(s|t)``.
    """
    if not 0 < alpha_s <= 1:
        raise DomainError("alpha_s must lie in (0, 1]")
    p_s = np.asarray(p_s, dtype=np.float64)
    if p_s.shape != (E.corpus_size,):
        raise DimensionError("p_s has the wrong length")
    if E.corpus_size > DENSE_RATE_LIMIT:
        raise DimensionError(f"dense rate oracle limited to M <= {DENSE_RATE_LIMIT}")
    if np.any(p_s <= 0):
        raise DomainError("p_s must be strictly positive")
    Q = rate_matrix(E, beta_s).debug_dense()
    ratio = p_s[:, None] / p_s[None, :]
    return Q.T * ratio - np.diag(Q @ p_s / p_s)


def exact_log_ratios(E: FadingMatrix, alpha_t: float, p0, x_t) -> np.ndarray:
    """True ``log p_t(z) - log p_t(x_t)`` for a known clean distribution ``p0``."""
    pt = marginal(E, alpha_t, p0)
    x_t = np.atleast_1d(np.asarray(x_t, dtype=np.int64))
    with np.errstate(divide="ignore"):
        lp = np.log(pt)
    return lp[None, :] - lp[x_t][:, None]
