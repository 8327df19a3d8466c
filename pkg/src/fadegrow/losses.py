"""Score-entropy losses.

For a corrupted state ``x_t`` the loss compares the predicted log ratios
``s_y`` with the reference ratios ``r_y`` of the fading process::

    L = sum_{y != x_t} Q_t(x_t, y) * (e^s - e^r s + e^r (r - 1))

:func:`se_loss_generic` evaluates this sum directly and is the
authoritative definition.  For the four rank-1 settings the sum
collapses to a handful of corpus-wide statistics; :func:`se_loss_closed`
evaluates those collapsed forms.  All of them share the shape::

    L = beta * q * [E_s - sum_y rho_y s_y + K]

with ``q = pbar[x_t]``, ``E_s = sum_y e^{s_y} - 1``, ``rho_y = e^{r_y}``
and a score-free constant ``K``.  The batched training loss uses that
shape directly, which also gives the score gradient
``beta * q * (e^{s_y} - rho_y)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy

from . import fading, process
from .errors import ConfigError, DomainError, MagnitudeError, NumericalError, UnreachableState
from .fading import FadingMatrix, NonPreferenceState

POINTWISE = "pointwise"
PAIRWISE = "pairwise"
HYBRID = "hybrid"
ADAPTIVE = "adaptive"
KINDS = (POINTWISE, PAIRWISE, HYBRID, ADAPTIVE)

MAX_MAGNITUDE = 50.0


@dataclass(frozen=True)
class Setting:
    """Which non-preference state the model fades toward.

    ``pointwise`` fades into a single virtual item, ``pairwise`` into the
    uniform distribution over real items, ``hybrid`` mixes the two with
    weight ``lam = 1 - 10**-n_lambda`` on the uniform part, and
    ``adaptive`` uses ``softmax(theta)`` over the corpus (optionally with
    the virtual item appended).
    """

    kind: str = PAIRWISE
    n_lambda: int = 1
    adaptive_virtual_item: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown loss setting {self.kind!r}")
        if int(self.n_lambda) != self.n_lambda or self.n_lambda < 1:
            raise ConfigError("n_lambda must be a positive integer")

    @property
    def lam(self) -> float:
        return 1.0 - 10.0 ** (-self.n_lambda)

    @property
    def has_virtual_item(self) -> bool:
        if self.kind == ADAPTIVE:
            return self.adaptive_virtual_item
        return self.kind in (POINTWISE, HYBRID)

    def corpus_size(self, n_items: int) -> int:
        return n_items + 1 if self.has_virtual_item else n_items

    def target(self, n_items: int, theta=None) -> NonPreferenceState:
        if self.kind == POINTWISE:
            return NonPreferenceState.virtual_item(n_items)
        if self.kind == PAIRWISE:
            return NonPreferenceState.uniform(n_items)
        if self.kind == HYBRID:
            return NonPreferenceState.hybrid(n_items, self.lam)
        m = self.corpus_size(n_items)
        theta = np.zeros(m) if theta is None else np.asarray(theta, dtype=np.float64)
        if theta.shape != (m,):
            raise ConfigError(f"adaptive logits must have length {m}")
        return NonPreferenceState.from_logits(theta, has_virtual_item=self.has_virtual_item)


@dataclass(frozen=True)
class LossIntermediates:
    """Corpus-wide statistics the closed forms are written in."""

    mean_exp_score: float
    mean_score: float
    weighted_score: float
    entropy_term: float
    delta: float
    sigma: float
    lambda_term: float


def intermediates(setting: Setting, scores, alpha_t: float, mu=None) -> LossIntermediates:
    s = np.asarray(scores, dtype=np.float64)
    n = s.size - 1 if setting.has_virtual_item else s.size
    sigma = alpha_t / (1.0 - alpha_t)
    delta = n * sigma
    lam = setting.lam if setting.kind == HYBRID else 1.0
    if mu is None:
        mu = np.full(s.size, 1.0 / s.size)
    mu = np.asarray(mu, dtype=np.float64)
    return LossIntermediates(
        mean_exp_score=float((np.exp(s).sum() - 1.0) / n),
        mean_score=float(s.sum() / n),
        weighted_score=float(mu @ s),
        entropy_term=float(xlogy(mu, mu).sum()),
        delta=delta,
        sigma=sigma,
        lambda_term=lam * delta / (lam * delta + n),
    )


# -- per-term losses ----------------------------------------------------------


def _guard(*xs):
    for x in xs:
        x = np.asarray(x, dtype=np.float64)
        finite = x[np.isfinite(x)]
        if np.isnan(x).any() or np.any(np.abs(finite) > MAX_MAGNITUDE) or np.any(x == np.inf):
            raise MagnitudeError(f"argument outside [-{MAX_MAGNITUDE}, {MAX_MAGNITUDE}]")


def se_term(s, r):
    """``e^s - e^r s + e^r (r - 1)``, evaluated as ``e^r (expm1(s-r) - (s-r))``.

    ``r = -inf`` is the limit of a vanishing reference ratio and gives
    ``e^s``.  Arguments beyond +-50 raise :class:`MagnitudeError`.
    """
    _guard(s, r)
    s = np.asarray(s, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    dead = np.isneginf(r)
    r_safe = np.where(dead, 0.0, r)
    d = s - r_safe
    out = np.where(dead, np.exp(s), np.exp(r_safe) * (np.expm1(d) - d))
    return float(out) if out.ndim == 0 else out


def se_grad(s, r):
    """``d/ds`` of :func:`se_term`."""
    return np.exp(s) - np.exp(r)


def sbce_loss(s, r):
    """Soft-label binary cross entropy ``-sig(r) log sig(s) - (1-sig(r)) log(1-sig(s))``."""
    _guard(s, r)
    p = expit(r)
    out = p * np.logaddexp(0.0, -np.asarray(s, dtype=np.float64)) + (1.0 - p) * np.logaddexp(0.0, s)
    return float(out) if np.ndim(out) == 0 else out


def sbce_grad(s, r):
    """``d/ds`` of :func:`sbce_loss`, ``sig(s) - sig(r)``, without cancellation."""
    s = np.asarray(s, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    out = np.sinh((s - r) / 2) / (2 * np.cosh(s / 2) * np.cosh(r / 2))
    return float(out) if out.ndim == 0 else out


# -- full losses --------------------------------------------------------------


def se_loss_generic(x0: int, x_t: int, scores, alpha_t: float, beta_t: float, E: FadingMatrix) -> float:
    """Direct sum over ``y != x_t`` weighted by the rate row ``beta * E[x_t, :]``."""
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != (E.corpus_size,):
        raise DomainError(f"scores must have length {E.corpus_size}")
    r = process.reference_ratios(x0, x_t, alpha_t, E)
    w = beta_t * fading.row(E, x_t)
    w[x_t] = 0.0
    live = w > 0
    return float(np.sum(w[live] * se_term(s[live], r[live])))


def _plogp(x):
    return x * (np.log(x) - 1.0) if x > 0 else 0.0


def _check_target(setting: Setting, pT: NonPreferenceState, n_scores: int):
    n = pT.n_items
    if pT.size != n_scores:
        raise ConfigError(f"scores have length {n_scores} but the corpus has {pT.size}")
    if pT.has_virtual_item != setting.has_virtual_item:
        raise ConfigError(f"{setting.kind} setting disagrees with the target's virtual item flag")
    if setting.kind == ADAPTIVE:
        if np.any(pT.weights <= 0):
            raise ConfigError("adaptive targets must be strictly positive")
        return
    expected = setting.target(n).normalized
    if np.max(np.abs(pT.normalized - expected)) > 1e-12:
        raise ConfigError(f"target does not match the {setting.kind} setting")


def se_loss_closed(setting: Setting, x0: int, x_t: int, scores, alpha_t: float, beta_t: float,
                   pT: NonPreferenceState) -> float:
    """Closed-form loss for one of the four rank-1 settings."""
    s = np.asarray(scores, dtype=np.float64)
    _check_target(setting, pT, s.size)
    m = s.size
    if not (0 <= x0 < pT.n_items and 0 <= x_t < m):
        raise DomainError("item index out of range")
    if s[x_t] != 0.0:
        raise DomainError("scores[x_t] must be pinned to 0")
    a = float(alpha_t)
    n = pT.n_items
    sig = a / (1.0 - a)
    delta = n * sig
    es = np.exp(s).sum() - 1.0
    tot = s.sum()
    v = n  # virtual item index when present

    if setting.kind == POINTWISE:
        if x_t == v:
            return float(beta_t * (es - sig * s[x0] + _plogp(sig)))
        if x_t == x0:
            return 0.0
        raise UnreachableState(f"state {x_t} cannot be reached from {x0}")

    if setting.kind == PAIRWISE:
        if x_t == x0:
            rho = 1.0 / (1.0 + delta)
            return float(beta_t / n * (es - rho * tot + (n - 1) * _plogp(rho)))
        return float(beta_t / n * (es - tot - delta * s[x0] + _plogp(1.0 + delta) - (n - 2)))

    if setting.kind == HYBRID:
        lam = setting.lam
        kap = lam / (n * (1.0 - lam))
        if x_t == v:
            rx = sig / (1.0 - lam) + kap
            inner = es - kap * tot - (rx - kap) * s[x0] + (n - 1) * _plogp(kap) + _plogp(rx)
            return float(beta_t * (1.0 - lam) * inner)
        if x_t == x0:
            d = a + (1.0 - a) * lam / n
            rv = (1.0 - a) * (1.0 - lam) / d
            rr = (1.0 - a) * (lam / n) / d
            inner = es - rr * tot - (rv - rr) * s[v] + (n - 1) * _plogp(rr) + _plogp(rv)
            return float(beta_t * lam / n * inner)
        rx = 1.0 + delta / lam
        rv = 1.0 / kap
        inner = es - tot - (delta / lam) * s[x0] - (rv - 1.0) * s[v] + _plogp(rx) + _plogp(rv) - (n - 2)
        return float(beta_t * lam / n * inner)

    mu = pT.normalized
    mt = mu[x_t]
    sw = float(mu @ s)
    ent = float(xlogy(mu, mu).sum())
    if x_t == x0:
        z = sig + mt
        k = ((ent - mt * np.log(mt)) - (1.0 - mt) * (np.log(z) + 1.0)) / z
        return float(beta_t * mt * (es - sw / z + k))
    m0 = mu[x0]
    val = (mt * es - sw - sig * s[x0] + ent + mt - (1.0 + sig) * (1.0 + np.log(mt))
           + (sig + m0) * np.log(sig + m0) - m0 * np.log(m0))
    return float(beta_t * val)


# -- batched loss with gradients ---------------------------------------------


@dataclass(frozen=True)
class BatchLoss:
    losses: np.ndarray
    grad_scores: np.ndarray
    grad_mu: np.ndarray | None


def batch_loss(x0, x_t, scores, alpha_t, beta_t, pbar, want_mu_grad: bool = False) -> BatchLoss:
    """Per-example losses and gradients for any rank-1 target ``pbar``.

    ``scores`` has shape ``(B, M)`` with ``scores[b, x_t[b]] = 0``.  The
    score gradient is zero at the pinned entry.  With ``want_mu_grad``
    the gradient with respect to ``pbar`` itself is returned as well,
    holding the scores fixed; the adaptive setting chains it through the
    softmax.
    """
    s = np.asarray(scores, dtype=np.float64)
    b, m = s.shape
    x0 = np.asarray(x0, dtype=np.int64)
    x_t = np.asarray(x_t, dtype=np.int64)
    a = np.broadcast_to(np.asarray(alpha_t, dtype=np.float64), (b,))
    beta = np.broadcast_to(np.asarray(beta_t, dtype=np.float64), (b,))
    pbar = np.asarray(pbar, dtype=np.float64)
    rows = np.arange(b)

    num = (1.0 - a)[:, None] * pbar[None, :]
    num[rows, x0] += a
    den = num[rows, x_t]
    if np.any(den <= 0):
        i = int(np.flatnonzero(den <= 0)[0])
        raise UnreachableState(f"example {i}: state {x_t[i]} cannot be reached from {x0[i]}")
    rho = num / den[:, None]
    rho[rows, x_t] = 0.0
    q = pbar[x_t]

    with np.errstate(over="ignore"):
        es = np.exp(s)
    es[rows, x_t] = 0.0
    const = (xlogy(rho, rho) - rho).sum(axis=1)
    bracket = es.sum(axis=1) - (rho * s).sum(axis=1) + const
    losses = beta * q * bracket
    bad = ~np.isfinite(losses)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise NumericalError(f"non-finite loss at example {i}", index=i)
    grad = (beta * q)[:, None] * (es - rho)

    grad_mu = None
    if want_mu_grad:
        with np.errstate(divide="ignore"):
            r = np.where(rho > 0, np.log(np.where(rho > 0, rho, 1.0)), 0.0)
        diff = r - s
        diff[rows, x_t] = 0.0
        scale = beta * q * (1.0 - a) / den
        grad_mu = scale[:, None] * diff
        grad_mu[rows, x_t] = beta * bracket - scale * (diff * rho).sum(axis=1)
    return BatchLoss(losses, grad, grad_mu)


def softmax_backward(mu, grad_mu) -> np.ndarray:
    """Chain ``dL/dmu`` through ``mu = softmax(theta)``."""
    mu = np.asarray(mu, dtype=np.float64)
    g = np.asarray(grad_mu, dtype=np.float64)
    return mu * (g - (g * mu).sum(axis=-1, keepdims=True))
