"""Numerical property suites.

Each suite draws random instances, compares the structured code path
against dense ``numpy`` oracles and reports the largest error seen.
Suites are registered by name in :data:`SUITES`; :func:`run` executes all
of them or a filtered subset.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fading as F
from . import losses as L
from . import process as P
from . import sampler as SA
from . import scorenet as sn
from .schedule import GEOMETRIC, LINEAR, Schedule


@dataclass(frozen=True)
class SuiteResult:
    name: str
    max_error: float
    tolerance: float
    seconds: float = 0.0
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_error) and self.max_error < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return (f"{status}  {self.name:<22} max_err={self.max_error:.3e}  tol={self.tolerance:.0e}"
                f"  ({self.seconds:.2f}s){extra}")


# -- random instances ---------------------------------------------------------


def random_fading(rng, m: int, kind: str | None = None, moving: bool = False):
    """A random rank-1 or fully covering rank-r fading matrix of size ``m``.

    With ``moving`` the draw is repeated until ``E != I``; all-singleton
    clusters give a process that never changes state, and derivative
    checks on it compare rounding noise against zero.
    """
    if moving and m >= 2:
        while True:
            E = random_fading(rng, m, kind)
            if E.rank < m:
                return E
    kind = kind or (F.RANK1 if rng.random() < 0.5 else F.RANKR)
    if kind == F.RANK1 or m < 2:
        return F.build_rank1(rng.random(m) + 0.05)
    r = int(rng.integers(1, m + 1))
    labels = np.r_[np.arange(r), rng.integers(0, r, m - r)]
    rng.shuffle(labels)
    clusters = [np.flatnonzero(labels == c) for c in range(r)]
    targets = []
    for c in clusters:
        t = np.zeros(m)
        t[c] = rng.random(c.size) + 0.05
        targets.append(t)
    return F.build_rankr(clusters, targets)


def alpha_chain(rng, k: int, lo: float = 1e-3):
    return np.sort(rng.uniform(lo, 1.0, size=k))[::-1]


def dense_reverse(E, alpha_s, alpha_t, p0):
    """``P(s|t)[x, y] = p_s(x) P(t|s)[y, x] / p_t(y)``."""
    ps = P.marginal(E, alpha_s, p0)
    pt = P.marginal(E, alpha_t, p0)
    fwd = P.forward_transition(E, alpha_s, alpha_t).debug_dense()
    return ps[:, None] * fwd.T / pt[None, :], ps, pt


def _rel(a, b):
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-8))


# -- suites -------------------------------------------------------------------


def suite_idempotence(rng):
    err = 0.0
    for _ in range(200):
        D = F.debug_dense(random_fading(rng, int(rng.integers(1, 65))))
        err = max(err, np.abs(D @ D - D).max())
    return err, 1e-12, "200 random rank-1/rank-r, M<=64"


def suite_column_stochastic(rng):
    err = 0.0
    for _ in range(200):
        D = F.debug_dense(random_fading(rng, int(rng.integers(1, 65))))
        err = max(err, np.abs(D.sum(axis=0) - 1.0).max())
    return err, 1e-12, "columns sum to 1"


def suite_fast_path(rng):
    err = 0.0
    for _ in range(100):
        E = random_fading(rng, int(rng.integers(1, 65)))
        v = rng.normal(size=E.corpus_size)
        err = max(err, np.abs(F.apply(E, v) - F.debug_dense(E) @ v).max())
    return err, 1e-12, "O(M+r) apply vs dense matvec"


def suite_rank(rng):
    bad = 0
    for _ in range(100):
        E = random_fading(rng, int(rng.integers(2, 65)), F.RANKR)
        sv = np.linalg.svd(F.debug_dense(E), compute_uv=False)
        bad += int((sv > 1e-9).sum() != E.rank)
    return float(bad), 0.5, "numeric rank equals r (count of mismatches)"


def suite_chapman_kolmogorov(rng):
    err = 0.0
    for _ in range(100):
        E = random_fading(rng, int(rng.integers(1, 33)))
        a_r, a_s, a_t = alpha_chain(rng, 3)
        ts = P.forward_transition(E, a_s, a_t).debug_dense()
        sr = P.forward_transition(E, a_r, a_s).debug_dense()
        tr = P.forward_transition(E, a_r, a_t).debug_dense()
        err = max(err, np.abs(ts @ sr - tr).max())
    return err, 1e-12, "P(t|s) P(s|r) = P(t|r)"


def suite_inverse_roundtrip(rng):
    err = 0.0
    for _ in range(200):
        E = random_fading(rng, int(rng.integers(1, 33)))
        a_s = rng.uniform(0.05, 1.0)
        a_t = a_s * rng.uniform(0.05, 1.0)
        fwd = P.forward_transition(E, a_s, a_t)
        inv = P.inverse_transition(E, a_s, a_t)
        err = max(err, np.abs(inv.debug_dense() @ fwd.debug_dense() - np.eye(E.corpus_size)).max())
        v = rng.normal(size=E.corpus_size)
        err = max(err, np.abs(inv.apply(fwd.apply(v)) - v).max())
    return err, 1e-8, "inverse(forward) = I for ratio >= 0.05"


def suite_convergence(rng):
    err = 0.0
    for _ in range(100):
        m = int(rng.integers(1, 33))
        pT = F.NonPreferenceState(rng.random(m) + 0.01)
        E = F.build_rank1(pT)
        v = rng.dirichlet(np.ones(m))
        out = P.forward_transition(E, 1.0, 1e-6).apply(v)
        err = max(err, np.abs(out - pT.normalized).sum())
    return err, 1e-5, "L1 distance to normalized target at alpha=1e-6"


def suite_kolmogorov_forward(rng):
    err, h = 0.0, 1e-5
    for kind in (GEOMETRIC, LINEAR):
        sched = Schedule(kind=kind)
        for _ in range(20):
            E = random_fading(rng, int(rng.integers(2, 9)), moving=True)
            s = rng.uniform(0.05, 0.4)
            t = rng.uniform(s + 0.05, 0.9)
            a_s = sched.alpha(s)
            dP = (P.forward_transition(E, a_s, sched.alpha(t + h)).debug_dense()
                  - P.forward_transition(E, a_s, sched.alpha(t - h)).debug_dense()) / (2 * h)
            rhs = P.rate_matrix(E, sched.beta(t)).debug_dense() @ P.forward_transition(E, a_s, sched.alpha(t)).debug_dense()
            err = max(err, _rel(dP, rhs))
    return err, 1e-4, "d/dt P(t|s) = Q_t P(t|s), both schedules"


def suite_markov_consistency(rng):
    err = 0.0
    n = 100_000
    for _ in range(5):
        m = int(rng.integers(2, 9))
        E = random_fading(rng, m)
        a_s, a_t = alpha_chain(rng, 2, lo=0.05)
        x0 = int(rng.integers(m))
        xs = P.sample_forward_batch(np.full(n, x0), a_s, E, rng)
        xt = P.sample_forward_batch(xs, a_t / a_s, E, rng)
        emp = np.bincount(xt, minlength=m) / n
        want = P.forward_transition(E, 1.0, a_t).debug_dense()[:, x0]
        err = max(err, 0.5 * np.abs(emp - want).sum())
    return err, 0.01, "two-hop sampling vs one-hop law (TV)"


def suite_bayes_reversal(rng):
    err = 0.0
    for _ in range(100):
        m = int(rng.integers(1, 17))
        E = random_fading(rng, m)
        p0 = rng.dirichlet(np.ones(m)) + 1e-3
        p0 /= p0.sum()
        a_s, a_t = alpha_chain(rng, 2)
        R, ps, pt = dense_reverse(E, a_s, a_t, p0)
        err = max(err, np.abs(R @ pt - ps).max(), np.abs(R.sum(axis=0) - 1).max())
    return err, 1e-10, "p_s = P(s|t) p_t"


def suite_reverse_oracle(rng):
    err = 0.0
    for _ in range(100):
        m = int(rng.integers(2, 17))
        E = random_fading(rng, m)
        p0 = rng.dirichlet(np.ones(m)) + 1e-3
        p0 /= p0.sum()
        a_s = rng.uniform(0.05, 1.0)
        a_t = a_s * rng.uniform(0.05, 1.0)
        R, _, _ = dense_reverse(E, a_s, a_t, p0)
        for x in range(m):
            lr = P.exact_log_ratios(E, a_t, p0, x)[0]
            rows = P.reverse_rows(E, [x], a_s, a_t, lr[None])
            if rows.clamped[0]:
                return np.inf, 1e-10, "clamp with exact ratios"
            err = max(err, np.abs(rows.probs[0] - R[:, x]).max(), abs(rows.raw_total[0] - 1.0))
    return err, 1e-10, "O(M) reverse row vs dense reverse column"


def suite_kolmogorov_backward(rng):
    err, h = 0.0, 1e-5
    for kind in (GEOMETRIC, LINEAR):
        sched = Schedule(kind=kind)
        for _ in range(20):
            m = int(rng.integers(2, 7))
            E = random_fading(rng, m, moving=True)
            p0 = rng.dirichlet(np.ones(m)) + 1e-2
            p0 /= p0.sum()
            s = rng.uniform(0.1, 0.5)
            t = rng.uniform(s + 0.1, 0.9)
            a_t = sched.alpha(t)
            Rp = dense_reverse(E, sched.alpha(s + h), a_t, p0)[0]
            Rm = dense_reverse(E, sched.alpha(s - h), a_t, p0)[0]
            R0, ps, _ = dense_reverse(E, sched.alpha(s), a_t, p0)
            lhs = -(Rp - Rm) / (2 * h)
            rhs = P.reverse_rate_exact(sched.alpha(s), sched.beta(s), E, ps) @ R0
            err = max(err, _rel(lhs, rhs))
    return err, 1e-4, "-d/ds P(s|t) = R_s P(s|t)"


def suite_schedule(rng):
    """Quadrature error (tol 1e-5) and FD error of beta (rel tol 1e-6), both
    reported as multiples of their tolerance."""
    err = 0.0
    for kind in (GEOMETRIC, LINEAR):
        sched = Schedule(kind=kind)
        a = sched.alpha_at(np.arange(sched.num_steps + 1))
        if np.any(np.diff(a) >= 0):
            return np.inf, 1.0, f"{kind} not strictly decreasing"
        a0 = sched.alpha(0.0)
        for t in rng.uniform(0.01, 0.95, size=10):
            grid = np.linspace(0.0, t, 10_001)
            b = sched.beta(grid)
            integral = np.sum((b[1:] + b[:-1]) * np.diff(grid)) / 2
            err = max(err, abs(a0 * np.exp(-integral) - sched.alpha(t)) / 1e-5)
            h = 1e-5
            fd = -(np.log(sched.alpha(t + h)) - np.log(sched.alpha(t - h))) / (2 * h)
            err = max(err, abs(fd - sched.beta(t)) / sched.beta(t) / 1e-6)
    return err, 1.0, "quadrature and FD of beta, in units of their tolerances"


def _loss_instances(rng, setting, count):
    for _ in range(count):
        n = int(rng.integers(3, 33))
        m = setting.corpus_size(n)
        theta = rng.normal(size=m) if setting.kind == L.ADAPTIVE else None
        pT = setting.target(n, theta)
        x0 = int(rng.integers(n))
        choices = [x0, int(rng.integers(n))] + ([m - 1] if setting.has_virtual_item else [])
        x_t = int(rng.choice(choices))
        if setting.kind == L.POINTWISE and x_t not in (x0, m - 1):
            x_t = m - 1
        s = rng.normal(size=m) * 2
        s[x_t] = 0.0
        yield pT, x0, x_t, s, rng.uniform(0.01, 0.99), rng.uniform(0.1, 5.0)


def suite_closed_forms(rng):
    err = 0.0
    settings = [L.Setting(L.POINTWISE), L.Setting(L.PAIRWISE)]
    settings += [L.Setting(L.HYBRID, n_lambda=k) for k in (1, 2, 3)]
    settings += [L.Setting(L.ADAPTIVE, adaptive_virtual_item=v) for v in (False, True)]
    for st in settings:
        for pT, x0, x_t, s, a, b in _loss_instances(rng, st, 500):
            E = F.build_rank1(pT)
            g = L.se_loss_generic(x0, x_t, s, a, b, E)
            c = L.se_loss_closed(st, x0, x_t, s, a, b, pT)
            err = max(err, abs(g - c) / max(1.0, abs(g)))
    # adaptive with uniform mu collapses to pair-wise
    for _ in range(200):
        n = int(rng.integers(3, 33))
        x0, x_t = int(rng.integers(n)), int(rng.integers(n))
        s = rng.normal(size=n)
        s[x_t] = 0.0
        a = rng.uniform(0.01, 0.99)
        ad = L.se_loss_closed(L.Setting(L.ADAPTIVE), x0, x_t, s, a, 1.0, L.Setting(L.ADAPTIVE).target(n))
        pw = L.se_loss_closed(L.Setting(L.PAIRWISE), x0, x_t, s, a, 1.0, F.NonPreferenceState.uniform(n))
        err = max(err, abs(ad - pw))
    return err, 1e-8, "closed forms vs generic sum, 500 per setting"


def suite_sbce_link(rng):
    s, r = rng.uniform(-10, 10, size=(2, 1000))
    lhs = (1 + np.exp(s)) * (1 + np.exp(r)) * L.sbce_grad(s, r)
    rhs = L.se_grad(s, r)
    scale = np.maximum(1.0, np.maximum(np.exp(s), np.exp(r)))
    err = float(np.max(np.abs(lhs - rhs) / scale))
    err = max(err, float(np.max(np.abs(L.sbce_grad(r, r)))))
    return err, 1e-12, "(1+e^s)(1+e^r) dsBCE/ds = dSE/ds"


def fd_gradient_error(rng, setting: L.Setting, n_checks: int = 20, h: float = 1e-4) -> float:
    """Largest relative error of analytic vs central-difference gradients."""
    n = 7
    cfg = sn.NetConfig(n_items=n, d=8, num_steps=5, has_virtual_item=setting.has_virtual_item)
    field_ = sn.init(cfg, rng)
    for k in field_.params:
        field_.params[k] = field_.params[k] + rng.normal(0.0, 0.3, size=field_.params[k].shape)
    b = 6
    hist = sn.pad_histories([rng.integers(0, n, int(rng.integers(1, 8))) for _ in range(b)])
    nonpref = np.arange(b) % 3 == 1
    sched = Schedule(num_steps=5)
    x0 = rng.integers(0, n, b)
    t = rng.integers(1, 6, b)
    E = F.build_rank1(setting.target(n, field_.params["theta"]))
    x_t = P.sample_forward_batch(x0, sched.alpha_at(t), E, rng)
    batch = sn.Batch(hist, nonpref, x0, t, x_t)
    lc = sn.LossConfig(setting, sched)
    _, g = sn.gradients(field_, batch, lc)
    names = list(field_.params)
    err = 0.0
    for _ in range(n_checks):
        k = names[int(rng.integers(len(names)))]
        idx = tuple(int(rng.integers(0, d)) for d in field_.params[k].shape)
        vals = []
        for sign in (1, -1):
            f2 = field_.copy()
            f2.params[k][idx] += sign * h
            vals.append(sn.loss_value(f2, batch, lc))
        fd = (vals[0] - vals[1]) / (2 * h)
        err = max(err, abs(fd - g[k][idx]) / max(abs(fd), abs(g[k][idx]), 1e-6))
    return err


def suite_score_gradients(rng):
    err = 0.0
    for st in (L.Setting(L.POINTWISE), L.Setting(L.PAIRWISE), L.Setting(L.HYBRID),
               L.Setting(L.ADAPTIVE, adaptive_virtual_item=True)):
        err = max(err, fd_gradient_error(rng, st))
    return err, 1e-5, "central differences on the full network, four settings"


def suite_sampler_consistency(rng):
    m = 8
    sched = Schedule()
    p0 = rng.dirichlet(np.ones(m))
    pT = F.NonPreferenceState.uniform(m)
    E = F.build_rank1(pT)
    grid = SA.SamplerConfig().grid(sched)
    res = SA.grow(SA.exact_ratio_fn(E, sched, p0), E, sched, grid, rng.random((10_000, grid.size)), pT.normalized)
    tv = 0.5 * np.abs(np.bincount(res.x0, minlength=m) / 10_000 - p0).sum()
    if res.clamped:
        return np.inf, 0.05, f"{res.clamped} clamps with exact ratios"
    return tv, 0.05, "10^4 reverse runs with exact ratios vs p0 (TV)"


SUITES: dict[str, Callable] = {
    "idempotence": suite_idempotence,
    "column-stochastic": suite_column_stochastic,
    "fast-path": suite_fast_path,
    "rank-r": suite_rank,
    "chapman-kolmogorov": suite_chapman_kolmogorov,
    "inverse-roundtrip": suite_inverse_roundtrip,
    "convergence": suite_convergence,
    "kolmogorov-forward": suite_kolmogorov_forward,
    "markov-consistency": suite_markov_consistency,
    "bayes-reversal": suite_bayes_reversal,
    "reverse-oracle": suite_reverse_oracle,
    "kolmogorov-backward": suite_kolmogorov_backward,
    "schedule": suite_schedule,
    "closed-forms": suite_closed_forms,
    "sbce-link": suite_sbce_link,
    "score-gradients": suite_score_gradients,
    "sampler-consistency": suite_sampler_consistency,
}


def run_suite(name: str, seed: int = 0) -> SuiteResult:
    start = time.perf_counter()
    rng = np.random.default_rng([seed, list(SUITES).index(name)])
    try:
        err, tol, detail = SUITES[name](rng)
    except Exception as exc:  # a crashing suite is a failing suite
        err, tol, detail = np.inf, 0.0, f"{type(exc).__name__}: {exc}"
    return SuiteResult(name, float(err), float(tol), time.perf_counter() - start, detail)


def run(filter_: str | None = None, seed: int = 0) -> list[SuiteResult]:
    names = [n for n in SUITES if filter_ is None or filter_ in n]
    return [run_suite(n, seed) for n in names]
