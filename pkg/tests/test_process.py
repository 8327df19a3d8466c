import math

import numpy as np
import pytest

from fadegrow import fading as F
from fadegrow import process as P
from fadegrow.errors import (
    DegenerateReverse,
    DimensionError,
    DomainError,
    IncompleteCoverage,
    OrderingError,
    UnreachableState,
)
from fadegrow.schedule import LINEAR, Schedule
from fadegrow.verify import dense_reverse, random_fading


def _p0(rng, m):
    p = rng.dirichlet(np.ones(m)) + 1e-3
    return p / p.sum()


class TestForward:
    def test_equal_alpha_is_identity(self, rng):
        E = random_fading(rng, 8)
        v = rng.normal(size=8)
        np.testing.assert_allclose(P.forward_transition(E, 0.4, 0.4).apply(v), v, atol=1e-15)

    def test_converges_to_target(self, rng):
        pT = F.NonPreferenceState(rng.random(8) + 0.1)
        v = rng.dirichlet(np.ones(8))
        out = P.forward_transition(F.build_rank1(pT), 1.0, 1e-6).apply(v)
        assert np.abs(out - pT.normalized).max() < 1e-5

    def test_chapman_kolmogorov(self, rng):
        for _ in range(100):
            E = random_fading(rng, int(rng.integers(1, 33)))
            a_r, a_s, a_t = np.sort(rng.uniform(1e-3, 1, 3))[::-1]
            lhs = P.forward_transition(E, a_s, a_t).debug_dense() @ P.forward_transition(E, a_r, a_s).debug_dense()
            assert np.abs(lhs - P.forward_transition(E, a_r, a_t).debug_dense()).max() < 1e-12

    def test_columns_sum_to_one(self, rng):
        E = random_fading(rng, 10)
        D = P.forward_transition(E, 0.9, 0.3).debug_dense()
        assert np.abs(D.sum(0) - 1).max() < 1e-12

    def test_dense_form(self, rng):
        E = random_fading(rng, 6)
        D = P.forward_transition(E, 0.8, 0.2).debug_dense()
        np.testing.assert_allclose(D, 0.25 * np.eye(6) + 0.75 * F.debug_dense(E), atol=1e-15)

    def test_rows_accessor(self, rng):
        E = random_fading(rng, 9)
        T = P.forward_transition(E, 0.7, 0.3)
        D = T.debug_dense()
        np.testing.assert_allclose(T.rows(np.arange(9)), D, atol=1e-15)
        np.testing.assert_allclose(T.row(4), D[4], atol=1e-15)

    def test_ordering(self):
        with pytest.raises(OrderingError):
            P.forward_transition(F.build_rank1(np.ones(3)), 0.2, 0.5)

    def test_domain(self):
        with pytest.raises(DomainError):
            P.forward_transition(F.build_rank1(np.ones(3)), 1.5, 0.5)
        with pytest.raises(DomainError):
            P.forward_transition(F.build_rank1(np.ones(3)), 0.5, 0.0)

    def test_rejects_uncovered(self):
        E = F.build_rankr([[0, 1]], [np.array([1.0, 1.0, 0.0])])
        with pytest.raises(IncompleteCoverage):
            P.forward_transition(E, 1.0, 0.5)


class TestInverse:
    def test_identity_at_equal_alpha(self, rng):
        E = random_fading(rng, 5)
        np.testing.assert_allclose(P.inverse_transition(E, 0.3, 0.3).debug_dense(), np.eye(5), atol=1e-15)

    def test_roundtrip(self, rng):
        E = random_fading(rng, 8)
        v = rng.normal(size=8)
        back = P.inverse_transition(E, 0.8, 0.4).apply(P.forward_transition(E, 0.8, 0.4).apply(v))
        assert np.abs(back - v).max() < 1e-10

    def test_dense_product(self, rng):
        for _ in range(50):
            E = random_fading(rng, int(rng.integers(1, 33)))
            a_s = rng.uniform(0.05, 1)
            a_t = a_s * rng.uniform(0.05, 1)
            prod = P.inverse_transition(E, a_s, a_t).debug_dense() @ P.forward_transition(E, a_s, a_t).debug_dense()
            assert np.abs(prod - np.eye(E.corpus_size)).max() < 1e-8

    def test_off_diagonal_nonpositive(self, rng):
        D = P.inverse_transition(F.build_rank1(rng.random(6) + 0.1), 0.9, 0.3).debug_dense()
        assert np.all(D[~np.eye(6, dtype=bool)] <= 0)


class TestRate:
    def test_columns_sum_to_zero(self, rng):
        D = P.rate_matrix(random_fading(rng, 8), 2.5).debug_dense()
        assert np.abs(D.sum(0)).max() < 1e-12

    def test_singleton_clusters_give_zero(self):
        E = F.build_rankr([[i] for i in range(4)], list(np.eye(4)))
        np.testing.assert_array_equal(P.rate_matrix(E, 3.0).debug_dense(), np.zeros((4, 4)))

    def test_nonpositive_rate(self):
        with pytest.raises(DomainError):
            P.rate_matrix(F.build_rank1(np.ones(3)), 0.0)

    @pytest.mark.parametrize("kind", ["geometric", LINEAR])
    def test_kolmogorov_forward(self, kind, rng):
        sched = Schedule(kind=kind)
        E = random_fading(rng, 8, F.RANK1)
        s, t, h = 0.2, 0.6, 1e-5
        a_s = sched.alpha(s)
        dP = (P.forward_transition(E, a_s, sched.alpha(t + h)).debug_dense()
              - P.forward_transition(E, a_s, sched.alpha(t - h)).debug_dense()) / (2 * h)
        rhs = P.rate_matrix(E, sched.beta(t)).debug_dense() @ P.forward_transition(E, a_s, sched.alpha(t)).debug_dense()
        assert np.abs(dP - rhs).max() / np.abs(rhs).max() < 1e-4

    def test_row_accessor(self, rng):
        E = random_fading(rng, 6)
        Q = P.rate_matrix(E, 1.7)
        np.testing.assert_allclose(Q.row(2), Q.debug_dense()[2], atol=1e-15)


class TestSampleForward:
    def test_alpha_one_keeps(self, rng):
        pT = F.NonPreferenceState.uniform(5)
        assert all(P.sample_forward(3, 1.0, pT, rng) == 3 for _ in range(200))

    def test_alpha_zero_absorbs(self, rng):
        pT = F.NonPreferenceState.virtual_item(4)
        assert all(P.sample_forward(1, 0.0, pT, rng) == 4 for _ in range(200))

    def test_frequency(self, rng):
        pT = F.NonPreferenceState.uniform(4)
        hits = sum(P.sample_forward(2, 0.5, pT, rng) == 2 for _ in range(100_000))
        assert abs(hits / 100_000 - 0.625) < 0.01

    def test_batch_frequency_rank1(self, rng):
        E = F.build_rank1(np.array([1.0, 2.0, 3.0, 4.0]))
        x = P.sample_forward_batch(np.full(100_000, 1), 0.3, E, rng)
        emp = np.bincount(x, minlength=4) / x.size
        want = 0.3 * np.eye(4)[1] + 0.7 * np.array([0.1, 0.2, 0.3, 0.4])
        assert 0.5 * np.abs(emp - want).sum() < 0.01

    def test_batch_stays_in_cluster(self, rng):
        t1 = np.array([1.0, 1.0, 0, 0, 0])
        t2 = np.array([0, 0, 1.0, 2.0, 3.0])
        E = F.build_rankr([[0, 1], [2, 3, 4]], [t1, t2])
        x = P.sample_forward_batch(np.full(50_000, 3), 0.0, E, rng)
        assert set(np.unique(x)) <= {2, 3, 4}
        emp = np.bincount(x, minlength=5)[2:] / x.size
        assert np.abs(emp - np.array([1, 2, 3]) / 6).max() < 0.01

    def test_two_hop_matches_one_hop(self, rng):
        E = random_fading(rng, 6)
        n = 100_000
        xs = P.sample_forward_batch(np.zeros(n, dtype=int), 0.7, E, rng)
        xt = P.sample_forward_batch(xs, 0.4 / 0.7, E, rng)
        want = P.forward_transition(E, 1.0, 0.4).debug_dense()[:, 0]
        assert 0.5 * np.abs(np.bincount(xt, minlength=6) / n - want).sum() < 0.01

    def test_index_bounds(self, rng):
        with pytest.raises(DimensionError):
            P.sample_forward(5, 0.5, F.NonPreferenceState.uniform(5), rng)


class TestReferenceRatio:
    def test_same_state_is_zero(self, rng):
        E = F.build_rank1(rng.random(5) + 0.1)
        assert P.reference_ratio(1, 3, 3, 0.4, E) == 0.0

    def test_pointwise(self):
        E = F.build_rank1(F.NonPreferenceState.virtual_item(4))
        r = P.reference_ratio(0, 4, 0, 0.25, E)
        assert r == pytest.approx(math.log(0.25 / 0.75), abs=1e-12)
        assert r == pytest.approx(-1.098612, abs=1e-6)

    def test_pairwise(self):
        E = F.build_rank1(np.ones(4))
        assert P.reference_ratio(0, 2, 0, 0.5, E) == pytest.approx(math.log(5), abs=1e-12)

    def test_unreachable(self):
        E = F.build_rank1(F.NonPreferenceState.virtual_item(4))
        with pytest.raises(UnreachableState):
            P.reference_ratio(0, 2, 1, 0.5, E)

    def test_vanishing_numerator(self):
        E = F.build_rank1(F.NonPreferenceState.virtual_item(4))
        assert P.reference_ratio(0, 4, 2, 0.5, E) == -np.inf

    def test_vector_form(self, rng):
        E = random_fading(rng, 7, F.RANKR)
        lab = E.labels
        x0 = 2
        x_t = int(np.flatnonzero(lab == lab[x0])[0])
        vec = P.reference_ratios(x0, x_t, 0.3, E)
        for y in range(7):
            assert vec[y] == P.reference_ratio(x0, x_t, y, 0.3, E)


class TestReverse:
    def test_equal_alpha_is_one_hot(self, rng):
        E = F.build_rank1(np.ones(5))
        out = P.reverse_transition_exact(2, 0.5, 0.5, E, rng.normal(size=5))
        np.testing.assert_allclose(out, np.eye(5)[2], atol=1e-15)

    def test_matches_dense_bayes(self, rng):
        for m in (3, 5, 9):
            E = random_fading(rng, m)
            p0 = _p0(rng, m)
            R, _, _ = dense_reverse(E, 0.8, 0.3, p0)
            for x in range(m):
                lr = P.exact_log_ratios(E, 0.3, p0, x)[0]
                assert np.abs(P.reverse_transition_exact(x, 0.8, 0.3, E, lr) - R[:, x]).max() < 1e-10

    def test_dense_bayes_by_hand(self, rng):
        # independent construction with explicit matrices
        m = 3
        E = F.build_rank1(np.ones(m))
        p0 = np.array([0.5, 0.3, 0.2])
        a_s, a_t = 0.9, 0.4
        D = F.debug_dense(E)
        fwd = (a_t / a_s) * np.eye(m) + (1 - a_t / a_s) * D
        p_s = (a_s * np.eye(m) + (1 - a_s) * D) @ p0
        p_t = fwd @ p_s
        R = np.array([[p_s[x] * fwd[y, x] / p_t[y] for y in range(m)] for x in range(m)])
        for x in range(m):
            lr = np.log(p_t) - np.log(p_t[x])
            assert np.abs(P.reverse_transition_exact(x, a_s, a_t, E, lr) - R[:, x]).max() < 1e-10

    def test_raw_sum_is_one(self, rng):
        E = F.build_rank1(np.ones(3))
        p0 = _p0(rng, 3)
        lr = P.exact_log_ratios(E, 0.2, p0, [0, 1, 2])
        rows = P.reverse_rows(E, [0, 1, 2], 0.7, 0.2, lr)
        assert np.abs(rows.raw_total - 1).max() < 1e-10
        assert rows.clamped.sum() == 0

    def test_clamps_bad_ratios(self):
        E = F.build_rank1(np.ones(4))
        lr = np.array([[0.0, -30.0, 5.0, 5.0]])
        rows = P.reverse_rows(E, [0], 0.9, 0.3, lr)
        assert rows.clamped[0] > 0
        assert np.all(rows.probs >= 0) and abs(rows.probs.sum() - 1) < 1e-12

    def test_degenerate(self):
        E = F.build_rank1(np.ones(2))
        with pytest.raises(DegenerateReverse):
            P.reverse_rows(E, [0], 1.0, 0.5, np.array([[np.nan, 0.0]]))

    def test_shape_check(self):
        with pytest.raises(DimensionError):
            P.reverse_rows(F.build_rank1(np.ones(3)), [0], 0.9, 0.3, np.zeros((1, 4)))


class TestReverseRate:
    def test_columns_sum_to_zero(self, rng):
        E = random_fading(rng, 7)
        R = P.reverse_rate_exact(0.5, 2.0, E, _p0(rng, 7))
        assert np.abs(R.sum(0)).max() < 1e-10

    def test_uniform_pairwise(self):
        m = 5
        E = F.build_rank1(np.ones(m))
        R = P.reverse_rate_exact(0.5, 1.3, E, np.full(m, 1 / m))
        Q = P.rate_matrix(E, 1.3).debug_dense()
        np.testing.assert_allclose(R, Q.T, atol=1e-14)

    def test_direct_formula(self, rng):
        m = 4
        E = random_fading(rng, m)
        p = _p0(rng, m)
        Q = P.rate_matrix(E, 0.7).debug_dense()
        R = P.reverse_rate_exact(0.5, 0.7, E, p)
        for x in range(m):
            for y in range(m):
                want = Q[y, x] * p[x] / p[y]
                if x == y:
                    want -= sum(Q[x, z] * p[z] for z in range(m)) / p[x]
                assert R[x, y] == pytest.approx(want, abs=1e-13)

    @pytest.mark.parametrize("kind", ["geometric", LINEAR])
    def test_backward_equation(self, kind, rng):
        sched = Schedule(kind=kind)
        m = 6
        E = random_fading(rng, m, F.RANK1)
        p0 = _p0(rng, m)
        s, t, h = 0.3, 0.7, 1e-5
        a_t = sched.alpha(t)
        lhs = -(dense_reverse(E, sched.alpha(s + h), a_t, p0)[0] - dense_reverse(E, sched.alpha(s - h), a_t, p0)[0]) / (2 * h)
        R0, ps, _ = dense_reverse(E, sched.alpha(s), a_t, p0)
        rhs = P.reverse_rate_exact(sched.alpha(s), sched.beta(s), E, ps) @ R0
        assert np.abs(lhs - rhs).max() / np.abs(rhs).max() < 1e-4

    def test_zero_probability(self):
        with pytest.raises(DomainError):
            P.reverse_rate_exact(0.5, 1.0, F.build_rank1(np.ones(3)), np.array([0.5, 0.5, 0.0]))

    def test_size_gate(self):
        with pytest.raises(DimensionError):
            P.reverse_rate_exact(0.5, 1.0, F.build_rank1(np.ones(65)), np.full(65, 1 / 65))


class TestBayesReversal:
    def test_pushes_marginals_back(self, rng):
        for _ in range(100):
            m = int(rng.integers(1, 17))
            E = random_fading(rng, m)
            R, ps, pt = dense_reverse(E, 0.7, 0.2, _p0(rng, m))
            assert np.abs(R @ pt - ps).max() < 1e-10


class TestFaultFlag:
    def test_flip_breaks_stochasticity(self, monkeypatch, rng):
        E = random_fading(rng, 5)
        monkeypatch.setattr(P, "_FAULT_FLIP_SIGN", True)
        D = P.forward_transition(E, 0.9, 0.3).debug_dense()
        assert np.abs(D.sum(0) - 1).max() > 0.1
