import numpy as np
import pytest

from fadegrow import fading as F
from fadegrow.errors import (
    DimensionError,
    IncompleteCoverage,
    InvalidTarget,
    OverlappingSupports,
    SupportMismatch,
)
from fadegrow.verify import random_fading


class TestNonPreferenceState:
    def test_normalized_sums_to_one(self, rng):
        s = F.NonPreferenceState(rng.random(17) * 5)
        assert abs(s.normalized.sum() - 1.0) < 1e-12

    def test_stores_unnormalized_weights(self):
        s = F.NonPreferenceState([2.0, 6.0])
        np.testing.assert_array_equal(s.weights, [2.0, 6.0])
        assert s.total == 8.0
        np.testing.assert_allclose(s.normalized, [0.25, 0.75])

    @pytest.mark.parametrize("w", [[0.0, 0.0], [1.0, -0.5], [np.nan, 1.0], []])
    def test_rejects_bad_weights(self, w):
        with pytest.raises(InvalidTarget):
            F.NonPreferenceState(w)

    def test_immutable(self):
        s = F.NonPreferenceState([1.0, 2.0])
        with pytest.raises(ValueError):
            s.weights[0] = 3.0

    def test_virtual_item(self):
        s = F.NonPreferenceState.virtual_item(4)
        assert s.size == 5 and s.n_items == 4 and s.has_virtual_item
        np.testing.assert_array_equal(s.normalized, [0, 0, 0, 0, 1])

    def test_hybrid(self):
        s = F.NonPreferenceState.hybrid(4, 0.9)
        np.testing.assert_allclose(s.normalized, [0.225, 0.225, 0.225, 0.225, 0.1])
        with pytest.raises(InvalidTarget):
            F.NonPreferenceState.hybrid(4, 1.0)

    def test_from_logits_zero_is_uniform(self):
        s = F.NonPreferenceState.from_logits(np.zeros(6))
        np.testing.assert_allclose(s.normalized, np.full(6, 1 / 6))


class TestBuildRank1:
    def test_virtual_item_target(self):
        E = F.build_rank1(F.NonPreferenceState.virtual_item(3))
        D = F.debug_dense(E)
        want = np.zeros((4, 4))
        want[-1] = 1.0
        np.testing.assert_array_equal(D, want)

    def test_uniform_target(self):
        D = F.debug_dense(F.build_rank1(np.ones(4)))
        np.testing.assert_allclose(D, np.full((4, 4), 0.25))

    def test_idempotent_random(self, rng):
        D = F.debug_dense(F.build_rank1(rng.random(16)))
        assert np.abs(D @ D - D).max() < 1e-12

    def test_all_zero_target(self):
        with pytest.raises(InvalidTarget):
            F.build_rank1(np.zeros(3))

    def test_no_dense_storage(self):
        E = F.build_rank1(np.ones(1000))
        assert all(np.asarray(getattr(E, a)).size <= 1000 for a in ("labels", "own", "_order"))


class TestBuildRankR:
    def test_singletons_give_identity(self):
        m = 5
        E = F.build_rankr([[i] for i in range(m)], [np.eye(m)[i] for i in range(m)])
        np.testing.assert_array_equal(F.debug_dense(E), np.eye(m))

    def test_single_cluster_matches_rank1(self, rng):
        t = rng.random(7) + 0.1
        a = F.debug_dense(F.build_rankr([range(7)], [t]))
        b = F.debug_dense(F.build_rank1(t))
        np.testing.assert_allclose(a, b, atol=1e-15)

    def test_two_clusters(self):
        t1 = np.r_[np.ones(3), np.zeros(3)]
        t2 = np.r_[np.zeros(3), np.ones(3)]
        D = F.debug_dense(F.build_rankr([[0, 1, 2], [3, 4, 5]], [t1, t2]))
        assert np.abs(D @ D - D).max() < 1e-12
        assert np.linalg.matrix_rank(D, tol=1e-9) == 2

    def test_overlap(self):
        t = np.ones(4)
        with pytest.raises(OverlappingSupports):
            F.build_rankr([[0, 1], [1, 2]], [np.r_[1, 1, 0, 0.0], np.r_[0, 1, 1, 0.0]])
        with pytest.raises(OverlappingSupports):
            F.build_rankr([[0, 0]], [t])

    def test_mass_outside_cluster(self):
        with pytest.raises(SupportMismatch):
            F.build_rankr([[0, 1]], [np.array([1.0, 1.0, 0.5])])

    def test_zero_inside_cluster(self):
        with pytest.raises(SupportMismatch):
            F.build_rankr([[0, 1]], [np.array([1.0, 0.0, 0.0])])

    def test_bad_index(self):
        with pytest.raises(DimensionError):
            F.build_rankr([[0, 7]], [np.ones(3)])

    def test_uncovered_columns_are_zero(self):
        E = F.build_rankr([[0, 1]], [np.array([1.0, 3.0, 0.0])])
        np.testing.assert_array_equal(F.column(E, 2), np.zeros(3))
        np.testing.assert_allclose(F.column(E, 0), [0.25, 0.75, 0.0])
        assert not E.covers_all
        with pytest.raises(IncompleteCoverage):
            F.require_full_coverage(E)

    def test_rank_matches_r(self, rng):
        for _ in range(30):
            E = random_fading(rng, int(rng.integers(2, 40)), F.RANKR)
            sv = np.linalg.svd(F.debug_dense(E), compute_uv=False)
            assert (sv > 1e-9).sum() == E.rank


class TestApply:
    def test_uniform_average(self):
        out = F.apply(F.build_rank1(np.ones(4)), [1.0, 2.0, 3.0, 4.0])
        np.testing.assert_allclose(out, [2.5] * 4)

    def test_zero_vector(self, rng):
        E = random_fading(rng, 9)
        np.testing.assert_array_equal(F.apply(E, np.zeros(9)), np.zeros(9))

    def test_matches_dense(self, rng):
        for _ in range(100):
            E = random_fading(rng, int(rng.integers(1, 65)))
            v = rng.normal(size=E.corpus_size)
            assert np.abs(F.apply(E, v) - F.debug_dense(E) @ v).max() < 1e-12

    def test_batched(self, rng):
        E = random_fading(rng, 12, F.RANKR)
        V = rng.normal(size=(3, 12))
        np.testing.assert_allclose(F.apply(E, V), V @ F.debug_dense(E).T, atol=1e-14)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            F.apply(F.build_rank1(np.ones(3)), np.ones(4))


class TestAccessors:
    def test_column_rank1(self, rng):
        t = rng.random(6) + 0.1
        E = F.build_rank1(t)
        for j in range(6):
            np.testing.assert_allclose(F.column(E, j), t / t.sum())

    def test_rows_columns_entries_match_dense(self, rng):
        for _ in range(20):
            E = random_fading(rng, int(rng.integers(1, 20)))
            D = F.debug_dense(E)
            m = E.corpus_size
            for j in range(m):
                np.testing.assert_array_equal(F.column(E, j), D[:, j])
                np.testing.assert_array_equal(F.row(E, j), D[j])
            np.testing.assert_array_equal(F.rows(E, np.arange(m)), D)
            i, j = rng.integers(0, m, 2)
            assert F.entry(E, int(i), int(j)) == D[i, j]

    def test_column_out_of_range(self):
        with pytest.raises(DimensionError):
            F.column(F.build_rank1(np.ones(3)), 3)

    def test_dense_gate(self):
        with pytest.raises(DimensionError):
            F.debug_dense(F.build_rank1(np.ones(F.DENSE_LIMIT + 1)))


class TestProperties:
    def test_idempotent_and_column_stochastic(self, rng):
        for _ in range(200):
            D = F.debug_dense(random_fading(rng, int(rng.integers(1, 65))))
            assert np.abs(D @ D - D).max() < 1e-12
            assert np.abs(D.sum(axis=0) - 1).max() < 1e-12
