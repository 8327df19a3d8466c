import math

import numpy as np
import pytest

from fadegrow.errors import ConfigError, DomainError
from fadegrow.schedule import EPS, GEOMETRIC, LINEAR, Schedule, alpha, beta, cumulative_rate


class TestAlpha:
    def test_geometric_at_zero(self):
        assert alpha(Schedule(), 0.0) == pytest.approx(math.exp(-1e-3), abs=1e-15)

    def test_linear_at_one(self):
        assert alpha(Schedule(kind=LINEAR, beta_scale=0.01), 1.0) == pytest.approx(0.01, abs=1e-15)

    def test_linear_at_zero_is_clamped(self):
        assert alpha(Schedule(kind=LINEAR), 0.0) == 1 - EPS

    @pytest.mark.parametrize("kind", [GEOMETRIC, LINEAR])
    def test_strictly_decreasing(self, kind):
        s = Schedule(kind=kind)
        a = s.alpha_at(np.arange(s.num_steps + 1))
        assert np.all(np.diff(a) < 0)

    @pytest.mark.parametrize("kind", [GEOMETRIC, LINEAR])
    def test_clamped_range(self, kind):
        a = alpha(Schedule(kind=kind, beta_max=50.0), np.linspace(0, 1, 101))
        assert a.min() >= EPS and a.max() <= 1 - EPS

    def test_geometric_end_is_small(self):
        assert alpha(Schedule(), 1.0) <= 1e-3

    @pytest.mark.parametrize("t", [-0.1, 1.5, np.nan])
    def test_domain(self, t):
        with pytest.raises(DomainError):
            alpha(Schedule(), t)

    def test_vectorized(self):
        s = Schedule()
        np.testing.assert_allclose(s.alpha(s.grid), [s.alpha(t) for t in s.grid])


class TestBeta:
    def test_linear_at_zero(self):
        assert beta(Schedule(kind=LINEAR, beta_scale=0.5), 0.0) == pytest.approx(0.5)

    @pytest.mark.parametrize("kind", [GEOMETRIC, LINEAR])
    def test_finite_difference(self, kind, rng):
        s = Schedule(kind=kind)
        h = 1e-5
        for t in rng.uniform(0.01, 0.95, 20):
            fd = (cumulative_rate(s, t + h) - cumulative_rate(s, t - h)) / (2 * h)
            assert abs(fd - beta(s, t)) / beta(s, t) < 1e-6

    def test_positive(self, rng):
        for kind in (GEOMETRIC, LINEAR):
            assert np.all(beta(Schedule(kind=kind), rng.random(1000)) > 0)

    @pytest.mark.parametrize("kind", [GEOMETRIC, LINEAR])
    def test_quadrature(self, kind):
        s = Schedule(kind=kind)
        for t in (0.1, 0.5, 0.9):
            grid = np.linspace(0, t, 10_001)
            b = beta(s, grid)
            integral = np.sum((b[1:] + b[:-1]) * np.diff(grid)) / 2
            assert abs(alpha(s, 0.0) * math.exp(-integral) - alpha(s, t)) < 1e-5


class TestConfig:
    def test_defaults(self):
        s = Schedule()
        assert (s.kind, s.beta_min, s.beta_max, s.num_steps) == (GEOMETRIC, 1e-3, 10.0, 20)
        assert s.grid[0] == 0 and s.grid[-1] == 1 and s.grid.size == 21

    @pytest.mark.parametrize("kw", [dict(kind="cosine"), dict(num_steps=0), dict(beta_min=20.0),
                                    dict(kind=LINEAR, beta_scale=1.5)])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            Schedule(**kw)
