"""Special functions and the monotone inverter."""

import math

import numpy as np
import pytest

from src.errors import DomainError, NoConvergenceError
from src.filter import G
from src.specfn import (
    EXACT_MODE,
    TABLE_MODE,
    SpecFnKind,
    SpecFnMode,
    digamma,
    invert_monotone,
    log_gamma,
    lookup_error_bound,
)

from .conftest import EULER_GAMMA, series_digamma


class TestLogGamma:

    def test_known_values(self):
        assert log_gamma(1.0) == pytest.approx(0.0, abs=1e-15)
        assert log_gamma(2.0) == pytest.approx(0.0, abs=1e-15)
        assert log_gamma(0.5) == pytest.approx(0.5 * math.log(math.pi), rel=1e-12)
        assert log_gamma(0.5) == pytest.approx(0.57236494292470008, rel=1e-12)

    def test_matches_lgamma_over_range(self):
        x = np.geomspace(1e-3, 1e7, 500)
        expected = np.array([math.lgamma(v) for v in x])
        np.testing.assert_allclose(log_gamma(x), expected, rtol=1e-12, atol=1e-13)

    def test_convexity(self, rng):
        """ln Gamma at a midpoint never exceeds the chord."""
        x = rng.uniform(1e-3, 50, size=1000)
        z = x + rng.uniform(1e-3, 50, size=1000)
        y = 0.5 * (x + z)
        assert np.all(log_gamma(y) <= 0.5 * (log_gamma(x) + log_gamma(z)) + 1e-12)

    @pytest.mark.parametrize("bad", [0.0, -1.0, float('nan')])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            log_gamma(bad)

    def test_scalar_in_scalar_out(self):
        assert isinstance(log_gamma(3.0), float)
        assert log_gamma(np.array([3.0])).shape == (1,)


class TestDigammaExact:

    def test_euler_mascheroni(self):
        assert digamma(1.0) == pytest.approx(-EULER_GAMMA, rel=1e-12)

    def test_unit_step(self):
        assert digamma(2.0) - digamma(1.0) == pytest.approx(1.0, abs=1e-14)

    def test_large_argument(self):
        """Asymptotic: ln x - 1/(2x) - 1/(12 x^2) + ..."""
        x = 1e6
        expected = math.log(x) - 0.5 / x - 1.0 / (12 * x * x)
        assert abs(digamma(x) - expected) <= 1e-13

    def test_matches_series_oracle(self):
        x = np.geomspace(1e-3, 1e6, 2000)
        exact = digamma(x)
        oracle = series_digamma(x)
        # relative, with an absolute floor around the root near 1.4616
        assert np.all(np.abs(exact - oracle) <= 1e-10 * np.maximum(np.abs(oracle), 1.0))

    def test_recurrence(self, rng):
        x = rng.uniform(1e-3, 1e3, size=1000)
        residual = digamma(x + 1) - digamma(x) - 1.0 / x
        assert np.max(np.abs(residual)) <= 1e-10

    def test_strictly_increasing(self):
        x = np.geomspace(1e-3, 1e6, 5000)
        assert np.all(np.diff(digamma(x)) > 0)

    def test_domain(self):
        with pytest.raises(DomainError):
            digamma(np.array([1.0, -2.0]))


class TestDigammaLookup:

    def test_error_bound_value(self):
        bound = lookup_error_bound()
        assert 5e-7 < bound < 7e-7

    def test_within_bound_over_table(self, rng):
        x = np.concatenate([np.geomspace(1e-3, 1e4, 20000), rng.uniform(1e-3, 1e4, size=5000)])
        error = np.abs(digamma(x, TABLE_MODE) - digamma(x, EXACT_MODE))
        assert np.max(error) <= lookup_error_bound(TABLE_MODE)

    def test_exact_outside_table(self):
        x = np.array([1e-5, 5e-4, 2e4, 1e6])
        np.testing.assert_array_equal(digamma(x, TABLE_MODE), digamma(x, EXACT_MODE))

    def test_coarse_table_bound_holds(self):
        coarse = SpecFnMode(SpecFnKind.LOOKUP_TABLE, table_min=0.01, table_max=100.0, table_points=64)
        x = np.geomspace(0.01, 100.0, 3000)
        error = np.abs(digamma(x, coarse) - digamma(x, EXACT_MODE))
        assert np.max(error) <= lookup_error_bound(coarse)

    def test_invalid_geometry(self):
        with pytest.raises(DomainError):
            SpecFnMode(SpecFnKind.LOOKUP_TABLE, table_min=10.0, table_max=1.0)
        with pytest.raises(DomainError):
            SpecFnMode(SpecFnKind.LOOKUP_TABLE, table_points=1)

    def test_parse(self):
        assert SpecFnMode.parse("TABLE").mode is SpecFnKind.LOOKUP_TABLE
        assert SpecFnMode.parse("exact").is_exact
        with pytest.raises(DomainError):
            SpecFnMode.parse("rational")


class TestInvertMonotone:

    def test_identity(self):
        assert invert_monotone(lambda x: x, 7.0) == pytest.approx(7.0, abs=1e-10)

    def test_digamma_round_trip(self):
        assert invert_monotone(digamma, digamma(3.0)) == pytest.approx(3.0, abs=1e-8)

    def test_g_round_trip(self):
        def g(x):
            return G(x, 0.5, 0.5, 1.0)

        assert invert_monotone(g, g(2.75)) == pytest.approx(2.75, abs=1e-8)

    def test_round_trip_over_range(self, rng):
        x = np.exp(rng.uniform(np.log(1e-3), np.log(1e4), size=2000))

        def g(v):
            return G(v, 0.6, 0.4, 1.2)

        for f in (digamma, g):
            recovered = invert_monotone(f, f(x))
            np.testing.assert_allclose(recovered, x, rtol=1e-6)

    def test_residual_within_tol(self, rng):
        targets = rng.uniform(-50, 10, size=300)
        x = invert_monotone(digamma, targets, tol=1e-10)
        assert np.all(np.abs(digamma(x) - targets) <= 1e-10)

    def test_vectorized_matches_scalar(self):
        targets = np.array([-3.0, 0.0, 2.5])
        batch = invert_monotone(digamma, targets)
        single = [invert_monotone(digamma, t) for t in targets]
        np.testing.assert_array_equal(batch, single)

    def test_deterministic(self):
        assert invert_monotone(digamma, 1.234) == invert_monotone(digamma, 1.234)

    def test_target_out_of_range(self):
        with pytest.raises(NoConvergenceError) as info:
            invert_monotone(np.arctan, 2.0)
        assert info.value.residual is not None

    def test_target_below_range(self):
        def bounded_below(x):
            return np.log1p(x)

        with pytest.raises(NoConvergenceError):
            invert_monotone(bounded_below, -1.0)

    def test_hint_within_tol_is_returned(self):
        assert invert_monotone(digamma, digamma(3.0), hint=3.0) == 3.0

    def test_hint_round_trip(self, rng):
        x = np.exp(rng.uniform(np.log(1e-3), np.log(1e4), size=500))
        hints = x * np.exp(rng.uniform(-5.0, 5.0, size=500))
        recovered = invert_monotone(digamma, digamma(x), tol=1e-12, hint=hints)
        np.testing.assert_allclose(recovered, x, rtol=1e-6)

    def test_hint_keeps_settled_entries(self):
        x = np.array([0.5, 2.0, 40.0])
        hints = np.array([0.5, 9.0, 40.0])
        recovered = invert_monotone(digamma, digamma(x), hint=hints)
        assert recovered[0] == 0.5 and recovered[2] == 40.0
        assert recovered[1] == pytest.approx(2.0, abs=1e-8)

    def test_hint_out_of_range_still_raises(self):
        with pytest.raises(NoConvergenceError):
            invert_monotone(np.arctan, 2.0, hint=1.0)

    def test_bad_arguments(self):
        with pytest.raises(DomainError):
            invert_monotone(digamma, 1.0, tol=0.0)
        with pytest.raises(DomainError):
            invert_monotone(digamma, float('inf'))
        with pytest.raises(DomainError):
            invert_monotone(digamma, 1.0, hint=0.0)
