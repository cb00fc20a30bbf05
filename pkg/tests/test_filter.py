"""G, the MM posterior-mode solver and the filter update."""

from dataclasses import replace

import numpy as np
import pytest

from src.dirichlet import (
    ConjugatePriorParams,
    clamp_probabilities,
    dirichlet_mode,
    mode_residual,
    nu_from_mode,
    posterior_gradient,
    posterior_objective,
)
from src.errors import DimensionMismatchError, DomainError
from src.filter import (
    ALPHA_FLOOR,
    DirichletFusionFilter,
    FilterConfig,
    FilterState,
    G,
    G_inverse,
    Observation,
    decay,
    filter_update,
    init_state,
    mm_posterior_mode,
    predict,
)
from src.specfn import digamma, invert_monotone

from .conftest import grid_maximize, random_instance

# Bisection noise must stay well below the objective and gradient tolerances
PRECISE = FilterConfig(invert_tol=1e-12)


class TestG:

    def test_beta_one_reduces_to_scaled_digamma(self):
        assert G(2.0, 1.0, 0.0, 0.5) == pytest.approx(1.5 * digamma(2.0), abs=1e-14)

    def test_no_prior_weight(self):
        assert G(2.0, 0.5, 1.0, 0.0) == pytest.approx(0.21139, abs=1e-5)

    def test_strictly_increasing(self, rng):
        x1 = rng.uniform(1e-3, 100.0, size=1000)
        x2 = x1 + rng.uniform(1e-6, 100.0, size=1000)
        assert np.all(G(x2, 0.5, 0.5, 0.9) > G(x1, 0.5, 0.5, 0.9))

    def test_scalar_and_array(self):
        assert isinstance(G(1.0, 0.5, 0.5, 1.0), float)
        assert G(np.array([1.0, 2.0]), 0.5, 0.5, 1.0).shape == (2,)

    @pytest.mark.parametrize("args", [(0.0, 0.5, 0.5, 1.0), (1.0, 1.5, 0.5, 1.0), (1.0, 0.5, -0.1, 1.0), (1.0, 0.5, 0.5, -1.0)])
    def test_domain(self, args):
        with pytest.raises(DomainError):
            G(*args)


class TestGInverse:

    def test_round_trip(self):
        y = G(3.7, 0.6, 0.4, 1.2)
        assert G_inverse(y, 0.6, 0.4, 1.2) == pytest.approx(3.7, abs=1e-6)

    def test_reduces_to_digamma_inverse(self):
        assert G_inverse(digamma(5.0), 1.0, 0.0, 0.0) == pytest.approx(5.0, abs=1e-8)

    def test_third_example(self):
        assert G_inverse(0.21139, 0.5, 1.0, 0.0) == pytest.approx(2.0, abs=1e-4)

    def test_round_trip_over_range(self):
        rng = np.random.default_rng(3)
        x = np.exp(rng.uniform(np.log(1e-3), np.log(1e4), size=10_000))
        y = G(x, 0.6, 0.4, 1.2)
        np.testing.assert_allclose(G_inverse(y, 0.6, 0.4, 1.2), x, rtol=1e-6)

    def test_constant_g(self):
        with pytest.raises(DomainError):
            G_inverse(0.0, 0.0, 1.0, 0.0)

    def test_hint_at_the_solution_is_returned_unchanged(self):
        x = np.array([0.4, 3.7, 250.0])
        y = G(x, 0.6, 0.4, 1.2)
        np.testing.assert_array_equal(G_inverse(y, 0.6, 0.4, 1.2, hint=x), x)

    def test_hint_far_from_the_solution(self):
        y = G(np.array([0.01, 5.0, 1e4]), 0.5, 0.5, 0.3)
        result = G_inverse(y, 0.5, 0.5, 0.3, tol=1e-12, hint=np.array([50.0, 1e-3, 1.0]))
        np.testing.assert_allclose(result, [0.01, 5.0, 1e4], rtol=1e-6)

    def test_below_the_bounded_range_is_floored(self):
        # Without prior weight G(x) >= 0.5 * Psi(0.5) for x > 0
        assert G_inverse(-5.0, 0.5, 0.5, 0.0) == ALPHA_FLOOR
        result = G_inverse(np.array([-5.0, G(2.0, 0.5, 0.5, 0.0)]), 0.5, 0.5, 0.0)
        assert result[0] == ALPHA_FLOOR
        assert result[1] == pytest.approx(2.0, abs=1e-6)

    def test_beta_one_is_not_floored(self):
        # Psi is unbounded below, so small targets give small x rather than the floor
        assert G_inverse(digamma(1e-9), 1.0, 0.0, 0.0, tol=1e-12) == pytest.approx(1e-9, rel=1e-6)


def ascent_instance(probs=(0.7, 0.2, 0.1)):
    """eta = 2, nu from the all-ones mode, beta = 0.8, gamma = 0.9."""
    k = len(probs)
    s = clamp_probabilities(probs)
    prior = ConjugatePriorParams(2.0, nu_from_mode(np.ones(k), 2.0))
    return s, prior, 0.8, 0.9


class TestMMPosteriorMode:

    def test_ascent_trace(self):
        s, prior, beta, gamma = ascent_instance()
        config = replace(PRECISE, gamma=gamma, max_mm_iters=50, accelerate=False)
        result = mm_posterior_mode(s, prior, beta, config, keep_history=True)
        values = posterior_objective(np.array(result.history), s, prior, beta, gamma)
        assert len(values) == result.iterations + 1
        assert np.all(np.diff(values) >= -1e-9)

    def test_accelerated_trace_ascends_to_the_same_mode(self):
        s, prior, beta, gamma = ascent_instance()
        config = replace(PRECISE, gamma=gamma, max_mm_iters=500, mm_tol=1e-10)
        fast = mm_posterior_mode(s, prior, beta, config, keep_history=True)
        plain = mm_posterior_mode(s, prior, beta, replace(config, accelerate=False))
        values = posterior_objective(np.array(fast.history), s, prior, beta, gamma)
        assert fast.converged and plain.converged
        assert np.all(np.diff(values) >= -1e-9)
        np.testing.assert_array_equal(fast.history[-1], fast.alpha)
        np.testing.assert_allclose(fast.alpha, plain.alpha, rtol=1e-5)

    def _assert_ascent(self, rng, n_instances):
        for _ in range(n_instances):
            k = int(rng.integers(2, 11))
            s, prior, beta, gamma, mode = random_instance(rng, k)
            config = replace(PRECISE, gamma=gamma)
            result = mm_posterior_mode(s, prior, beta, config, initial=mode, keep_history=True)
            values = posterior_objective(np.array(result.history), s, prior, beta, gamma)
            assert np.all(np.diff(values) >= -1e-9)

    def test_ascent_random(self, rng):
        self._assert_ascent(rng, 200)

    @pytest.mark.slow
    def test_ascent_acceptance(self):
        self._assert_ascent(np.random.default_rng(1000), 1000)

    def test_matches_grid_oracle(self):
        s, prior, beta, gamma = ascent_instance((0.8, 0.2))
        config = FilterConfig(gamma=gamma, max_mm_iters=5000, mm_tol=1e-10, invert_tol=1e-12)
        result = mm_posterior_mode(s, prior, beta, config)
        assert result.converged
        oracle = grid_maximize(lambda a: posterior_objective(a, s, prior, beta, gamma), 1e-3, 50.0)
        np.testing.assert_allclose(result.alpha, oracle, atol=1e-3)

    def _oracle_instances(self, rng, n_instances):
        for _ in range(n_instances):
            s = clamp_probabilities(rng.dirichlet([2.0, 2.0]))
            eta = rng.uniform(0.5, 20.0)
            mode = rng.uniform(0.3, 2.0, size=2)
            prior = ConjugatePriorParams(eta, nu_from_mode(mode, eta))
            beta, gamma = rng.uniform(0.2, 1.0), rng.uniform(0.5, 1.0)
            config = FilterConfig(gamma=gamma, max_mm_iters=5000, mm_tol=1e-10, invert_tol=1e-12)
            result = mm_posterior_mode(s, prior, beta, config, initial=mode)
            assert result.converged
            oracle = grid_maximize(lambda a: posterior_objective(a, s, prior, beta, gamma), 1e-3, 200.0)
            np.testing.assert_allclose(result.alpha, oracle, atol=1e-3)

    def test_oracle_random(self, rng):
        self._oracle_instances(rng, 5)

    @pytest.mark.slow
    def test_oracle_acceptance(self):
        self._oracle_instances(np.random.default_rng(77), 100)

    def _assert_stationary(self, rng, n_instances):
        converged = 0
        for _ in range(n_instances):
            k = int(rng.integers(2, 11))
            s, prior, beta, gamma, mode = random_instance(rng, k)
            config = FilterConfig(gamma=gamma, max_mm_iters=500, mm_tol=1e-10, invert_tol=1e-12)
            result = mm_posterior_mode(s, prior, beta, config, initial=mode)
            if result.converged:
                converged += 1
                gradient = posterior_gradient(result.alpha, s, prior, beta, gamma)
                assert np.max(np.abs(gradient)) <= 1e-6
        assert converged >= 0.99 * n_instances

    def test_stationarity(self, rng):
        self._assert_stationary(rng, 100)

    @pytest.mark.slow
    def test_stationarity_acceptance(self):
        self._assert_stationary(np.random.default_rng(500), 500)

    def test_nonconvergence_is_flagged(self):
        s, prior, beta, gamma = ascent_instance()
        result = mm_posterior_mode(s, prior, beta, FilterConfig(gamma=gamma, max_mm_iters=1))
        assert not result.converged
        assert result.iterations == 1
        assert np.all(np.isfinite(result.alpha))

    def test_history_off_by_default(self):
        s, prior, beta, gamma = ascent_instance()
        assert mm_posterior_mode(s, prior, beta, FilterConfig(gamma=gamma)).history == []

    def test_rejects_zero_entries(self):
        prior = ConjugatePriorParams(1.0, nu_from_mode(np.ones(2), 1.0))
        with pytest.raises(DomainError):
            mm_posterior_mode(np.array([1.0, 0.0]), prior, 1.0, FilterConfig())

    def test_dimension_mismatch(self):
        prior = ConjugatePriorParams(1.0, nu_from_mode(np.ones(3), 1.0))
        with pytest.raises(DimensionMismatchError):
            mm_posterior_mode(np.array([0.5, 0.5]), prior, 1.0, FilterConfig())


class TestDecay:

    def test_gamma_one(self):
        state = init_state(3)
        decayed = decay(state, 1.0)
        assert decayed.eta == state.eta
        np.testing.assert_array_equal(decayed.nu, state.nu)
        np.testing.assert_array_equal(decayed.alpha_mode, state.alpha_mode)

    def test_arithmetic(self):
        state = FilterState(ConjugatePriorParams(2.0, np.array([-0.5, -0.9])), np.ones(2))
        decayed = decay(state, 0.9)
        assert decayed.eta == pytest.approx(1.8)
        np.testing.assert_allclose(decayed.nu, [-0.45, -0.81])
        np.testing.assert_array_equal(decayed.alpha_mode, np.ones(2))

    def test_bad_gamma(self):
        with pytest.raises(DomainError):
            decay(init_state(2), 0.0)


class TestInitState:

    def test_defaults(self):
        state = init_state(3)
        assert state.eta == 1.0
        np.testing.assert_array_equal(state.alpha_mode, np.ones(3))
        np.testing.assert_allclose(state.nu, np.full(3, digamma(3.0) - digamma(1.0)), rtol=1e-14)
        assert state.step_count == 0

    def test_zero_eta(self):
        state = init_state(3, FilterConfig(init_eta=0.0))
        np.testing.assert_array_equal(state.nu, np.zeros(3))

    def test_first_prediction_is_uniform(self):
        np.testing.assert_allclose(predict(init_state(3)), [1 / 3] * 3)

    def test_custom_alpha(self):
        state = init_state(2, FilterConfig(init_alpha=(2.0, 3.0), init_eta=1.5))
        assert mode_residual(state.prior, state.alpha_mode) <= 1e-12

    def test_errors(self):
        with pytest.raises(DomainError):
            init_state(1)
        with pytest.raises(DimensionMismatchError):
            init_state(3, FilterConfig(init_alpha=(1.0, 2.0)))


class TestFilterConfig:

    @pytest.mark.parametrize("kwargs", [
        {"gamma": 0.0},
        {"gamma": 1.5},
        {"max_mm_iters": 0},
        {"mm_tol": 0.0},
        {"init_eta": -1.0},
        {"init_alpha": (1.0, 0.0)},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(DomainError):
            FilterConfig(**kwargs)


class TestObservation:

    def test_coerces(self):
        obs = Observation(0.0, "strong", [0.25, 0.75])
        assert isinstance(obs.s, np.ndarray)
        assert obs.beta == 1.0

    def test_invalid(self):
        with pytest.raises(DomainError):
            Observation(0.0, "a", [0.5, 0.6])
        with pytest.raises(DomainError):
            Observation(0.0, "a", [0.5, 0.5], beta=1.5)
        with pytest.raises(DimensionMismatchError):
            Observation(0.0, "a", [1.0])


def _manual_single_update(state: FilterState, s: np.ndarray, config: FilterConfig):
    """The beta = 1 update written without the blend: Dir(s | alpha) likelihood only, plain sweeps."""
    gamma_eta = config.gamma * state.eta
    gamma_nu = config.gamma * state.nu
    log_s = np.log(s)

    def g(x):
        return digamma(x) + gamma_eta * digamma(x)

    alpha = state.alpha_mode.copy()
    for _ in range(config.max_mm_iters):
        total = float(alpha.sum())
        targets = (digamma(total) + gamma_eta * digamma(total)) + log_s - gamma_nu
        updated = np.asarray(invert_monotone(g, targets, config.invert_tol, hint=alpha))
        step = float(np.max(np.abs(updated - alpha)))
        alpha = updated
        if step <= config.mm_tol:
            break
    eta = config.gamma * state.eta + 1.0
    return FilterState(ConjugatePriorParams(eta, nu_from_mode(alpha, eta)), alpha), dirichlet_mode(alpha)


class TestFilterUpdate:

    def test_eta_update(self):
        state = FilterState(ConjugatePriorParams(2.0, nu_from_mode(np.ones(3), 2.0)), np.ones(3))
        obs = Observation(0.0, "weak", clamp_probabilities([0.6, 0.3, 0.1]), beta=0.5)
        new_state, _ = filter_update(state, obs, FilterConfig(gamma=0.9))
        assert new_state.eta == pytest.approx(2.3, abs=1e-12)

    def test_mode_condition_after_update(self, rng):
        state = init_state(4)
        config = FilterConfig(gamma=0.9)
        for step in range(5):
            obs = Observation(float(step), "strong", clamp_probabilities(rng.dirichlet(np.ones(4))), beta=0.8)
            state, probs = filter_update(state, obs, config)
            assert mode_residual(state.prior, state.alpha_mode) <= 1e-10
            assert probs.sum() == pytest.approx(1.0, abs=1e-12)
            assert state.step_count == step + 1

    def test_persistence(self):
        config = FilterConfig(gamma=0.9)
        state = init_state(3, config)
        s = clamp_probabilities([0.9, 0.05, 0.05])
        outputs = []
        for step in range(50):
            state, probs = filter_update(state, Observation(float(step), "strong", s), config)
            outputs.append(probs)
        outputs = np.array(outputs)
        assert np.all(np.argmax(outputs[1:], axis=1) == 0)
        assert np.all(np.diff(outputs[-40:, 0]) >= -1e-6)

    def test_beta_one_is_bit_identical_to_single_model(self, rng):
        config = FilterConfig(gamma=0.9, accelerate=False)
        state = manual = init_state(3, config)
        for step in range(8):
            s = clamp_probabilities(rng.dirichlet(np.ones(3)))
            state, probs = filter_update(state, Observation(float(step), "strong", s), config)
            manual, manual_probs = _manual_single_update(manual, s, config)
            np.testing.assert_array_equal(state.alpha_mode, manual.alpha_mode)
            np.testing.assert_array_equal(state.nu, manual.nu)
            np.testing.assert_array_equal(probs, manual_probs)
            assert state.eta == manual.eta

    def test_eta_closed_form(self, rng):
        gamma, b, n = 0.9, 0.5, 30
        config = FilterConfig(gamma=gamma, init_eta=1.0)
        state = init_state(3, config)
        for step in range(n):
            obs = Observation(float(step), "weak", clamp_probabilities(rng.dirichlet(np.ones(3))), beta=b)
            state, _ = filter_update(state, obs, config)
        expected = gamma ** n * 1.0 + b * (1 - gamma ** n) / (1 - gamma)
        assert state.eta == pytest.approx(expected, abs=1e-12)

    def test_weak_observation_without_prior_weight(self):
        config = FilterConfig(init_eta=0.0)
        state = init_state(3, config)
        obs = Observation(0.0, "weak", clamp_probabilities([0.98, 0.01, 0.01]), beta=0.5)
        new_state, probs = filter_update(state, obs, config)
        assert new_state.iterations > 0
        assert new_state.alpha_mode[0] > 1.0
        assert np.all(np.isfinite(new_state.alpha_mode)) and np.all(new_state.alpha_mode > 0)
        assert np.argmax(probs) == 0 and probs[0] > 0.8

    def test_zero_beta_only_decays(self):
        config = FilterConfig(gamma=0.8)
        state = init_state(3, FilterConfig(init_alpha=(3.0, 2.0, 1.5), init_eta=2.0))
        obs = Observation(0.0, "weak", [1 / 3] * 3, beta=0.0)
        new_state, probs = filter_update(state, obs, config)
        assert new_state.eta == pytest.approx(1.6)
        np.testing.assert_array_equal(new_state.alpha_mode, state.alpha_mode)
        np.testing.assert_array_equal(probs, predict(state))
        assert new_state.converged and new_state.step_count == 1

    def test_zero_beta_argmax_invariant_under_decay(self):
        config = FilterConfig(gamma=0.8)
        state = init_state(3, FilterConfig(init_alpha=(3.0, 2.0, 1.5), init_eta=2.0))
        obs = Observation(0.0, "weak", [0.2, 0.3, 0.5], beta=0.0)
        _, direct = filter_update(state, obs, config)
        _, decayed = filter_update(decay(state, 0.5), obs, config)
        assert np.argmax(direct) == np.argmax(decayed)

    def test_deterministic(self, rng):
        observations = [
            Observation(float(i), "strong", clamp_probabilities(rng.dirichlet(np.ones(3))), beta=0.7)
            for i in range(10)
        ]
        config = FilterConfig()
        runs = []
        for _ in range(2):
            state = init_state(3, config)
            trajectory = []
            for obs in observations:
                state, probs = filter_update(state, obs, config)
                trajectory.append(np.concatenate([state.alpha_mode, state.nu, [state.eta], probs]))
            runs.append(np.array(trajectory))
        np.testing.assert_array_equal(runs[0], runs[1])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            filter_update(init_state(3), Observation(0.0, "a", [0.5, 0.5]), FilterConfig())


class TestDirichletFusionFilter:

    def test_update_and_predict(self):
        fusion = DirichletFusionFilter(3, FilterConfig(gamma=0.9))
        probs = fusion.update(Observation(0.0, "strong", clamp_probabilities([0.9, 0.05, 0.05])))
        np.testing.assert_array_equal(probs, fusion.predict())
        assert np.argmax(probs) == 0
        assert fusion.state.step_count == 1

    def test_skip_decays_without_moving_the_mode(self):
        fusion = DirichletFusionFilter(3, FilterConfig(gamma=0.9))
        fusion.update(Observation(0.0, "strong", clamp_probabilities([0.9, 0.05, 0.05])))
        before = fusion.state
        probs = fusion.skip(3)
        assert fusion.state.eta == pytest.approx(before.eta * 0.9 ** 3)
        np.testing.assert_array_equal(fusion.state.alpha_mode, before.alpha_mode)
        np.testing.assert_array_equal(probs, predict(before))

    def test_negative_skip(self):
        with pytest.raises(DomainError):
            DirichletFusionFilter(2).skip(-1)

    def test_counts_nonconverged_steps(self):
        fusion = DirichletFusionFilter(3, FilterConfig(max_mm_iters=1))
        fusion.update(Observation(0.0, "strong", clamp_probabilities([0.9, 0.05, 0.05])))
        assert fusion.nonconverged_steps == 1
        fusion.reset()
        assert fusion.nonconverged_steps == 0
        assert fusion.state.step_count == 0
