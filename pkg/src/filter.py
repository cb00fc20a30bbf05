"""
Dirichlet fusion filter.

The latent class-probability parameter alpha(t) is tracked through the
conjugate prior CP(alpha | eta, nu). Each observation s(t) with weight
beta is modelled as Dir(s | beta * alpha + (1 - beta) * 1); the posterior
mode is found by the MM fixed-point sweep on G and the prior is then
re-centred on that mode with eta <- gamma * eta + beta.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .dirichlet import (
    DEFAULT_CLAMP_EPS,
    ConjugatePriorParams,
    as_dirichlet_params,
    dirichlet_mode,
    nu_from_mode,
    posterior_objective,
)
from .errors import DimensionMismatchError, DomainError, NoConvergenceError
from .specfn import DEFAULT_INVERT_TOL, EXACT_MODE, SpecFnMode, digamma, invert_monotone

logger = logging.getLogger(__name__)

# Observations may come straight from a stream reader
OBSERVATION_ATOL = 1e-6

# Smallest concentration G_inverse returns when G is bounded below
ALPHA_FLOOR = 1e-8
EXTRAPOLATION_BACKTRACKS = 3


@dataclass(frozen=True)
class FilterConfig:
    """Filter parameters. None of them is fixed by the model; all are configuration surface."""
    gamma: float = 0.95
    max_mm_iters: int = 20
    mm_tol: float = 1e-8
    invert_tol: float = DEFAULT_INVERT_TOL
    init_alpha: Optional[tuple] = None
    init_eta: float = 1.0
    specfn_mode: SpecFnMode = EXACT_MODE
    clamp_eps: float = DEFAULT_CLAMP_EPS
    accelerate: bool = True

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise DomainError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.max_mm_iters < 1:
            raise DomainError(f"max_mm_iters must be >= 1, got {self.max_mm_iters}")
        if self.mm_tol <= 0 or self.invert_tol <= 0:
            raise DomainError("tolerances must be positive")
        if self.init_eta < 0:
            raise DomainError(f"init_eta must be non-negative, got {self.init_eta}")
        if self.init_alpha is not None:
            object.__setattr__(self, 'init_alpha', tuple(float(a) for a in as_dirichlet_params(self.init_alpha)))


@dataclass(frozen=True, eq=False)
class FilterState:
    """Per-stream filter state: the prior (eta, nu) and its cached mode alpha*."""
    prior: ConjugatePriorParams
    alpha_mode: np.ndarray
    step_count: int = 0
    converged: bool = True
    iterations: int = 0

    @property
    def eta(self) -> float:
        return self.prior.eta

    @property
    def nu(self) -> np.ndarray:
        return self.prior.nu

    @property
    def n_classes(self) -> int:
        return self.prior.n_classes


@dataclass(frozen=True, eq=False)
class Observation:
    """One classifier report: time, source id, class probabilities and weight beta."""
    t: float
    source: str
    s: np.ndarray
    beta: float = 1.0

    def __post_init__(self):
        probs = np.array(self.s, dtype=float)
        if probs.ndim != 1 or probs.size < 2:
            raise DimensionMismatchError(f"observation needs a (K,) probability vector, got shape {probs.shape}")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0) or abs(probs.sum() - 1.0) > OBSERVATION_ATOL:
            raise DomainError(f"observation at t={self.t} is not a probability vector")
        if not 0.0 <= self.beta <= 1.0:
            raise DomainError(f"beta must lie in [0, 1], got {self.beta}")
        object.__setattr__(self, 's', probs)
        object.__setattr__(self, 'beta', float(self.beta))


@dataclass
class MMResult:
    """Output of mm_posterior_mode."""
    alpha: np.ndarray
    converged: bool
    iterations: int
    history: list = field(default_factory=list)


def G(
    x: Union[float, np.ndarray],
    beta: float,
    c: float,
    gamma_eta: float,
    mode: SpecFnMode = EXACT_MODE,
) -> Union[float, np.ndarray]:
    """
    G(x) = beta * Psi(beta * x + c) + gamma_eta * Psi(x).

    Strictly increasing in x when beta > 0 or gamma_eta > 0.
    """
    if not 0.0 <= beta <= 1.0:
        raise DomainError(f"beta must lie in [0, 1], got {beta}")
    if c < 0 or gamma_eta < 0:
        raise DomainError(f"G needs c >= 0 and gamma_eta >= 0, got c={c}, gamma_eta={gamma_eta}")
    values = np.asarray(x, dtype=float)
    if np.any(values <= 0):
        raise DomainError("G requires x > 0")
    result = beta * np.asarray(digamma(beta * values + c, mode)) + gamma_eta * np.asarray(digamma(values, mode))
    return float(result) if np.ndim(x) == 0 else result


def G_inverse(
    y: Union[float, np.ndarray],
    beta: float,
    c: float,
    gamma_eta: float,
    tol: float = DEFAULT_INVERT_TOL,
    mode: SpecFnMode = EXACT_MODE,
    *,
    hint: Optional[Union[float, np.ndarray]] = None,
) -> Union[float, np.ndarray]:
    """
    Solve G(x; beta, c, gamma_eta) = y for x > 0.

    With gamma_eta = 0 and c > 0, G is bounded below by beta * Psi(c); a
    target at or below G(ALPHA_FLOOR) maps to ALPHA_FLOOR.

    Raises:
        DomainError: beta = 0 and gamma_eta = 0 (G is constant)
        NoConvergenceError: y is outside the range of G
    """
    if beta <= 0 and gamma_eta <= 0:
        raise DomainError("G is constant for beta = 0 and gamma_eta = 0")

    def g(x):
        return G(x, beta, c, gamma_eta, mode)

    if gamma_eta > 0 or c <= 0:
        return invert_monotone(g, y, tol, hint=hint)

    targets = np.atleast_1d(np.asarray(y, dtype=float))
    pinned = targets <= g(ALPHA_FLOOR)
    if not np.any(pinned):
        return invert_monotone(g, y, tol, hint=hint)
    result = np.full(targets.shape, ALPHA_FLOOR)
    free = ~pinned
    if np.any(free):
        start = None if hint is None else np.broadcast_to(np.asarray(hint, dtype=float), targets.shape)[free]
        result[free] = invert_monotone(g, targets[free], tol, hint=start)
    return float(result[0]) if np.ndim(y) == 0 else result


def _extrapolate(start: np.ndarray, first: np.ndarray, second: np.ndarray, objective) -> Optional[np.ndarray]:
    """
    Squared extrapolation of two MM sweeps start -> first -> second.

    The step length starts at -|r| / |v| and is pulled back towards -1
    (which reproduces `second`). A candidate is taken only when it is
    positive and its objective is at least that of `second`.
    """
    r = first - start
    v = second - 2.0 * first + start
    v_norm = float(np.linalg.norm(v))
    if v_norm == 0.0:
        return None
    step = -float(np.linalg.norm(r)) / v_norm
    baseline = objective(second)
    for _ in range(EXTRAPOLATION_BACKTRACKS + 1):
        if step >= -1.0:
            break
        candidate = start - 2.0 * step * r + step * step * v
        if np.all(np.isfinite(candidate)) and np.all(candidate > 0) and objective(candidate) >= baseline:
            return candidate
        step = 0.5 * (step - 1.0)
    return None


def mm_posterior_mode(
    s: np.ndarray,
    prior: ConjugatePriorParams,
    beta: float,
    config: FilterConfig,
    initial: Optional[np.ndarray] = None,
    *,
    keep_history: bool = False,
) -> MMResult:
    """
    Posterior mode of alpha after observing s with weight beta.

    Each sweep evaluates r_i = G(sum alpha; beta, K(1 - beta), gamma eta)
    + beta log s_i - gamma nu_i and sets alpha_i = G^-1(r_i; beta, 1 - beta,
    gamma eta), starting each inversion at the current alpha_i. With
    config.accelerate, every pair of sweeps is followed by a squared
    extrapolation that is kept only if it does not lower the objective,
    so the objective never decreases along the recorded iterates.

    Args:
        s: Clamped probability vector (every entry > 0)
        prior: (eta, nu) before the update; gamma is applied here
        beta: Observation weight
        config: Filter settings (gamma, sweep budget, tolerances)
        initial: Starting iterate, normally the cached prior mode
        keep_history: Record every iterate, starting with the initial one

    Returns:
        MMResult with the last iterate; iterations counts sweeps. Running
        out of sweeps, or a target outside the range of G, sets
        converged=False instead of raising.
    """
    k = prior.n_classes
    points = np.asarray(s, dtype=float)
    if points.shape != (k,):
        raise DimensionMismatchError(f"s has shape {points.shape}, expected ({k},)")
    if np.any(points <= 0):
        raise DomainError("mm_posterior_mode needs a clamped observation (every entry > 0)")
    if not 0.0 <= beta <= 1.0:
        raise DomainError(f"beta must lie in [0, 1], got {beta}")

    alpha = as_dirichlet_params(np.ones(k) if initial is None else initial).astype(float, copy=True)
    if alpha.shape != (k,):
        raise DimensionMismatchError(f"initial iterate has shape {alpha.shape}, expected ({k},)")

    log_s = np.log(points)
    gamma_eta = config.gamma * prior.eta
    gamma_nu = config.gamma * prior.nu
    observation_offset = k * (1.0 - beta)
    history = [alpha.copy()] if keep_history else []

    def sweep(current: np.ndarray) -> np.ndarray:
        targets = (
            G(float(current.sum()), beta, observation_offset, gamma_eta, config.specfn_mode)
            + beta * log_s
            - gamma_nu
        )
        updated = G_inverse(
            targets, beta, 1.0 - beta, gamma_eta, config.invert_tol, config.specfn_mode, hint=current
        )
        if keep_history:
            history.append(np.array(updated, dtype=float))
        return np.asarray(updated, dtype=float)

    def objective(candidate: np.ndarray) -> float:
        return posterior_objective(candidate, points, prior, beta, config.gamma)

    def settled(before: np.ndarray, after: np.ndarray) -> bool:
        return float(np.max(np.abs(after - before))) <= config.mm_tol

    sweeps = 0
    try:
        while sweeps < config.max_mm_iters:
            start = alpha
            alpha = sweep(start)
            sweeps += 1
            if settled(start, alpha):
                return MMResult(alpha, True, sweeps, history)
            if not config.accelerate or sweeps == config.max_mm_iters:
                continue

            first = alpha
            alpha = sweep(first)
            sweeps += 1
            if settled(first, alpha):
                return MMResult(alpha, True, sweeps, history)

            jump = _extrapolate(start, first, alpha, objective)
            if jump is not None:
                alpha = jump
                if keep_history:
                    history.append(alpha.copy())
    except NoConvergenceError as e:
        logger.debug(f"MM sweep {sweeps + 1}: G inversion failed ({e})")
        return MMResult(alpha, False, sweeps, history)

    logger.debug(f"MM stopped after {config.max_mm_iters} sweeps without meeting mm_tol={config.mm_tol}")
    return MMResult(alpha, False, config.max_mm_iters, history)


def decay(state: FilterState, gamma: float) -> FilterState:
    """(eta, nu) <- (gamma * eta, gamma * nu); the cached mode is unchanged."""
    if not 0.0 < gamma <= 1.0:
        raise DomainError(f"gamma must lie in (0, 1], got {gamma}")
    return replace(state, prior=state.prior.scaled(gamma))


def init_state(n_classes: int, config: Optional[FilterConfig] = None) -> FilterState:
    """Initial state: alpha* = init_alpha (default all ones), eta = init_eta."""
    config = config or FilterConfig()
    if n_classes < 2:
        raise DomainError(f"need at least 2 classes, got {n_classes}")
    if config.init_alpha is None:
        alpha = np.ones(n_classes)
    else:
        alpha = np.array(config.init_alpha, dtype=float)
        if alpha.size != n_classes:
            raise DimensionMismatchError(f"init_alpha has {alpha.size} entries, expected {n_classes}")
    nu = nu_from_mode(alpha, config.init_eta, config.specfn_mode)
    return FilterState(ConjugatePriorParams(config.init_eta, nu), alpha)


def predict(state: FilterState) -> np.ndarray:
    """Current class-probability estimate: the Dirichlet mode of the cached alpha*."""
    return dirichlet_mode(state.alpha_mode)


def filter_update(state: FilterState, obs: Observation, config: FilterConfig) -> tuple[FilterState, np.ndarray]:
    """
    Fold one observation into the state.

    Returns:
        (new state, smoothed probability vector). Solver trouble is
        reported through new_state.converged; the stream never stops.
    """
    if obs.s.size != state.n_classes:
        raise DimensionMismatchError(f"observation has {obs.s.size} classes, state has {state.n_classes}")

    if obs.beta == 0.0:
        decayed = decay(state, config.gamma)
        new_state = replace(decayed, step_count=state.step_count + 1, converged=True, iterations=0)
        return new_state, predict(new_state)

    result = mm_posterior_mode(obs.s, state.prior, obs.beta, config, initial=state.alpha_mode)
    eta = config.gamma * state.eta + obs.beta
    nu = nu_from_mode(result.alpha, eta, config.specfn_mode)
    new_state = FilterState(
        prior=ConjugatePriorParams(eta, nu),
        alpha_mode=result.alpha,
        step_count=state.step_count + 1,
        converged=result.converged,
        iterations=result.iterations,
    )
    return new_state, dirichlet_mode(result.alpha)


class DirichletFusionFilter:
    """Stateful wrapper owning the FilterState of one stream."""

    def __init__(self, n_classes: int, config: Optional[FilterConfig] = None):
        self.config = config or FilterConfig()
        self.n_classes = n_classes
        self._state = init_state(n_classes, self.config)
        self.nonconverged_steps = 0

    @property
    def state(self) -> FilterState:
        return self._state

    def update(self, obs: Observation) -> np.ndarray:
        """Process one observation and return the smoothed probabilities."""
        self._state, probs = filter_update(self._state, obs, self.config)
        if not self._state.converged:
            self.nonconverged_steps += 1
        return probs

    def skip(self, n: int = 1) -> np.ndarray:
        """Apply decay for n missing observations and return the prediction."""
        if n < 0:
            raise DomainError(f"cannot skip a negative number of steps ({n})")
        for _ in range(n):
            self._state = decay(self._state, self.config.gamma)
        return self.predict()

    def predict(self) -> np.ndarray:
        return predict(self._state)

    def reset(self):
        self._state = init_state(self.n_classes, self.config)
        self.nonconverged_steps = 0
