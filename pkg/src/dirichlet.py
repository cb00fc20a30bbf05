"""
Dirichlet and conjugate-prior densities, modes and the posterior objective.

Class-probability vectors and Dirichlet parameters are plain numpy arrays;
the last axis is the class axis. Functions that only need a single vector
also accept stacked inputs, which the Monte-Carlo and grid oracles rely on.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import DimensionMismatchError, DomainError, NoConvergenceError
from .specfn import DEFAULT_INVERT_TOL, EXACT_MODE, SpecFnMode, digamma, invert_monotone, log_gamma

logger = logging.getLogger(__name__)

ProbabilityVector = np.ndarray
DirichletParams = np.ndarray

DEFAULT_CLAMP_EPS = 1e-6
SIMPLEX_ATOL = 1e-9


def as_probability_vector(probs, atol: float = SIMPLEX_ATOL) -> ProbabilityVector:
    """Validate a point on the unit simplex and return it as a float array."""
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise DimensionMismatchError(f"probability vector needs shape (K,) with K >= 2, got {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise DomainError("probability entries must lie in [0, 1]")
    if abs(p.sum() - 1.0) > atol:
        raise DomainError(f"probabilities sum to {p.sum():.12g}, expected 1 within {atol}")
    return p


def clamp_probabilities(probs, eps: float = DEFAULT_CLAMP_EPS) -> ProbabilityVector:
    """
    Raise entries below eps to exactly eps and rescale the rest to keep the sum at 1.

    Every entry of the result is >= eps, so its logarithm is finite.
    """
    p = np.asarray(probs, dtype=float)
    k = p.size
    if not 0 < eps < 1.0 / k:
        raise DomainError(f"clamp eps must lie in (0, 1/K) = (0, {1.0 / k}), got {eps}")
    p = np.maximum(p, 0.0)
    pinned = np.zeros(k, dtype=bool)
    for _ in range(k):
        newly = ~pinned & (p < eps)
        if not np.any(newly):
            break
        pinned |= newly
        free_mass = 1.0 - eps * pinned.sum()
        free_total = p[~pinned].sum()
        p = np.where(pinned, eps, p * (free_mass / free_total))
    if not np.any(pinned):
        p = p / p.sum()
    return p


def as_dirichlet_params(alpha) -> DirichletParams:
    """Validate a concentration vector (every entry > 0)."""
    a = np.asarray(alpha, dtype=float)
    if a.ndim < 1 or a.shape[-1] < 2:
        raise DimensionMismatchError(f"Dirichlet parameters need K >= 2 classes, got shape {a.shape}")
    if not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise DomainError("Dirichlet parameters must be finite and strictly positive")
    return a


def _check_classes(expected: int, vector: np.ndarray, name: str):
    if vector.shape[-1] != expected:
        raise DimensionMismatchError(f"{name} has {vector.shape[-1]} classes, expected {expected}")


def _scalar_or_array(values):
    values = np.asarray(values)
    return float(values) if values.ndim == 0 else values


@dataclass(frozen=True, eq=False)
class ConjugatePriorParams:
    """(eta, nu) of the conjugate prior CP(alpha | eta, nu) ~ A(alpha)^eta exp(-<alpha, nu>)."""
    eta: float
    nu: np.ndarray

    def __post_init__(self):
        eta = float(self.eta)
        nu = np.array(self.nu, dtype=float)
        if not np.isfinite(eta) or eta < 0:
            raise DomainError(f"eta must be a finite non-negative number, got {self.eta}")
        if nu.ndim != 1 or not np.all(np.isfinite(nu)):
            raise DomainError("nu must be a finite vector")
        nu.setflags(write=False)
        object.__setattr__(self, 'eta', eta)
        object.__setattr__(self, 'nu', nu)

    @property
    def n_classes(self) -> int:
        return self.nu.size

    def scaled(self, gamma: float) -> 'ConjugatePriorParams':
        """(gamma * eta, gamma * nu); leaves the mode where it is."""
        return ConjugatePriorParams(gamma * self.eta, gamma * self.nu)


@dataclass(frozen=True)
class ModeSolverConfig:
    """Settings for the conjugate-prior mode solver."""
    tol: float = 1e-8
    max_iter: int = 100
    damping: float = 1.0
    accelerate: bool = True
    invert_tol: float = DEFAULT_INVERT_TOL
    specfn_mode: SpecFnMode = EXACT_MODE


def log_A(alpha) -> Union[float, np.ndarray]:
    """ln Gamma(sum alpha) - sum ln Gamma(alpha_i), the log Dirichlet normalizer."""
    a = as_dirichlet_params(alpha)
    return _scalar_or_array(log_gamma(a.sum(axis=-1)) - np.sum(log_gamma(a), axis=-1))


def dirichlet_log_pdf(s, alpha) -> Union[float, np.ndarray]:
    """log Dir(s | alpha); s must be strictly positive (clamp first)."""
    a = as_dirichlet_params(alpha)
    points = np.asarray(s, dtype=float)
    _check_classes(a.shape[-1], points, "s")
    if np.any(points <= 0):
        raise DomainError("dirichlet_log_pdf needs strictly positive probabilities; clamp the input")
    return _scalar_or_array(log_A(a) + np.sum((a - 1.0) * np.log(points), axis=-1))


def dirichlet_mode(alpha) -> ProbabilityVector:
    """
    Mode of Dir(. | alpha) when every alpha_i > 1, otherwise the mean.

    The mean keeps the class ordering of alpha, so the argmax is the same
    as that of the boundary mode in the usual near-boundary cases.
    """
    a = as_dirichlet_params(alpha)
    if np.all(a > 1.0):
        return (a - 1.0) / (a.sum() - a.size)
    return a / a.sum()


def cp_log_density_unnormalized(alpha, prior: ConjugatePriorParams) -> Union[float, np.ndarray]:
    """eta * ln A(alpha) - <alpha, nu>; the normalizer B(eta, nu) has no closed form."""
    a = as_dirichlet_params(alpha)
    _check_classes(prior.n_classes, a, "alpha")
    return _scalar_or_array(prior.eta * np.asarray(log_A(a)) - np.sum(a * prior.nu, axis=-1))


def nu_from_mode(alpha_star, eta: float, mode: SpecFnMode = EXACT_MODE) -> np.ndarray:
    """nu_i = eta * (Psi(sum alpha*) - Psi(alpha*_i)), so that alpha* is the mode of CP(eta, nu)."""
    a = as_dirichlet_params(alpha_star)
    if eta < 0:
        raise DomainError(f"eta must be non-negative, got {eta}")
    return eta * (digamma(a.sum(), mode) - np.asarray(digamma(a, mode)))


def mode_residual(prior: ConjugatePriorParams, alpha, mode: SpecFnMode = EXACT_MODE) -> float:
    """max_j |Psi(alpha_j) - Psi(sum alpha) + nu_j / eta|."""
    if prior.eta <= 0:
        raise DomainError("the mode condition is undefined for eta = 0")
    a = as_dirichlet_params(alpha)
    _check_classes(prior.n_classes, a, "alpha")
    gap = np.asarray(digamma(a, mode)) - digamma(a.sum(), mode) + prior.nu / prior.eta
    return float(np.max(np.abs(gap)))


def cp_mode(
    prior: ConjugatePriorParams,
    solver_config: Optional[ModeSolverConfig] = None,
    initial: Optional[DirichletParams] = None,
) -> DirichletParams:
    """
    Mode alpha* of CP(alpha | eta, nu).

    Solves Psi(alpha_j) - Psi(sum alpha) + nu_j / eta = 0 with the fixed point
    alpha_j <- Psi^-1(Psi(sum alpha) - nu_j / eta). The map only depends on the
    total u = sum alpha, so the iteration runs on u, with Aitken extrapolation
    of the scalar sequence when enabled.

    Raises:
        DomainError: eta = 0 or sum_j exp(-nu_j / eta) >= 1 (the density is
            unbounded along some ray, so there is no finite mode)
        NoConvergenceError: residual above tolerance after max_iter sweeps
    """
    cfg = solver_config or ModeSolverConfig()
    if prior.eta <= 0:
        raise DomainError("conjugate-prior mode is undefined for eta = 0")
    if np.sum(np.exp(-prior.nu / prior.eta)) >= 1.0:
        raise DomainError("conjugate prior has no finite mode: sum_j exp(-nu_j / eta) must be below 1")

    targets = -prior.nu / prior.eta

    def psi(x):
        return digamma(x, cfg.specfn_mode)

    def alphas_for(total: float) -> np.ndarray:
        return np.asarray(invert_monotone(psi, psi(total) + targets, cfg.invert_tol))

    def sweep(total: float) -> float:
        return total + cfg.damping * (float(alphas_for(total).sum()) - total)

    u = float(np.sum(initial)) if initial is not None else float(prior.n_classes)
    residual = np.inf
    for iteration in range(1, cfg.max_iter + 1):
        u1 = sweep(u)
        u_next = u1
        if cfg.accelerate:
            u2 = sweep(u1)
            curvature = u2 - 2.0 * u1 + u
            u_next = u2
            if curvature != 0.0:
                extrapolated = u - (u1 - u) ** 2 / curvature
                if np.isfinite(extrapolated) and extrapolated > 0 and (extrapolated - u2) * (u2 - u1) >= 0:
                    u_next = extrapolated
        alpha = alphas_for(u_next)
        residual = mode_residual(prior, alpha, cfg.specfn_mode)
        if residual <= cfg.tol:
            logger.debug(f"cp_mode converged in {iteration} iterations (residual {residual:.3e})")
            return alpha
        u = u_next

    raise NoConvergenceError(
        f"cp_mode did not converge in {cfg.max_iter} iterations (residual {residual:.3e})",
        residual=float(residual),
        iterations=cfg.max_iter,
    )


def _observation_inputs(alpha, s, prior: ConjugatePriorParams, beta: float, gamma: float):
    a = as_dirichlet_params(alpha)
    points = np.asarray(s, dtype=float)
    _check_classes(prior.n_classes, a, "alpha")
    _check_classes(prior.n_classes, points, "s")
    if np.any(points <= 0):
        raise DomainError("the posterior objective needs strictly positive probabilities; clamp the input")
    if not 0.0 <= beta <= 1.0:
        raise DomainError(f"beta must lie in [0, 1], got {beta}")
    if not 0.0 < gamma <= 1.0:
        raise DomainError(f"gamma must lie in (0, 1], got {gamma}")
    return a, np.log(points)


def posterior_objective(alpha, s, prior: ConjugatePriorParams, beta: float, gamma: float) -> Union[float, np.ndarray]:
    """
    L(alpha), the log posterior (up to a constant) after observing s with weight beta.

    The observation is Dir(s | beta * alpha + (1 - beta) * 1); (eta, nu) are the
    parameters from before the update and enter decayed by gamma.
    """
    a, log_s = _observation_inputs(alpha, s, prior, beta, gamma)
    k = a.shape[-1]
    total = a.sum(axis=-1)
    observation = (
        log_gamma(k * (1.0 - beta) + beta * total)
        - np.sum(log_gamma(beta * a + (1.0 - beta)), axis=-1)
        + beta * np.sum(a * log_s, axis=-1)
    )
    prior_term = (
        gamma * prior.eta * (log_gamma(total) - np.sum(log_gamma(a), axis=-1))
        - gamma * np.sum(a * prior.nu, axis=-1)
    )
    return _scalar_or_array(observation + prior_term)


def posterior_gradient(
    alpha, s, prior: ConjugatePriorParams, beta: float, gamma: float, mode: SpecFnMode = EXACT_MODE
) -> np.ndarray:
    """Gradient of posterior_objective; zero at the posterior mode."""
    a, log_s = _observation_inputs(alpha, s, prior, beta, gamma)
    k = a.shape[-1]
    total = a.sum(axis=-1, keepdims=True)
    return (
        beta * np.asarray(digamma(k * (1.0 - beta) + beta * total, mode))
        - beta * np.asarray(digamma(beta * a + (1.0 - beta), mode))
        + beta * log_s
        + gamma * prior.eta * (np.asarray(digamma(total, mode)) - np.asarray(digamma(a, mode)))
        - gamma * prior.nu
    )
