"""Shared oracles and fixtures."""

import math

import numpy as np
import pytest
from scipy import optimize

from src.dirichlet import ConjugatePriorParams, clamp_probabilities, nu_from_mode

EULER_GAMMA = 0.57721566490153286


def _series_digamma(x: float) -> float:
    """Upward recurrence to x >= 6, then the asymptotic series through x**-12."""
    shift = 0.0
    while x < 6.0:
        shift -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    tail = inv2 * (1 / 12 - inv2 * (1 / 120 - inv2 * (1 / 252 - inv2 * (1 / 240 - inv2 * (1 / 132 - inv2 * 691 / 32760)))))
    return shift + math.log(x) - 0.5 / x - tail


series_digamma = np.vectorize(_series_digamma, otypes=[float])


def grid_maximize(objective, lo: float, hi: float, points: int = 400) -> np.ndarray:
    """
    Maximize a function of a 2-vector: dense log grid, then Nelder-Mead.

    `objective` must accept stacked (N, 2) inputs.
    """
    axis = np.geomspace(lo, hi, points)
    a1, a2 = np.meshgrid(axis, axis, indexing='ij')
    stacked = np.stack([a1.ravel(), a2.ravel()], axis=-1)
    values = objective(stacked)
    start = stacked[int(np.argmax(values))]

    def negative(log_alpha):
        return -objective(np.exp(log_alpha))

    result = optimize.minimize(
        negative, np.log(start), method='Nelder-Mead', options={'xatol': 1e-9, 'fatol': 1e-14, 'maxiter': 5000}
    )
    return np.exp(result.x)


def random_instance(rng: np.random.Generator, k: int):
    """Clamped observation, prior from a random mode, beta in (0, 1], gamma in (0, 1]."""
    s = clamp_probabilities(rng.dirichlet(np.ones(k)), 1e-6)
    eta = rng.uniform(0.1, 20.0)
    mode = rng.uniform(0.3, 2.0, size=k)
    prior = ConjugatePriorParams(eta, nu_from_mode(mode, eta))
    beta = 1.0 - rng.uniform(0.0, 1.0)
    gamma = 1.0 - rng.uniform(0.0, 1.0)
    return s, prior, beta, gamma, mode


@pytest.fixture
def rng():
    return np.random.default_rng(42)
