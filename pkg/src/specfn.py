"""
Special functions used by the filter: log-gamma, digamma and a
bracketing inverter for strictly increasing functions on (0, inf).

Exact values come from scipy.special. The lookup-table digamma trades a
small, bounded absolute error for a table read and is meant for targets
where evaluating special functions is expensive.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable, Optional, Union

import numpy as np
from scipy import special

from .errors import DomainError, NoConvergenceError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

DEFAULT_INVERT_TOL = 1e-10
DEFAULT_MAX_REFINEMENTS = 200
DEFAULT_MAX_EXPONENT = 100

# Initial bracket for invert_monotone
INITIAL_LOWER = 1e-8
INITIAL_UPPER = 1.0
BRACKET_FACTOR = 10.0

# Upper bound on |d^2/du^2 digamma(1 + e^u)| over the real line
_TABLE_CURVATURE = 0.3


class SpecFnKind(str, Enum):
    """How digamma is evaluated."""
    EXACT = "exact"
    LOOKUP_TABLE = "table"


@dataclass(frozen=True)
class SpecFnMode:
    """Digamma evaluation mode and lookup-table geometry."""
    mode: SpecFnKind = SpecFnKind.EXACT
    table_min: float = 1e-3
    table_max: float = 1e4
    table_points: int = 4096

    def __post_init__(self):
        object.__setattr__(self, 'mode', SpecFnKind(self.mode))
        if not 0 < self.table_min < self.table_max:
            raise DomainError(f"table range must satisfy 0 < min < max, got [{self.table_min}, {self.table_max}]")
        if self.table_points < 2:
            raise DomainError(f"table_points must be >= 2, got {self.table_points}")

    @property
    def is_exact(self) -> bool:
        return self.mode is SpecFnKind.EXACT

    @classmethod
    def parse(cls, name: str) -> 'SpecFnMode':
        """Build a mode with default table geometry from 'exact' or 'table'."""
        try:
            return cls(mode=SpecFnKind(name.strip().lower()))
        except ValueError:
            raise DomainError(f"unknown special-function mode '{name}', expected 'exact' or 'table'")


EXACT_MODE = SpecFnMode()
TABLE_MODE = SpecFnMode(mode=SpecFnKind.LOOKUP_TABLE)


def _check_positive(x: ArrayLike, name: str) -> np.ndarray:
    values = np.asarray(x, dtype=float)
    if np.any(np.isnan(values)) or np.any(values <= 0):
        raise DomainError(f"{name} requires strictly positive arguments")
    return values


def _as_output(values: np.ndarray, like: ArrayLike) -> ArrayLike:
    if np.ndim(like) == 0:
        return float(np.asarray(values).reshape(-1)[0])
    return values


def log_gamma(x: ArrayLike) -> ArrayLike:
    """ln Gamma(x) for x > 0."""
    values = _check_positive(x, "log_gamma")
    return _as_output(special.gammaln(values), x)


@lru_cache(maxsize=8)
def _digamma_table(table_min: float, table_max: float, table_points: int) -> tuple[np.ndarray, np.ndarray]:
    log_grid = np.linspace(np.log(table_min), np.log(table_max), table_points)
    # digamma(1 + x) is smooth down to x = 0; the 1/x pole is added back exactly
    values = special.digamma(1.0 + np.exp(log_grid))
    logger.debug(f"Built digamma table with {table_points} points on [{table_min}, {table_max}]")
    return log_grid, values


def lookup_error_bound(mode: SpecFnMode = TABLE_MODE) -> float:
    """Absolute error bound of the lookup-table digamma inside the table range."""
    spacing = (np.log(mode.table_max) - np.log(mode.table_min)) / (mode.table_points - 1)
    return _TABLE_CURVATURE * spacing ** 2 / 8.0 + 1e-12


def _digamma_lookup(values: np.ndarray, mode: SpecFnMode) -> np.ndarray:
    log_grid, table = _digamma_table(mode.table_min, mode.table_max, mode.table_points)
    result = special.digamma(values)
    inside = (values >= mode.table_min) & (values <= mode.table_max)
    if np.any(inside):
        x = values[inside]
        result[inside] = np.interp(np.log(x), log_grid, table) - 1.0 / x
    return result


def digamma(x: ArrayLike, mode: SpecFnMode = EXACT_MODE) -> ArrayLike:
    """Psi(x) = d/dx ln Gamma(x) for x > 0."""
    values = _check_positive(x, "digamma")
    if mode.is_exact:
        return _as_output(special.digamma(values), x)
    return _as_output(_digamma_lookup(np.atleast_1d(values).astype(float), mode).reshape(values.shape), x)


def invert_monotone(
    f: Callable[[np.ndarray], np.ndarray],
    y: ArrayLike,
    tol: float = DEFAULT_INVERT_TOL,
    *,
    hint: Optional[ArrayLike] = None,
    max_iter: int = DEFAULT_MAX_REFINEMENTS,
    max_exponent: int = DEFAULT_MAX_EXPONENT,
) -> ArrayLike:
    """
    Solve f(x) = y for x > 0, elementwise.

    f must be strictly increasing on (0, inf) and accept numpy arrays.
    Without a hint the bracket starts at [1e-8, 1]; with one it starts at
    [hint / 2, hint] or [hint, 2 hint], and a hint already within tol is
    returned unchanged. The bracket then grows geometrically (factor 10)
    until it encloses y. Refinement splits at the geometric midpoint while
    the bracket spans more than a factor of 4 and takes Illinois
    false-position steps after that.

    Args:
        f: Vectorized strictly increasing function
        y: Target value(s)
        tol: Stop once |f(x) - y| <= tol
        hint: Starting point(s), e.g. the previous solution
        max_iter: Refinement budget
        max_exponent: The bracket never leaves [10**-max_exponent, 10**max_exponent]

    Returns:
        x with |f(x) - y| <= tol, or the closest representable point when
        float resolution is exhausted first

    Raises:
        NoConvergenceError: y lies outside the range of f on the allowed bracket
    """
    if tol <= 0:
        raise DomainError(f"tol must be positive, got {tol}")
    target = np.atleast_1d(np.asarray(y, dtype=float)).copy()
    if not np.all(np.isfinite(target)):
        raise DomainError("invert_monotone targets must be finite")

    floor = 10.0 ** -max_exponent
    ceiling = 10.0 ** max_exponent
    result = np.full(target.shape, np.nan)
    active = np.ones(target.shape, dtype=bool)

    if hint is None:
        lo = np.full(target.shape, INITIAL_LOWER)
        hi = np.full(target.shape, INITIAL_UPPER)
        f_lo, f_hi = f(lo), f(hi)
    else:
        start = np.broadcast_to(np.asarray(hint, dtype=float), target.shape).copy()
        if not np.all(np.isfinite(start)) or np.any(start <= 0):
            raise DomainError("invert_monotone hints must be finite and positive")
        f_start = f(start)
        settled = np.abs(f_start - target) <= tol
        result = np.where(settled, start, result)
        active &= ~settled
        if not np.any(active):
            return _as_output(result, y)
        above = f_start > target
        lo = np.where(above, start / 2.0, start)
        hi = np.where(above, start, start * 2.0)
        f_other = f(np.where(above, lo, hi))
        f_lo = np.where(above, f_other, f_start)
        f_hi = np.where(above, f_start, f_other)

    while np.any(short := active & (f_hi < target)):
        if np.any(hi[short] >= ceiling):
            raise NoConvergenceError(
                f"bracket expansion exceeded 1e{max_exponent}; target above attainable range",
                residual=float(np.max(target[short] - f_hi[short])),
            )
        lo = np.where(short, hi, lo)
        f_lo = np.where(short, f_hi, f_lo)
        hi = np.where(short, hi * BRACKET_FACTOR, hi)
        f_hi = f(hi)

    while np.any(over := active & (f_lo > target)):
        if np.any(lo[over] <= floor):
            raise NoConvergenceError(
                f"bracket expansion exceeded 1e-{max_exponent}; target below attainable range",
                residual=float(np.max(f_lo[over] - target[over])),
            )
        hi = np.where(over, lo, hi)
        f_hi = np.where(over, f_lo, f_hi)
        lo = np.where(over, lo / BRACKET_FACTOR, lo)
        f_lo = f(lo)

    # Signed residuals at the bracket ends; Illinois halves the stale one
    e_lo = f_lo - target
    e_hi = f_hi - target
    last_side = np.zeros(target.shape, dtype=int)
    residual = np.full(target.shape, np.inf)
    for _ in range(max_iter):
        wide = hi > 4.0 * lo
        with np.errstate(divide='ignore', invalid='ignore'):
            secant = lo - e_lo * (hi - lo) / (e_hi - e_lo)
        inside = np.isfinite(secant) & (secant > lo) & (secant < hi)
        mid = np.where(wide, np.sqrt(lo * hi), np.where(inside, secant, 0.5 * (lo + hi)))
        error = f(mid) - target
        exhausted = (mid <= lo) | (mid >= hi)
        finished = active & ((np.abs(error) <= tol) | exhausted)
        result = np.where(finished, mid, result)
        residual = np.where(active, np.abs(error), residual)
        active &= ~finished
        if not np.any(active):
            return _as_output(result, y)
        move_lo = active & (error < 0)
        move_hi = active & ~(error < 0)
        e_hi = np.where(move_lo & (last_side < 0) & ~wide, 0.5 * e_hi, e_hi)
        e_lo = np.where(move_hi & (last_side > 0) & ~wide, 0.5 * e_lo, e_lo)
        lo = np.where(move_lo, mid, lo)
        e_lo = np.where(move_lo, error, e_lo)
        hi = np.where(move_hi, mid, hi)
        e_hi = np.where(move_hi, error, e_hi)
        last_side = np.where(wide, 0, np.where(move_lo, -1, np.where(move_hi, 1, last_side)))

    raise NoConvergenceError(
        f"root refinement did not reach tol={tol} in {max_iter} iterations",
        residual=float(np.max(residual[active])),
        iterations=max_iter,
    )
