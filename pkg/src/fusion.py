"""
Multi-classifier orchestration: beta per classifier, the fixed call
schedule, and the smoothers compared in the benchmark (Raw, Simple,
Single, Multiple).
"""

import logging
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Optional

import numpy as np

from .dirichlet import clamp_probabilities
from .errors import DimensionMismatchError, DomainError, UnknownClassifierError
from .filter import DirichletFusionFilter, FilterConfig, Observation

logger = logging.getLogger(__name__)

STRONG_ID = "strong"
WEAK_ID = "weak"

DEFAULT_WINDOW = 5


@dataclass(frozen=True)
class ClassifierProfile:
    """A classifier's observation weight and call period (seconds)."""
    id: str
    beta: float
    period: float

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise DomainError(f"beta for '{self.id}' must lie in [0, 1], got {self.beta}")
        if self.period <= 0:
            raise DomainError(f"period for '{self.id}' must be positive, got {self.period}")


class ScheduleRule(str, Enum):
    FIXED_PERIODS = "fixed_periods"


@dataclass(frozen=True)
class SchedulePolicy:
    """
    Ordered classifier profiles; earlier profiles win schedule collisions.

    The last profile is the fallback and defines the tick grid.
    """
    profiles: tuple
    rule: ScheduleRule = ScheduleRule.FIXED_PERIODS

    def __post_init__(self):
        profiles = tuple(self.profiles)
        if not profiles:
            raise DomainError("a schedule policy needs at least one classifier profile")
        ids = [p.id for p in profiles]
        if len(set(ids)) != len(ids):
            raise DomainError(f"duplicate classifier ids in policy: {ids}")
        object.__setattr__(self, 'profiles', profiles)

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.profiles]

    @property
    def tick(self) -> float:
        return self.profiles[-1].period

    def profile(self, source: str) -> ClassifierProfile:
        for profile in self.profiles:
            if profile.id == source:
                return profile
        raise UnknownClassifierError(f"classifier '{source}' is not registered (known: {', '.join(self.ids)})")


def default_policy(
    strong_period: float = 60.0,
    weak_period: float = 5.0,
    strong_beta: float = 1.0,
    weak_beta: float = 0.5,
) -> SchedulePolicy:
    """Strong classifier once a minute, weak classifier every 5 s in between."""
    return SchedulePolicy((
        ClassifierProfile(STRONG_ID, strong_beta, strong_period),
        ClassifierProfile(WEAK_ID, weak_beta, weak_period),
    ))


def _is_multiple(t: float, period: float) -> bool:
    ratio = t / period
    return abs(ratio - round(ratio)) <= 1e-9 * max(1.0, abs(ratio))


def schedule_next(policy: SchedulePolicy, t: float) -> str:
    """Id of the classifier to call at time t."""
    for profile in policy.profiles:
        if _is_multiple(t, profile.period):
            return profile.id
    return policy.profiles[-1].id


def assign_beta(source: str, policy: SchedulePolicy) -> float:
    """Observation weight of a registered classifier."""
    return policy.profile(source).beta


def observe(t: float, source: str, probs, policy: SchedulePolicy) -> Observation:
    """Observation for a classifier report, weighted by the policy."""
    return Observation(t=t, source=source, s=probs, beta=assign_beta(source, policy))


class Method(str, Enum):
    RAW = "raw"
    SIMPLE = "simple"
    SINGLE = "single"
    MULTIPLE = "multiple"

    @property
    def display_name(self) -> str:
        return self.value.capitalize()


@dataclass(frozen=True)
class SmootherKind:
    """Smoothing method; window only matters for the running average."""
    kind: Method
    window: int = DEFAULT_WINDOW

    def __post_init__(self):
        object.__setattr__(self, 'kind', Method(self.kind))
        if self.window < 1:
            raise DomainError(f"window must be >= 1, got {self.window}")

    @property
    def display_name(self) -> str:
        return self.kind.display_name

    @classmethod
    def parse(cls, text: str, default_window: int = DEFAULT_WINDOW) -> 'SmootherKind':
        """Parse 'raw', 'simple', 'simple:W', 'single' or 'multiple'."""
        name, _, window = text.strip().lower().partition(':')
        try:
            method = Method(name)
        except ValueError:
            raise DomainError(f"unknown method '{text}', expected one of {', '.join(m.value for m in Method)}")
        if window and method is not Method.SIMPLE:
            raise DomainError(f"only the simple method takes a window, got '{text}'")
        try:
            return cls(method, int(window) if window else default_window)
        except ValueError:
            raise DomainError(f"invalid window in '{text}'")


ALL_KINDS = tuple(SmootherKind(m) for m in Method)


@dataclass(frozen=True, eq=False)
class SmoothedOutput:
    """One smoother output: probabilities, 0-based label and solver flag."""
    probs: np.ndarray
    label: int
    converged: bool = True
    observed: Optional[np.ndarray] = None


class Smoother(ABC):
    """Per-stream smoother; single writer."""

    def __init__(self, config: Optional[FilterConfig] = None):
        self.config = config or FilterConfig()
        self.n_classes: Optional[int] = None

    def _clamped(self, obs: Observation) -> np.ndarray:
        if self.n_classes is None:
            self.n_classes = obs.s.size
        elif obs.s.size != self.n_classes:
            raise DimensionMismatchError(
                f"class count changed mid-stream at t={obs.t}: {obs.s.size} != {self.n_classes}"
            )
        return clamp_probabilities(obs.s, self.config.clamp_eps)

    @staticmethod
    def _output(probs: np.ndarray, observed: np.ndarray, converged: bool = True) -> SmoothedOutput:
        return SmoothedOutput(probs, int(np.argmax(probs)), converged, observed)

    @abstractmethod
    def update(self, obs: Observation) -> SmoothedOutput:
        ...

    def skip(self, n: int = 1):
        """Account for n missing observations."""


class RawSmoother(Smoother):
    def update(self, obs: Observation) -> SmoothedOutput:
        return self._output(obs.s, self._clamped(obs))


class RunningAverageSmoother(Smoother):
    """Uniform mean of the last `window` clamped vectors."""

    def __init__(self, config: Optional[FilterConfig] = None, window: int = DEFAULT_WINDOW):
        super().__init__(config)
        self.window = window
        self._recent = deque(maxlen=window)

    def update(self, obs: Observation) -> SmoothedOutput:
        clamped = self._clamped(obs)
        self._recent.append(clamped)
        return self._output(np.mean(self._recent, axis=0), clamped)


class FilterSmoother(Smoother):
    """
    Dirichlet fusion filter over the stream.

    With force_beta set every observation gets that weight (Single uses 1);
    otherwise each observation keeps its own beta (Multiple).
    """

    def __init__(self, config: Optional[FilterConfig] = None, force_beta: Optional[float] = None):
        super().__init__(config)
        self.force_beta = force_beta
        self.filter: Optional[DirichletFusionFilter] = None
        self._pending_skip = 0

    def update(self, obs: Observation) -> SmoothedOutput:
        clamped = self._clamped(obs)
        if self.filter is None:
            self.filter = DirichletFusionFilter(self.n_classes, self.config)
            self.filter.skip(self._pending_skip)
        beta = obs.beta if self.force_beta is None else self.force_beta
        probs = self.filter.update(Observation(obs.t, obs.source, clamped, beta))
        return self._output(probs, clamped, self.filter.state.converged)

    def skip(self, n: int = 1):
        if self.filter is None:
            self._pending_skip += n
        else:
            self.filter.skip(n)

    @property
    def nonconverged_steps(self) -> int:
        return 0 if self.filter is None else self.filter.nonconverged_steps


def make_smoother(kind: SmootherKind, config: Optional[FilterConfig] = None) -> Smoother:
    """Build a fresh smoother for one stream."""
    if kind.kind is Method.RAW:
        return RawSmoother(config)
    if kind.kind is Method.SIMPLE:
        return RunningAverageSmoother(config, kind.window)
    if kind.kind is Method.SINGLE:
        return FilterSmoother(config, force_beta=1.0)
    return FilterSmoother(config)


def smooth(
    kind: SmootherKind,
    observations: Iterable[Observation],
    config: Optional[FilterConfig] = None,
) -> Iterator[SmoothedOutput]:
    """Run one smoother over a time-ordered observation stream."""
    smoother = make_smoother(kind, config)
    last_t = None
    for obs in observations:
        if last_t is not None and obs.t < last_t:
            raise DomainError(f"observations out of order: t={obs.t} after t={last_t}")
        last_t = obs.t
        yield smoother.update(obs)
