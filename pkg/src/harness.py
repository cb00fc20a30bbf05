"""
Synthetic benchmark: a seeded Markov chain of true classes, synthetic
classifiers of differing strength, the scheduled observation stream,
and the accuracy / F1 / sensitivity / specificity evaluation.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
from sklearn.metrics import confusion_matrix

from .errors import DimensionMismatchError, DomainError, UnknownClassifierError
from .filter import FilterConfig, Observation
from .fusion import (
    ALL_KINDS,
    STRONG_ID,
    WEAK_ID,
    Method,
    SchedulePolicy,
    SmootherKind,
    default_policy,
    make_smoother,
    observe,
    schedule_next,
)

logger = logging.getLogger(__name__)

# Substreams of one seeded run
CHAIN_STREAM = 0
CLASSIFIER_STREAM = 1


def stream_rng(seed: int, substream: int) -> np.random.Generator:
    """Independent generator for one substream of a seeded run."""
    return np.random.Generator(np.random.PCG64DXSM(seed).jumped(substream + 1))


@dataclass(frozen=True)
class MarkovChainSpec:
    """
    First-order Markov chain over K classes sampled every `tick` seconds.

    Leaving the current class happens with probability 1 - stay_prob; the
    next class is then drawn from the row of switch_probs (uniform over the
    other classes by default).
    """
    K: int = 6
    stay_prob: float = 0.99
    switch_probs: Optional[tuple] = None
    tick: float = 5.0
    duration: float = 4 * 3600.0
    seed: int = 0
    initial_class: Optional[int] = None

    def __post_init__(self):
        if self.K < 2:
            raise DomainError(f"need at least 2 classes, got K={self.K}")
        if not 0.0 < self.stay_prob <= 1.0:
            raise DomainError(f"stay_prob must lie in (0, 1], got {self.stay_prob}")
        if self.tick <= 0 or self.duration <= 0:
            raise DomainError("tick and duration must be positive")
        if self.initial_class is not None and not 0 <= self.initial_class < self.K:
            raise DomainError(f"initial_class must lie in [0, {self.K}), got {self.initial_class}")
        if self.switch_probs is not None:
            object.__setattr__(self, 'switch_probs', tuple(tuple(float(v) for v in row) for row in self.switch_probs))

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.tick))

    def transition_matrix(self) -> np.ndarray:
        """stay_prob * I + (1 - stay_prob) * switch_probs."""
        if self.switch_probs is None:
            switch = (np.ones((self.K, self.K)) - np.eye(self.K)) / (self.K - 1)
        else:
            switch = np.array(self.switch_probs, dtype=float)
            if switch.shape != (self.K, self.K):
                raise DimensionMismatchError(f"switch_probs must be {self.K}x{self.K}, got {switch.shape}")
            if np.any(np.diag(switch) != 0):
                raise DomainError("switch_probs is conditional on leaving the current class; its diagonal must be zero")
        matrix = self.stay_prob * np.eye(self.K) + (1.0 - self.stay_prob) * switch
        if np.any(matrix < 0) or not np.allclose(matrix.sum(axis=1), 1.0, rtol=0.0, atol=1e-12):
            raise DomainError("transition matrix rows must be non-negative and sum to 1")
        return matrix


@dataclass(frozen=True)
class SyntheticClassifierSpec:
    """Dirichlet-noise classifier: a peak of concentration_true, sometimes on a wrong class."""
    id: str
    concentration_true: float
    concentration_other: float
    flip_prob: float = 0.0

    def __post_init__(self):
        if self.concentration_other <= 0 or self.concentration_true <= self.concentration_other:
            raise DomainError(f"classifier '{self.id}' needs concentration_true > concentration_other > 0")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise DomainError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")


DEFAULT_STRONG = SyntheticClassifierSpec(STRONG_ID, 40.0, 0.5, 0.05)
DEFAULT_WEAK = SyntheticClassifierSpec(WEAK_ID, 8.0, 0.8, 0.25)


def default_classifiers() -> dict[str, SyntheticClassifierSpec]:
    return {DEFAULT_STRONG.id: DEFAULT_STRONG, DEFAULT_WEAK.id: DEFAULT_WEAK}


def synthetic_classifiers(policy: SchedulePolicy) -> dict[str, SyntheticClassifierSpec]:
    """Default strong classifier for the first policy profile, default weak one for the rest."""
    specs = {}
    for i, profile in enumerate(policy.profiles):
        template = DEFAULT_STRONG if i == 0 and len(policy.profiles) > 1 else DEFAULT_WEAK
        specs[profile.id] = replace(template, id=profile.id)
    return specs


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled chain: tick times and 0-based true classes."""
    times: np.ndarray
    states: np.ndarray

    def __len__(self) -> int:
        return self.states.size

    def __iter__(self):
        return zip(self.times.tolist(), self.states.tolist())


def simulate_chain(spec: MarkovChainSpec, rng: Optional[np.random.Generator] = None) -> Trajectory:
    """Seeded trajectory at t = 0, tick, 2 tick, ..."""
    matrix = spec.transition_matrix()
    rng = rng if rng is not None else stream_rng(spec.seed, CHAIN_STREAM)
    n = spec.n_ticks
    states = np.empty(n, dtype=int)
    current = spec.initial_class if spec.initial_class is not None else int(rng.integers(spec.K))
    leaving = rng.random(n) >= spec.stay_prob
    for i in range(n):
        if i > 0 and leaving[i]:
            row = matrix[current].copy()
            row[current] = 0.0
            current = int(rng.choice(spec.K, p=row / row.sum()))
        states[i] = current
    return Trajectory(np.arange(n) * spec.tick, states)


def simulate_classifier(
    true_class: int,
    K: int,
    spec: SyntheticClassifierSpec,
    seed: Union[int, np.random.Generator, None] = None,
) -> np.ndarray:
    """One synthetic classifier output for the given true class."""
    if not 0 <= true_class < K:
        raise DomainError(f"true_class must lie in [0, {K}), got {true_class}")
    rng = np.random.default_rng(seed)
    peak = true_class
    if rng.random() < spec.flip_prob:
        wrong = [c for c in range(K) if c != true_class]
        peak = wrong[int(rng.integers(len(wrong)))]
    concentration = np.full(K, spec.concentration_other)
    concentration[peak] = spec.concentration_true
    probs = rng.dirichlet(concentration)
    return probs / probs.sum()


@dataclass(frozen=True, eq=False)
class MetricsReport:
    """Confusion matrix (rows truth, columns prediction) and derived rates."""
    confusion: np.ndarray
    accuracy: float
    sensitivity: np.ndarray
    specificity: np.ndarray
    f1: np.ndarray

    @classmethod
    def from_confusion(cls, confusion: np.ndarray) -> 'MetricsReport':
        cm = np.asarray(confusion, dtype=np.int64)
        total = cm.sum()
        if total == 0:
            raise DomainError("cannot derive metrics from an empty confusion matrix")
        tp = np.diag(cm).astype(float)
        fn = cm.sum(axis=1) - tp
        fp = cm.sum(axis=0) - tp
        tn = total - tp - fn - fp
        with np.errstate(divide='ignore', invalid='ignore'):
            sensitivity = np.where(tp + fn > 0, tp / (tp + fn), np.nan)
            specificity = np.where(tn + fp > 0, tn / (tn + fp), np.nan)
            f1 = np.where(2 * tp + fp + fn > 0, 2 * tp / (2 * tp + fp + fn), np.nan)
        return cls(cm, float(tp.sum() / total), sensitivity, specificity, f1)

    @property
    def n_classes(self) -> int:
        return self.confusion.shape[0]

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def macro_f1(self) -> float:
        """Mean F1 over the classes that occur in the truth or the predictions."""
        return float(np.nanmean(self.f1))

    def to_dict(self) -> dict:
        def rates(values):
            return [None if np.isnan(v) else float(v) for v in values]

        return {
            'n': self.total,
            'accuracy': self.accuracy,
            'macro_f1': self.macro_f1,
            'sensitivity': rates(self.sensitivity),
            'specificity': rates(self.specificity),
            'f1': rates(self.f1),
            'confusion': self.confusion.tolist(),
        }


def evaluate(predictions: Sequence[int], truth: Sequence[int], K: int) -> MetricsReport:
    """
    Compare 0-based predicted labels with the truth.

    Raises:
        DimensionMismatchError: different lengths
        DomainError: empty input or a label outside [0, K)
    """
    pred = np.asarray(predictions, dtype=int)
    true = np.asarray(truth, dtype=int)
    if pred.shape != true.shape:
        raise DimensionMismatchError(f"{pred.size} predictions for {true.size} truth labels")
    if pred.size == 0:
        raise DomainError("cannot evaluate an empty sequence")
    for name, labels in (("prediction", pred), ("truth", true)):
        if labels.min() < 0 or labels.max() >= K:
            raise DomainError(f"{name} labels must lie in [0, {K})")
    return MetricsReport.from_confusion(confusion_matrix(true, pred, labels=list(range(K))))


def pool_reports(reports: Iterable[MetricsReport]) -> MetricsReport:
    """Report of the summed confusion matrices."""
    matrices = [r.confusion for r in reports]
    if not matrices:
        raise DomainError("nothing to pool")
    return MetricsReport.from_confusion(np.sum(matrices, axis=0))


@dataclass(frozen=True, eq=False)
class SimulatedStream:
    trajectory: Trajectory
    observations: list

    @property
    def truth(self) -> np.ndarray:
        return self.trajectory.states


def _by_id(classifiers) -> dict[str, SyntheticClassifierSpec]:
    if isinstance(classifiers, Mapping):
        return dict(classifiers)
    return {spec.id: spec for spec in classifiers}


def simulate_stream(
    chain: MarkovChainSpec,
    classifiers: Union[Mapping[str, SyntheticClassifierSpec], Sequence[SyntheticClassifierSpec]],
    policy: SchedulePolicy,
) -> SimulatedStream:
    """Truth trajectory plus one scheduled classifier report per tick."""
    specs = _by_id(classifiers)
    missing = [i for i in policy.ids if i not in specs]
    if missing:
        raise UnknownClassifierError(f"no synthetic classifier for policy ids: {', '.join(missing)}")
    trajectory = simulate_chain(chain, stream_rng(chain.seed, CHAIN_STREAM))
    rng = stream_rng(chain.seed, CLASSIFIER_STREAM)
    observations = []
    for t, true_class in trajectory:
        source = schedule_next(policy, t)
        probs = simulate_classifier(true_class, chain.K, specs[source], rng)
        observations.append(observe(t, source, probs, policy))
    return SimulatedStream(trajectory, observations)


def _ordered(methods: Iterable[SmootherKind]) -> list[SmootherKind]:
    order = list(Method)
    return sorted(methods, key=lambda kind: (order.index(kind.kind), kind.window))


def run_methods(
    observations: Sequence[Observation],
    truth: np.ndarray,
    methods: Iterable[SmootherKind],
    config: FilterConfig,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray], dict[str, int]]:
    """Feed one stream to each smoother; returns labels, true-class traces and non-converged counts."""
    labels, traces, nonconverged = {}, {}, {}
    for kind in _ordered(methods):
        smoother = make_smoother(kind, config)
        predicted = np.empty(len(observations), dtype=int)
        trace = np.empty(len(observations))
        failures = 0
        for i, obs in enumerate(observations):
            out = smoother.update(obs)
            predicted[i] = out.label
            trace[i] = out.probs[truth[i]]
            failures += not out.converged
        labels[kind.display_name] = predicted
        traces[kind.display_name] = trace
        nonconverged[kind.display_name] = failures
    return labels, traces, nonconverged


@dataclass(frozen=True, eq=False)
class BenchmarkResult:
    """Per-method reports of one seeded run."""
    seed: int
    reports: dict
    source_reports: dict
    n_ticks: int
    nonconverged: dict = field(default_factory=dict)
    traces: Optional[dict] = None
    truth: Optional[np.ndarray] = None

    def accuracies(self) -> dict[str, float]:
        return {name: report.accuracy for name, report in self.reports.items()}

    def to_dict(self) -> dict:
        return {
            'seed': self.seed,
            'n_ticks': self.n_ticks,
            'methods': {name: report.to_dict() for name, report in self.reports.items()},
            'sources': {name: report.to_dict() for name, report in self.source_reports.items()},
            'nonconverged': dict(self.nonconverged),
        }


def run_benchmark(
    chain: MarkovChainSpec,
    classifiers,
    policy: SchedulePolicy,
    methods: Iterable[SmootherKind] = ALL_KINDS,
    config: Optional[FilterConfig] = None,
    keep_trace: bool = False,
) -> BenchmarkResult:
    """
    Simulate one stream and evaluate every requested method on it.

    Every method sees the identical observation stream; the result is a
    function of (chain.seed, config) only.
    """
    config = config or FilterConfig()
    stream = simulate_stream(chain, classifiers, policy)
    truth = stream.truth
    labels, traces, nonconverged = run_methods(stream.observations, truth, methods, config)
    reports = {name: evaluate(predicted, truth, chain.K) for name, predicted in labels.items()}

    source_reports = {}
    sources = np.array([obs.source for obs in stream.observations])
    raw_labels = np.array([int(np.argmax(obs.s)) for obs in stream.observations])
    for source in policy.ids:
        served = sources == source
        if np.any(served):
            source_reports[source] = evaluate(raw_labels[served], truth[served], chain.K)

    summary = ', '.join(f"{name}={report.accuracy * 100:.2f}%" for name, report in reports.items())
    logger.info(f"Seed {chain.seed}: {chain.n_ticks} ticks, {summary}")
    for name, count in nonconverged.items():
        if count:
            logger.info(f"Seed {chain.seed}: {name} left {count} solver steps unconverged")
    if not keep_trace:
        return BenchmarkResult(chain.seed, reports, source_reports, chain.n_ticks, nonconverged)
    return BenchmarkResult(chain.seed, reports, source_reports, chain.n_ticks, nonconverged, traces, truth)


def _run_seed(args) -> BenchmarkResult:
    chain, classifiers, policy, methods, config, keep_trace = args
    return run_benchmark(chain, classifiers, policy, methods, config, keep_trace)


def run_benchmarks(
    seeds: Iterable[int],
    chain: MarkovChainSpec,
    classifiers,
    policy: SchedulePolicy,
    methods: Iterable[SmootherKind] = ALL_KINDS,
    config: Optional[FilterConfig] = None,
    keep_trace: bool = False,
    max_workers: Optional[int] = 1,
) -> list[BenchmarkResult]:
    """Independent runs, one per seed, in seed order; max_workers > 1 uses a process pool."""
    config = config or FilterConfig()
    methods = tuple(_ordered(methods))
    jobs = [(replace(chain, seed=seed), _by_id(classifiers), policy, methods, config, keep_trace) for seed in seeds]
    if max_workers == 1 or len(jobs) <= 1:
        return [_run_seed(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=max_workers) as executor:
        return list(executor.map(_run_seed, jobs))


def _format_rate(value: float) -> str:
    return "n/a" if np.isnan(value) else f"{value * 100:.2f}"


def render_accuracy_table(results: Sequence[BenchmarkResult]) -> str:
    """Percentage of correct classification per method: mean over runs, with spread when runs > 1."""
    if not results:
        raise DomainError("no benchmark results to render")
    names = list(results[0].reports)
    values = np.array([[r.reports[name].accuracy for name in names] for r in results])
    f1 = np.array([[r.reports[name].macro_f1 for name in names] for r in results])
    width = max(10, *(len(n) + 2 for n in names))

    def row(label, numbers):
        return f"{label:<10}" + "".join(f"{v * 100:>{width}.2f}" for v in numbers)

    lines = [
        "Percentage of Correct Classification",
        f"{'':<10}" + "".join(f"{name:>{width}}" for name in names),
        row("Accuracy", values.mean(axis=0)),
    ]
    if len(results) > 1:
        lines.append(row("Std", values.std(axis=0, ddof=1)))
    lines.append(row("Macro F1", f1.mean(axis=0)))
    if len(results) > 1:
        lines.append(row("Std", f1.std(axis=0, ddof=1)))
        wins = np.mean(np.all(np.diff(values, axis=1) >= 0, axis=1)) * 100
        lines.append(f"Runs: {len(results)}, ordered left to right in {wins:.0f}% of runs")
    return "\n".join(lines)


_RATE_TITLES = {
    'sensitivity': "Sensitivity : TP / (TP + FN)",
    'specificity': "Specificity : TN / (TN + FP)",
    'f1': "F1 : 2TP / (2TP + FP + FN)",
}


def render_class_table(
    reports: Mapping[str, MetricsReport],
    metric: str,
    class_names: Optional[Sequence[str]] = None,
) -> str:
    """Per-class sensitivity, specificity or F1 (percent) with one column per method."""
    if metric not in _RATE_TITLES:
        raise DomainError(f"metric must be one of {', '.join(_RATE_TITLES)}, got '{metric}'")
    names = list(reports)
    k = next(iter(reports.values())).n_classes
    class_names = list(class_names) if class_names else [f"class {i + 1}" for i in range(k)]
    label_width = max(10, *(len(c) + 2 for c in class_names))
    width = max(10, *(len(n) + 2 for n in names))
    lines = [_RATE_TITLES[metric], f"{'':<{label_width}}" + "".join(f"{n:>{width}}" for n in names)]
    for i, class_name in enumerate(class_names):
        cells = "".join(f"{_format_rate(getattr(reports[n], metric)[i]):>{width}}" for n in names)
        lines.append(f"{class_name:<{label_width}}{cells}")
    return "\n".join(lines)


# Fixture for the "strong call held through weak calls" behaviour
HOLD_STRONG = SyntheticClassifierSpec(STRONG_ID, 40.0, 0.5, 0.0)
HOLD_WEAK = SyntheticClassifierSpec(WEAK_ID, 1.5, 1.0, 0.0)
HOLD_WEAK_CALLS = 11


def strong_then_weak_fixture(
    seed: int,
    K: int = 6,
    true_class: int = 0,
    warmup_cycles: int = 4,
    strong: SyntheticClassifierSpec = HOLD_STRONG,
    weak: SyntheticClassifierSpec = HOLD_WEAK,
    policy: Optional[SchedulePolicy] = None,
) -> tuple[list, np.ndarray, slice]:
    """
    Cycles of one strong call followed by eleven weak calls, constant truth.

    Returns:
        (observations, truth, window), window selecting the last cycle
    """
    policy = policy or default_policy()
    tick = policy.tick
    rng = stream_rng(seed, CLASSIFIER_STREAM)
    cycle = [strong] + [weak] * HOLD_WEAK_CALLS
    observations = []
    for i, spec in enumerate(cycle * (warmup_cycles + 1)):
        probs = simulate_classifier(true_class, K, spec, rng)
        observations.append(observe(i * tick, spec.id, probs, policy))
    truth = np.full(len(observations), true_class)
    return observations, truth, slice(len(observations) - len(cycle), len(observations))


def true_class_traces(
    observations: Sequence[Observation],
    truth: np.ndarray,
    methods: Iterable[SmootherKind] = ALL_KINDS,
    config: Optional[FilterConfig] = None,
) -> dict[str, np.ndarray]:
    """Probability each method assigns to the true class, per step."""
    _, traces, _ = run_methods(observations, np.asarray(truth), methods, config or FilterConfig())
    return traces
