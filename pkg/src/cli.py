"""
Command-line surface: filter, simulate, evaluate and bench.

Data goes to standard output (or --output); diagnostics go to the log.
"""

import argparse
import csv
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Optional, TextIO

from .config import Config, load_config, parse_beta_map
from .errors import ConfigError, FusionError, UnknownClassifierError
from .fusion import ALL_KINDS, FilterSmoother, SmootherKind, make_smoother, observe
from .harness import (
    MarkovChainSpec,
    evaluate,
    pool_reports,
    render_accuracy_table,
    render_class_table,
    run_benchmarks,
    simulate_stream,
    synthetic_classifiers,
)
from .streamio import (
    OutputRecord,
    RecordWriter,
    StreamFormat,
    StreamRecord,
    detect_format,
    fmt_number,
    read_labels,
    read_stream,
    write_truth,
)

logger = logging.getLogger(__name__)

# Config fields surfaced as flags: (flag, type, help)
_CONFIG_FLAGS = (
    ('--gamma', float, "decay per observation, in (0, 1]"),
    ('--iters', int, "maximum MM sweeps per observation"),
    ('--mm-tol', float, "MM stopping tolerance on max |delta alpha|"),
    ('--invert-tol', float, "tolerance of the G inversion"),
    ('--beta-map', parse_beta_map, "classifier weights, e.g. strong=1.0,weak=0.5"),
    ('--init-eta', float, "initial pseudo-count eta"),
    ('--clamp-eps', float, "probability floor applied before logarithms"),
    ('--seed', int, "random seed"),
    ('--strong-period', float, "seconds between strong classifier calls"),
    ('--weak-period', float, "seconds between weak classifier calls"),
    ('--window', int, "window of the simple running average"),
)


def _parse_methods(text: str) -> list[str]:
    methods = [m.strip() for m in text.split(',') if m.strip()]
    if not methods:
        raise ValueError("no methods given")
    return methods


class FusionCLI:
    """Argument parsing and command handlers."""

    def __init__(self, stdout: Optional[TextIO] = None):
        self._stdout = stdout
        self.parser = argparse.ArgumentParser(
            prog="fusion",
            description="Temporal fusion of classifier probability streams with a Dirichlet filter.",
        )
        self._subparsers = self.parser.add_subparsers(dest='command', required=True)
        self._common = self._common_arguments()
        self._register_commands()

    @property
    def stdout(self) -> TextIO:
        return self._stdout or sys.stdout

    def _common_arguments(self) -> argparse.ArgumentParser:
        common = argparse.ArgumentParser(add_help=False)
        group = common.add_argument_group("settings")
        for flag, kind, help_text in _CONFIG_FLAGS:
            group.add_argument(flag, type=kind, default=None, help=help_text)
        group.add_argument('--format', choices=[f.value for f in StreamFormat], default=None,
                           help="stream format (default: detected from input, jsonl for generated data)")
        group.add_argument('--lenient', action='store_const', const=True, default=None,
                           help="skip malformed records instead of aborting")
        group.add_argument('--specfn', choices=['exact', 'table'], default=None,
                           help="digamma evaluation mode")
        group.add_argument('--config', type=Path, default=None, help="key = value settings file")
        logs = common.add_argument_group("logging")
        logs.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
        logs.add_argument('-q', '--quiet', action='store_true', help="only log warnings and errors")
        return common

    def _add_command(self, name: str, handler: Callable, help_text: str) -> argparse.ArgumentParser:
        parser = self._subparsers.add_parser(name, parents=[self._common], help=help_text, description=help_text)
        parser.set_defaults(handler=handler)
        return parser

    def _register_commands(self):
        """Register command handlers."""
        filter_cmd = self._add_command("filter", self._cmd_filter, "Smooth a classifier probability stream.")
        filter_cmd.add_argument('input', nargs='?', default='-', help="JSON-lines or CSV stream ('-' for stdin)")
        filter_cmd.add_argument('--output', '-o', type=Path, default=None)
        filter_cmd.add_argument('--method', default='multiple', help="raw, simple[:W], single or multiple")
        filter_cmd.add_argument('--tick', type=float, default=None,
                                help="expected seconds between records; larger gaps decay the filter")
        filter_cmd.add_argument('--renormalize', action='store_true',
                                help="rescale probability vectors that do not sum to 1")

        simulate = self._add_command("simulate", self._cmd_simulate, "Generate a seeded synthetic stream.")
        simulate.add_argument('--k', type=int, default=6, help="number of classes")
        simulate.add_argument('--stay-prob', type=float, default=0.99)
        simulate.add_argument('--tick', type=float, default=None, help="seconds per tick (default: weak period)")
        simulate.add_argument('--duration', type=float, default=4 * 3600.0, help="seconds")
        simulate.add_argument('--output', '-o', type=Path, default=None)
        simulate.add_argument('--truth', type=Path, default=None, help="truth file (t,true_class); required without --output")

        evaluate_cmd = self._add_command("evaluate", self._cmd_evaluate, "Score predictions against a truth file.")
        evaluate_cmd.add_argument('predictions', type=Path)
        evaluate_cmd.add_argument('truth', type=Path)
        evaluate_cmd.add_argument('--k', type=int, default=None, help="number of classes (default: largest label)")
        evaluate_cmd.add_argument('--report-json', type=Path, default=None)

        bench = self._add_command("bench", self._cmd_bench, "Compare the smoothing methods on synthetic data.")
        bench.add_argument('--runs', type=int, default=10, help="number of seeds, starting at --seed")
        bench.add_argument('--jobs', type=int, default=1, help="worker processes")
        bench.add_argument('--methods', type=_parse_methods, default=None,
                           help="comma-separated methods (default: raw,simple,single,multiple)")
        bench.add_argument('--k', type=int, default=6)
        bench.add_argument('--stay-prob', type=float, default=0.99)
        bench.add_argument('--duration', type=float, default=4 * 3600.0, help="seconds per run")
        bench.add_argument('--trace', type=Path, default=None, help="CSV of true-class probabilities of the first run")
        bench.add_argument('--report-json', type=Path, default=None)

    def parse_args(self, argv=None) -> argparse.Namespace:
        return self.parser.parse_args(argv)

    def load_settings(self, args: argparse.Namespace) -> Config:
        overrides = {flag.lstrip('-'): getattr(args, flag.lstrip('-').replace('-', '_')) for flag, _, _ in _CONFIG_FLAGS}
        overrides.update(format=args.format, lenient=args.lenient, specfn=args.specfn)
        return load_config(args.config, overrides)

    def dispatch(self, args: argparse.Namespace) -> int:
        config = self.load_settings(args)
        return args.handler(args, config)

    @contextmanager
    def _reader(self, path: str):
        if path == '-':
            yield sys.stdin
        else:
            with open(path, newline='') as handle:
                yield handle

    @contextmanager
    def _writer(self, path: Optional[Path]):
        if path is None:
            yield self.stdout
        else:
            with open(path, 'w', newline='') as handle:
                yield handle

    def _cmd_filter(self, args: argparse.Namespace, config: Config) -> int:
        """Smooth a stream record by record."""
        policy = config.schedule_policy()
        kind = SmootherKind.parse(args.method, config.window)
        smoother = make_smoother(kind, config.filter_config())
        if args.tick is not None and args.tick <= 0:
            raise ConfigError(f"--tick must be positive, got {args.tick}")

        with self._reader(args.input) as handle, self._writer(args.output) as out:
            detected, lines = detect_format(handle)
            fmt = config.stream_format() or detected or StreamFormat.JSONL
            writer = RecordWriter(out, fmt)
            last_t = None
            for record in read_stream(lines, fmt, args.renormalize, config.lenient):
                try:
                    obs = observe(record.t, record.source, record.probs, policy)
                except UnknownClassifierError as e:
                    if not config.lenient:
                        raise
                    logger.warning(f"Skipping record at t={fmt_number(record.t)}: {e}")
                    continue
                if args.tick is not None and last_t is not None:
                    missing = int(round((record.t - last_t) / args.tick)) - 1
                    if missing > 0:
                        smoother.skip(missing)
                last_t = record.t
                result = smoother.update(obs)
                writer.write(OutputRecord(
                    t=record.t,
                    source=record.source,
                    probs=result.observed,
                    smoothed=result.probs,
                    label=result.label + 1,
                    converged=result.converged,
                ))

        unconverged = smoother.nonconverged_steps if isinstance(smoother, FilterSmoother) else 0
        logger.info(f"Processed {writer.count} records with {kind.display_name} ({unconverged} unconverged steps)")
        return 0

    def _cmd_simulate(self, args: argparse.Namespace, config: Config) -> int:
        """Write a synthetic stream and its truth file."""
        if args.output is None and args.truth is None:
            raise ConfigError("simulate writes the stream to standard output; give --truth for the truth file")
        policy = config.schedule_policy()
        try:
            chain = MarkovChainSpec(
                K=args.k,
                stay_prob=args.stay_prob,
                tick=args.tick if args.tick is not None else policy.tick,
                duration=args.duration,
                seed=config.seed,
            )
        except FusionError as e:
            raise ConfigError(f"invalid simulation settings: {e}")

        stream = simulate_stream(chain, synthetic_classifiers(policy), policy)
        fmt = config.stream_format() or StreamFormat.JSONL
        with self._writer(args.output) as out:
            writer = RecordWriter(out, fmt)
            for obs in stream.observations:
                writer.write(StreamRecord(obs.t, obs.source, obs.s))

        truth_path = args.truth
        if truth_path is None and args.output is not None:
            truth_path = args.output.with_name(f"{args.output.stem}_truth.csv")
        with open(truth_path, 'w', newline='') as handle:
            write_truth(handle, stream.trajectory.times, stream.truth)

        logger.info(f"Simulated {len(stream.observations)} records (seed {chain.seed}, K={chain.K})")
        return 0

    def _cmd_evaluate(self, args: argparse.Namespace, config: Config) -> int:
        """Print accuracy, macro F1, sensitivity and specificity."""
        with open(args.predictions, newline='') as handle:
            predictions = read_labels(handle)
        with open(args.truth, newline='') as handle:
            truth = read_labels(handle)
        k = args.k
        if k is None:
            k = int(max(predictions.max(initial=0), truth.max(initial=0))) + 1
            k = max(k, 2)
        report = evaluate(predictions, truth, k)

        out = self.stdout
        out.write(f"Percentage of Correct Classification: {report.accuracy * 100:.2f}\n")
        out.write(f"Macro F1: {report.macro_f1 * 100:.2f}\n\n")
        out.write(render_class_table({"Predictions": report}, 'sensitivity') + "\n\n")
        out.write(render_class_table({"Predictions": report}, 'specificity') + "\n")

        if args.report_json is not None:
            args.report_json.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
        logger.info(f"Evaluated {report.total} predictions: accuracy {report.accuracy * 100:.2f}%")
        return 0

    def _cmd_bench(self, args: argparse.Namespace, config: Config) -> int:
        """Run the four-method comparison over seeded synthetic runs."""
        if args.runs < 1 or args.jobs < 1:
            raise ConfigError("--runs and --jobs must be >= 1")
        try:
            methods = [SmootherKind.parse(m, config.window) for m in args.methods] if args.methods else [
                SmootherKind(kind.kind, config.window) for kind in ALL_KINDS
            ]
            chain = MarkovChainSpec(
                K=args.k, stay_prob=args.stay_prob, tick=config.weak_period, duration=args.duration, seed=config.seed,
            )
        except FusionError as e:
            raise ConfigError(str(e))

        policy = config.schedule_policy()
        seeds = range(config.seed, config.seed + args.runs)
        results = run_benchmarks(
            seeds,
            chain,
            synthetic_classifiers(policy),
            policy,
            methods,
            config.filter_config(),
            keep_trace=args.trace is not None,
            max_workers=args.jobs,
        )

        names = list(results[0].reports)
        pooled = {name: pool_reports(r.reports[name] for r in results) for name in names}
        sources = {
            source: pool_reports(r.source_reports[source] for r in results if source in r.source_reports)
            for source in policy.ids
            if any(source in r.source_reports for r in results)
        }
        out = self.stdout
        out.write(render_accuracy_table(results) + "\n\n")
        out.write(render_class_table(pooled, 'sensitivity') + "\n\n")
        out.write(render_class_table(pooled, 'specificity') + "\n\n")
        out.write(render_class_table(pooled, 'f1') + "\n\n")
        standalone = ", ".join(f"{source} {report.accuracy * 100:.2f}" for source, report in sources.items())
        out.write(f"Standalone classifier accuracy: {standalone}\n")

        if args.trace is not None:
            self._write_trace(args.trace, results[0], chain.tick)
        if args.report_json is not None:
            report = {
                'runs': [r.to_dict() for r in results],
                'pooled': {name: report.to_dict() for name, report in pooled.items()},
                'sources': {name: report.to_dict() for name, report in sources.items()},
            }
            args.report_json.write_text(json.dumps(report, indent=2) + "\n")
        return 0

    @staticmethod
    def _write_trace(path: Path, result, tick: float):
        names = list(result.traces)
        with open(path, 'w', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(['t', 'true_class'] + names)
            for i, true_class in enumerate(result.truth):
                writer.writerow(
                    [fmt_number(i * tick), int(true_class) + 1] + [fmt_number(result.traces[n][i]) for n in names]
                )
        logger.info(f"Wrote {len(result.truth)} trace rows to {path}")
