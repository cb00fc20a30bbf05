"""
Stream records and their JSON-lines / CSV codecs.

Input records carry (t, source, probs); output records add the smoothed
vector, the 1-based class and the solver flag. Numbers are written with
12 significant digits.
"""

import csv
import json
import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Optional, TextIO

import numpy as np

from .errors import StreamFormatError

logger = logging.getLogger(__name__)

STREAM_SUM_ATOL = 1e-6
PRECISION = 12

_PROB_COLUMN = re.compile(r"^p(\d+)$")


class StreamFormat(str, Enum):
    JSONL = "jsonl"
    CSV = "csv"

    @classmethod
    def parse(cls, name: str) -> 'StreamFormat':
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise StreamFormatError(f"unknown stream format '{name}', expected 'jsonl' or 'csv'")


@dataclass(frozen=True, eq=False)
class StreamRecord:
    """One classifier report as read from a stream."""
    t: float
    source: str
    probs: np.ndarray


@dataclass(frozen=True, eq=False)
class OutputRecord:
    """One smoothed record; label is 1-based."""
    t: float
    source: str
    probs: np.ndarray
    smoothed: np.ndarray
    label: int
    converged: bool = True


def fmt_number(x: float) -> str:
    return f"{x:.{PRECISION}g}"


def _rounded(x: float) -> float:
    return float(fmt_number(x))


def _number_list(values) -> list[float]:
    return [_rounded(v) for v in values]


def sniff_format(first_line: str) -> StreamFormat:
    return StreamFormat.JSONL if first_line.lstrip().startswith('{') else StreamFormat.CSV


def _peek(lines: Iterable[str]) -> tuple[Optional[str], Iterator[str]]:
    iterator = iter(lines)
    for line in iterator:
        if line.strip():
            return line, _chain(line, iterator)
    return None, iter(())


def _chain(first: str, rest: Iterator[str]) -> Iterator[str]:
    yield first
    yield from rest


def detect_format(lines: Iterable[str]) -> tuple[Optional[StreamFormat], Iterator[str]]:
    """Sniff the format of a line stream without consuming it; None for an empty stream."""
    first, rest = _peek(lines)
    return (sniff_format(first) if first is not None else None), rest


def _check_probs(values, renormalize: bool, where: str) -> np.ndarray:
    try:
        probs = np.asarray(values, dtype=float)
    except (TypeError, ValueError):
        raise StreamFormatError(f"{where}: probabilities must be numbers")
    if probs.ndim != 1 or probs.size < 2:
        raise StreamFormatError(f"{where}: need at least 2 class probabilities")
    if not np.all(np.isfinite(probs)) or np.any(probs < 0):
        raise StreamFormatError(f"{where}: probabilities must be finite and non-negative")
    total = probs.sum()
    if abs(total - 1.0) > STREAM_SUM_ATOL:
        if not renormalize or total <= 0:
            raise StreamFormatError(f"{where}: probabilities sum to {fmt_number(total)}, not 1")
        probs = probs / total
    return probs


def _parse_json_record(line: str, renormalize: bool, where: str) -> StreamRecord:
    try:
        data = json.loads(line)
        t, source, values = float(data['t']), str(data['source']), data['probs']
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise StreamFormatError(f"{where}: malformed JSON record ({e})")
    return StreamRecord(t, source, _check_probs(values, renormalize, where))


def _parse_csv_row(row: list[str], prob_columns: list[int], renormalize: bool, where: str) -> StreamRecord:
    try:
        t, source = float(row[0]), row[1].strip()
        values = [float(row[i]) for i in prob_columns]
    except (IndexError, ValueError) as e:
        raise StreamFormatError(f"{where}: malformed CSV row ({e})")
    return StreamRecord(t, source, _check_probs(values, renormalize, where))


def _csv_prob_columns(header: list[str]) -> list[int]:
    if len(header) < 4 or header[0].strip() != 't' or header[1].strip() != 'source':
        raise StreamFormatError(f"CSV header must be t,source,p1..pK, got {','.join(header)}")
    indices = []
    for position, name in enumerate(header[2:], start=2):
        match = _PROB_COLUMN.match(name.strip())
        if match and int(match.group(1)) == len(indices) + 1:
            indices.append(position)
        else:
            break
    if len(indices) < 2:
        raise StreamFormatError("CSV header needs at least p1,p2")
    return indices


def read_stream(
    lines: Iterable[str],
    fmt: Optional[StreamFormat] = None,
    renormalize: bool = False,
    lenient: bool = False,
) -> Iterator[StreamRecord]:
    """
    Parse a time-ordered stream of classifier reports.

    Args:
        lines: Text lines (a file object works)
        fmt: Stream format; sniffed from the first non-blank line when None
        renormalize: Rescale probability vectors that do not sum to 1
        lenient: Skip malformed records with a warning instead of raising

    Raises:
        StreamFormatError: malformed record (unless lenient), a class-count
            change, or decreasing timestamps
    """
    first, lines = _peek(lines)
    if first is None:
        return
    fmt = fmt or sniff_format(first)
    prob_columns = None
    n_classes = None
    last_t = None
    line_no = 0
    skipped = 0

    rows = csv.reader(lines) if fmt is StreamFormat.CSV else lines
    for row in rows:
        line_no += 1
        where = f"line {line_no}"
        try:
            if fmt is StreamFormat.CSV:
                if not row or not any(cell.strip() for cell in row):
                    continue
                if prob_columns is None:
                    prob_columns = _csv_prob_columns(row)
                    continue
                record = _parse_csv_row(row, prob_columns, renormalize, where)
            else:
                if not row.strip():
                    continue
                record = _parse_json_record(row, renormalize, where)
            if n_classes is None:
                n_classes = record.probs.size
            elif record.probs.size != n_classes:
                raise StreamFormatError(f"{where}: {record.probs.size} classes, stream started with {n_classes}")
        except StreamFormatError as e:
            # A bad CSV header is never skippable
            header_read = fmt is StreamFormat.JSONL or prob_columns is not None
            if lenient and header_read:
                skipped += 1
                logger.warning(f"Skipping record: {e}")
                continue
            raise

        if last_t is not None and record.t < last_t:
            raise StreamFormatError(f"{where}: timestamp {fmt_number(record.t)} precedes {fmt_number(last_t)}")
        last_t = record.t
        yield record

    if skipped:
        logger.info(f"Skipped {skipped} malformed records")


class RecordWriter:
    """Writes StreamRecords or OutputRecords in one format; the CSV header follows the first record."""

    def __init__(self, out: TextIO, fmt: StreamFormat):
        self.out = out
        self.fmt = fmt
        self._csv = csv.writer(out, lineterminator='\n') if fmt is StreamFormat.CSV else None
        self._header_written = False
        self.count = 0

    def _header(self, k: int, output: bool):
        header = ['t', 'source'] + [f"p{i}" for i in range(1, k + 1)]
        if output:
            header += [f"smoothed{i}" for i in range(1, k + 1)] + ['class', 'converged']
        self._csv.writerow(header)
        self._header_written = True

    def write(self, record):
        output = isinstance(record, OutputRecord)
        if self.fmt is StreamFormat.JSONL:
            data = {'t': _rounded(record.t), 'source': record.source, 'probs': _number_list(record.probs)}
            if output:
                data['smoothed'] = _number_list(record.smoothed)
                data['class'] = record.label
                data['converged'] = record.converged
            self.out.write(json.dumps(data) + '\n')
        else:
            if not self._header_written:
                self._header(record.probs.size, output)
            row = [fmt_number(record.t), record.source] + [fmt_number(p) for p in record.probs]
            if output:
                row += [fmt_number(p) for p in record.smoothed] + [record.label, 'true' if record.converged else 'false']
            self._csv.writerow(row)
        self.count += 1


def write_truth(out: TextIO, times: Iterable[float], classes: Iterable[int]):
    """Two-column truth file `t,true_class` with 1-based classes."""
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(['t', 'true_class'])
    for t, label in zip(times, classes):
        writer.writerow([fmt_number(t), int(label) + 1])


_LABEL_FIELDS = ('class', 'true_class', 'label')


def read_labels(lines: Iterable[str]) -> np.ndarray:
    """
    0-based class labels from a truth or prediction file.

    Accepts filter output (JSON-lines or CSV with a `class` column) and
    two-column CSVs such as `t,true_class` or `t,class`.
    """
    first, lines = _peek(lines)
    if first is None:
        raise StreamFormatError("label file is empty")
    labels = []
    if sniff_format(first) is StreamFormat.JSONL:
        for line_no, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                key = next(f for f in _LABEL_FIELDS if f in data)
                labels.append(int(data[key]))
            except (json.JSONDecodeError, StopIteration, TypeError, ValueError) as e:
                raise StreamFormatError(f"line {line_no}: no class label ({e})")
    else:
        reader = csv.DictReader(lines)
        fields = [f.strip() for f in reader.fieldnames or []]
        column = next((f for f in _LABEL_FIELDS if f in fields), None)
        if column is None:
            raise StreamFormatError(f"no class column in header {','.join(fields)}")
        reader.fieldnames = fields
        for line_no, row in enumerate(reader, start=2):
            try:
                labels.append(int(row[column]))
            except (TypeError, ValueError):
                raise StreamFormatError(f"line {line_no}: invalid class '{row[column]}'")
    result = np.asarray(labels, dtype=int)
    if result.size and result.min() < 1:
        raise StreamFormatError("class labels are 1-based; found a label < 1")
    return result - 1
