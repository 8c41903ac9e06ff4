"""Per-minute request workloads: CSV ingestion, synthetic generation, windowing."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .curves import SeasonalityParams, TrendParams

logger = logging.getLogger(__name__)

CANONICAL_RESOLUTION = 60


class TraceError(ValueError):
    pass


class TraceParseError(TraceError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class EmptyTraceError(TraceError):
    pass


class InvalidSpecError(TraceError):
    pass


class TraceRangeError(TraceError):
    pass


@dataclass(frozen=True)
class WorkloadTrace:
    """Request counts per interval starting at ``start_epoch`` (seconds).

    ``gaps`` lists interval indices that were missing in the source file and
    zero-filled on load. It is informational and ignored by equality.
    """

    start_epoch: int
    counts: tuple[int, ...]
    resolution: int = CANONICAL_RESOLUTION
    gaps: tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if not counts:
            raise EmptyTraceError("trace has no intervals")
        if any(c < 0 for c in counts):
            raise TraceError("request counts must be non-negative")
        if self.resolution <= 0:
            raise TraceError(f"resolution must be positive, got {self.resolution}")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "start_epoch", int(self.start_epoch))

    def __len__(self):
        return len(self.counts)

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float)

    def timestamp(self, i: int) -> int:
        return self.start_epoch + i * self.resolution

    @property
    def total(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True)
class TraceWindow:
    """Index arithmetic over a trace: train ``[0, W)``, then validation, then test."""

    trace: WorkloadTrace
    train_len: int
    validation_len: int
    test_len: int

    @property
    def train(self) -> range:
        return range(0, self.train_len)

    @property
    def validation(self) -> range:
        return range(self.train_len, self.train_len + self.validation_len)

    @property
    def test(self) -> range:
        start = self.train_len + self.validation_len
        return range(start, start + self.test_len)

    @property
    def unused(self) -> int:
        return len(self.trace) - self.train_len - self.validation_len - self.test_len


def _parse_timestamp(raw: str) -> int:
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        value = float(raw)
    except ValueError:
        value = None
    if value is not None:
        if not math.isfinite(value):
            raise ValueError(f"non-finite timestamp {raw!r}")
        return int(math.floor(value))
    text = raw[:-1] + "+00:00" if raw.endswith("Z") else raw
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(math.floor(dt.timestamp()))


def load_trace(path, timestamp_column="timestamp", count_column="count") -> WorkloadTrace:
    """Read a ``timestamp,count`` CSV into a 60 s trace.

    Timestamps may be epoch seconds or ISO-8601 (naive values are UTC).
    Rows falling in the same minute are summed; minutes with no rows are
    zero-filled and reported through ``WorkloadTrace.gaps``.
    """
    path = Path(path)
    rows: list[tuple[int, int]] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyTraceError(f"{path}: empty file")
        header = [h.strip() for h in header]
        try:
            ts_idx = header.index(timestamp_column)
            cnt_idx = header.index(count_column)
        except ValueError:
            raise TraceParseError(
                path, 1, f"header must contain {timestamp_column!r} and {count_column!r}"
            ) from None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) <= max(ts_idx, cnt_idx):
                raise TraceParseError(path, lineno, f"expected {len(header)} columns")
            try:
                ts = _parse_timestamp(row[ts_idx])
            except ValueError as exc:
                raise TraceParseError(path, lineno, f"bad timestamp: {exc}") from None
            raw = row[cnt_idx].strip()
            if not raw.isdigit():
                raise TraceParseError(path, lineno, f"bad count {raw!r}")
            rows.append((ts, int(raw)))
    if not rows:
        raise EmptyTraceError(f"{path}: no data rows")

    buckets = [ts // CANONICAL_RESOLUTION for ts, _ in rows]
    first = min(buckets)
    n = max(buckets) - first + 1
    counts = [0] * n
    seen = [False] * n
    for bucket, (_, count) in zip(buckets, rows):
        counts[bucket - first] += count
        seen[bucket - first] = True
    gaps = tuple(i for i, s in enumerate(seen) if not s)
    if gaps:
        logger.warning("%s: %d missing minute(s) zero-filled", path, len(gaps))
    return WorkloadTrace(first * CANONICAL_RESOLUTION, tuple(counts), CANONICAL_RESOLUTION, gaps)


def write_trace(trace: WorkloadTrace, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", "count"])
        for i, c in enumerate(trace.counts):
            writer.writerow([trace.timestamp(i), c])


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic workload.

    Signal is ``base_level + g(t) + sum(s_j(t)) + shift(t) + noise`` with the
    logistic trend ``g`` (omitted when ``trend`` is None), Fourier blocks
    ``s_j`` and step level shifts ``(start_index, delta)``. Harmonics may be
    given as SeasonalityParams or as ``{"P": .., "a": [..], "b": [..]}``.
    """

    length: int
    base_level: float = 0.0
    trend: TrendParams | None = None
    harmonics: tuple = ()
    noise_sigma: float = 0.0
    seed: int = 0
    level_shifts: tuple[tuple[int, float], ...] = ()
    start_epoch: int = 0


def _harmonics(spec: SyntheticSpec) -> list[SeasonalityParams]:
    blocks = []
    for h in spec.harmonics:
        if isinstance(h, SeasonalityParams):
            blocks.append(h)
            continue
        try:
            blocks.append(SeasonalityParams(float(h["P"]), tuple(h["a"]), tuple(h["b"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSpecError(f"bad harmonic {h!r}: {exc}") from None
    return blocks


def synthetic_signal(spec: SyntheticSpec) -> np.ndarray:
    """Noise-free, unrounded signal of ``spec``."""
    t = np.arange(spec.length, dtype=float)
    y = np.full(spec.length, float(spec.base_level))
    if spec.trend is not None:
        y += spec.trend(t)
    for block in _harmonics(spec):
        y += block(t)
    for start, delta in spec.level_shifts:
        y[int(start):] += delta
    return y


def generate_synthetic(spec: SyntheticSpec) -> WorkloadTrace:
    if spec.length <= 0:
        raise InvalidSpecError(f"length must be positive, got {spec.length}")
    if spec.noise_sigma < 0:
        raise InvalidSpecError("noise_sigma must be >= 0")
    _harmonics(spec)
    y = synthetic_signal(spec)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        y = y + rng.normal(0.0, spec.noise_sigma, size=spec.length)
    counts = np.maximum(0, np.rint(y)).astype(np.int64)
    return WorkloadTrace(spec.start_epoch, tuple(int(c) for c in counts))


def split(trace: WorkloadTrace, train_len: int, validation_len: int, test_len: int) -> TraceWindow:
    if train_len <= 0:
        raise TraceRangeError("training window must be positive")
    if validation_len < 0 or test_len < 0:
        raise TraceRangeError("segment lengths must be non-negative")
    total = train_len + validation_len + test_len
    if total > len(trace):
        raise TraceRangeError(f"segments need {total} intervals, trace has {len(trace)}")
    return TraceWindow(trace, train_len, validation_len, test_len)


def from_counts(counts: Sequence[int], start_epoch: int = 0) -> WorkloadTrace:
    return WorkloadTrace(start_epoch, tuple(counts))
