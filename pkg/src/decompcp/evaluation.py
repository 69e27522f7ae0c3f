"""Coverage metrics, data sources, experiment sweeps and report files."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import (
    ConfigError,
    EmptyFile,
    IoFailure,
    LengthMismatch,
    MissingColumn,
    NonNumericCell,
    SeriesTooShort,
)
from .pipeline import RunResult, run_decomposed, run_raw_baseline
from .stl import StlConfig
from .types import Component, HyperParams, IntervalSeries, Method, MethodAssignment, SplitSpec, TimeSeries

log = logging.getLogger(__name__)

RESULTS_HEADER = (
    "method_trend",
    "method_season",
    "method_remainder",
    "decomposed",
    "alpha",
    "seed",
    "picp",
    "piaw",
    "runtime_ms",
)
INTERVALS_HEADER = ("t", "actual", "lower", "upper", "component")
DEFAULT_ALPHAS = (0.25, 0.2, 0.15, 0.1, 0.05)
SYNTHETIC_PERIOD = 30


def picp(intervals: IntervalSeries, actuals) -> float:
    """Fraction of actuals inside their interval, bounds included."""
    actuals = np.asarray(actuals, float)
    if len(actuals) != len(intervals):
        raise LengthMismatch(f"{len(actuals)} actuals for {len(intervals)} intervals")
    if len(actuals) == 0:
        raise ValueError("no test points")
    return float(intervals.contains(actuals).mean())


def piaw(intervals: IntervalSeries) -> Tuple[float, bool]:
    """Mean width and whether any width was infinite (in which case the mean is ``inf``)."""
    if len(intervals) == 0:
        raise ValueError("no test points")
    if intervals.has_infinite:
        return math.inf, True
    return float(intervals.width.mean()), False


def generate_synthetic(
    T: int = 3000,
    seed: Optional[int] = None,
    period: int = SYNTHETIC_PERIOD,
    slope: float = 0.1,
    amplitude: float = 100.0,
    noise_sd: float = 1.0,
) -> TimeSeries:
    """Linear trend plus sinusoidal season plus Gaussian noise, ``t = 1..T``.

    >>> s = generate_synthetic(60, seed=0, noise_sd=0.0)
    >>> round(float(s.values[29]), 9)
    3.0
    """
    if T < 2 * period:
        raise SeriesTooShort(f"synthetic series needs at least {2 * period} steps, got {T}")
    t = np.arange(1, T + 1, dtype=float)
    noise = np.random.default_rng(seed).standard_normal(T) * noise_sd
    values = slope * t + amplitude * np.sin(2 * np.pi * t / period) + noise
    return TimeSeries(values, period, time_index=np.arange(1, T + 1), name="synthetic")


def _parse_float(text, row, column):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise NonNumericCell(row, column, text) from None
    if not math.isfinite(value):
        raise NonNumericCell(row, column, text)
    return value


def load_csv(path, value_col: str = "y", period: int = 2, time_col: Optional[str] = "t", feature_cols: Sequence[str] = (), name=None) -> TimeSeries:
    """Read a comma-separated series with a header row.

    Rows keep file order. ``time_col`` may be ``None``; if given but absent
    it raises like any other missing column. Row numbers in errors count
    data rows from 1.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames
            if not header:
                raise EmptyFile(f"{path} has no header")
            needed = [value_col] + list(feature_cols) + ([time_col] if time_col else [])
            for col in needed:
                if col not in header:
                    raise MissingColumn(f"column {col!r} not in {path} (have {', '.join(header)})")
            values, times, feats = [], [], []
            for i, rec in enumerate(reader, start=1):
                values.append(_parse_float(rec[value_col], i, value_col))
                feats.append([_parse_float(rec[c], i, c) for c in feature_cols])
                if time_col:
                    t = _parse_float(rec[time_col], i, time_col)
                    if t != int(t):
                        raise NonNumericCell(i, time_col, rec[time_col])
                    times.append(int(t))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not values:
        raise EmptyFile(f"{path} has no data rows")
    features = np.array(feats, float) if feature_cols else None
    return TimeSeries(values, period, features, times if time_col else None, name or path.stem)


def write_series_csv(series: TimeSeries, path, columns: Optional[Dict[str, np.ndarray]] = None) -> None:
    """Write ``t,y`` plus any extra columns with full float precision."""
    cols = {"t": series.time_index, "y": series.values}
    cols.update(columns or {})
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols.keys())
            for row in zip(*cols.values()):
                w.writerow([int(v) if isinstance(v, (np.integer, int)) else repr(float(v)) for v in row])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


@dataclass(frozen=True)
class RunSpec:
    """One row of the method grid: a decomposed assignment or a raw baseline."""

    trend: str = "EnbPI"
    season: str = "BinaryPoint"
    remainder: str = "CVPlus"
    raw: Optional[str] = None

    def __post_init__(self):
        if self.raw is not None:
            object.__setattr__(self, "raw", Method.parse(self.raw).value)
        else:
            for name in ("trend", "season", "remainder"):
                object.__setattr__(self, name, Method.parse(getattr(self, name)).value)

    @classmethod
    def from_dict(cls, d) -> "RunSpec":
        if isinstance(d, str):
            return cls(raw=d)
        unknown = set(d) - {"trend", "season", "remainder", "raw"}
        if unknown:
            raise ConfigError(f"unknown assignment key(s): {', '.join(sorted(unknown))}")
        if "raw" in d and len(d) > 1:
            raise ConfigError("a raw baseline takes no component methods")
        try:
            return cls(**d)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def decomposed(self) -> bool:
        return self.raw is None

    @property
    def methods(self) -> Tuple[str, str, str]:
        # a raw baseline applies its single method to the whole series
        return (self.raw,) * 3 if self.raw else (self.trend, self.season, self.remainder)

    @property
    def label(self) -> str:
        return f"raw-{self.raw}" if self.raw else f"{self.trend}-{self.season}-{self.remainder}"


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synthetic"
    length: int = 3000
    path: Optional[str] = None
    value_col: str = "y"
    time_col: Optional[str] = "t"
    feature_cols: Tuple[str, ...] = ()
    period: int = SYNTHETIC_PERIOD

    def __post_init__(self):
        if self.kind not in ("synthetic", "csv"):
            raise ConfigError(f"dataset kind must be 'synthetic' or 'csv', got {self.kind!r}")
        if self.kind == "csv" and not self.path:
            raise ConfigError("csv dataset needs a path")
        object.__setattr__(self, "feature_cols", tuple(self.feature_cols))

    def load(self, seed: Optional[int]) -> TimeSeries:
        if self.kind == "synthetic":
            return generate_synthetic(self.length, seed, period=self.period)
        return load_csv(self.path, self.value_col, self.period, self.time_col, self.feature_cols)


@dataclass(frozen=True)
class SweepConfig:
    """Grid of method assignments, miscoverage levels and seeds over one dataset."""

    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    assignments: Tuple[RunSpec, ...] = ()
    alphas: Tuple[float, ...] = DEFAULT_ALPHAS
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    hyperparams: HyperParams = field(default_factory=HyperParams)
    bonferroni: bool = False
    train_fraction: float = 0.5
    cal_fraction: float = 0.25
    stl: StlConfig = field(default_factory=StlConfig)
    test_mode: str = "extend"
    timing: bool = True

    def __post_init__(self):
        if not self.assignments:
            raise ConfigError("at least one method assignment is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.alphas:
            raise ConfigError("at least one alpha is required")
        for a in self.alphas:
            if not 0 < a < 1:
                raise ConfigError(f"alpha must lie in (0, 1), got {a}")
        object.__setattr__(self, "assignments", tuple(self.assignments))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))


@dataclass
class EvalRow:
    method_trend: str
    method_season: str
    method_remainder: str
    decomposed: bool
    alpha: float
    seed: int
    picp: float
    piaw: float
    runtime_ms: float
    piaw_infinite: bool = False
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def key(self):
        return (self.method_trend, self.method_season, self.method_remainder, self.decomposed, self.alpha)


@dataclass
class SweepResult:
    """Per-run rows in grid order, their per-configuration summary and the runs themselves."""

    rows: List[EvalRow]
    summary: List[dict]
    runs: List[Optional[RunResult]] = field(default_factory=list)

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)

    @property
    def n_failed(self) -> int:
        return sum(not r.ok for r in self.rows)


def run_cell(config: SweepConfig, spec: RunSpec, alpha: float, seed: int, series: Optional[TimeSeries] = None) -> RunResult:
    """Execute one (assignment, alpha, seed) cell."""
    if series is None:
        series = config.dataset.load(seed)
    split = SplitSpec.from_fractions(len(series), config.train_fraction, config.cal_fraction)
    hp = config.hyperparams.with_(seed=seed)
    if spec.decomposed:
        assignment = MethodAssignment(spec.trend, spec.season, spec.remainder, alpha, config.bonferroni)
        return run_decomposed(series, split, assignment, hp, config.stl, config.test_mode)
    return run_raw_baseline(series, split, spec.raw, hp, alpha)


def _cell_job(args):
    config, spec, alpha, seed, series = args
    start = time.perf_counter()
    try:
        result = run_cell(config, spec, alpha, seed, series)
        error = None
    except Exception as exc:  # a failing cell must not stop the sweep
        result, error = None, f"{type(exc).__name__}: {exc}"
    return result, error, (time.perf_counter() - start) * 1e3


def summarize(rows: Sequence[EvalRow]) -> List[dict]:
    """Mean and standard error per configuration, in first-seen order."""
    groups: Dict[tuple, List[EvalRow]] = {}
    for row in rows:
        groups.setdefault(row.key, []).append(row)
    out = []
    for key, members in groups.items():
        ok = [r for r in members if r.ok]
        entry = {
            "method_trend": key[0],
            "method_season": key[1],
            "method_remainder": key[2],
            "decomposed": key[3],
            "alpha": key[4],
            "n_runs": len(ok),
            "n_failed": len(members) - len(ok),
        }
        for metric in ("picp", "piaw"):
            vals = np.array([getattr(r, metric) for r in ok], float)
            infinite = bool(np.isinf(vals).any())
            if len(vals) == 0 or infinite:
                mean = se = None
            else:
                mean = float(vals.mean())
                se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
            entry[f"{metric}_mean"] = mean
            entry[f"{metric}_se"] = se
            entry[f"{metric}_infinite"] = infinite
        out.append(entry)
    return out


def run_sweep(config: SweepConfig, workers: int = 1, keep_runs: bool = True) -> SweepResult:
    """Run assignments x alphas x seeds.

    Cells run in a process pool when ``workers > 1``; results always come
    back in grid order. Failing cells produce a row with ``error`` set.
    """
    shared = None if config.dataset.kind == "synthetic" else config.dataset.load(None)
    jobs = [
        (config, spec, alpha, seed, shared)
        for spec in config.assignments
        for alpha in config.alphas
        for seed in config.seeds
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_cell_job, jobs))
    else:
        outcomes = [_cell_job(j) for j in jobs]
    rows, runs = [], []
    for (_, spec, alpha, seed, _), (result, error, elapsed) in zip(jobs, outcomes):
        methods = spec.methods
        runtime = elapsed if config.timing else 0.0
        if error is None:
            row = EvalRow(*methods, spec.decomposed, alpha, seed, result.picp, result.piaw, runtime, result.metrics["piaw_infinite"])
        else:
            log.warning("cell %s alpha=%s seed=%s failed: %s", spec.label, alpha, seed, error)
            row = EvalRow(*methods, spec.decomposed, alpha, seed, math.nan, math.nan, runtime, False, error)
        rows.append(row)
        runs.append(result if keep_runs else None)
    return SweepResult(rows, summarize(rows), runs)


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6f}"


def run_dir_name(row: EvalRow) -> str:
    if row.decomposed:
        label = f"{row.method_trend}-{row.method_season}-{row.method_remainder}"
    else:
        label = f"raw-{row.method_trend}"
    return f"{label}_a{row.alpha:g}_s{row.seed}"


def write_intervals_csv(result: RunResult, path) -> None:
    """Per-step bounds of the overall interval, then of every component."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INTERVALS_HEADER)
        label = Component.RECOMPOSED.value if result.decomposed else Component.RAW.value
        for t, y, lo, hi in zip(result.time_index, result.actuals, result.intervals.lower, result.intervals.upper):
            w.writerow([int(t), _fmt(y), _fmt(lo), _fmt(hi), label])
        if result.decomposed:
            for comp, fc in result.components.items():
                for t, y, lo, hi in zip(result.time_index, fc.actuals, fc.intervals.lower, fc.intervals.upper):
                    w.writerow([int(t), _fmt(y), _fmt(lo), _fmt(hi), comp.value])


def emit_report(rows, out_dir, runs: Optional[Sequence[Optional[RunResult]]] = None, summary=None) -> List[Path]:
    """Write ``results.csv``, ``summary.json`` and per-run ``intervals.csv`` files.

    Returns the paths written. Infinite widths appear as ``inf`` in the CSV
    and as ``null`` with an ``*_infinite`` flag in the JSON summary.
    """
    if isinstance(rows, SweepResult):
        runs = rows.runs if runs is None else runs
        summary = rows.summary if summary is None else summary
        rows = rows.rows
    rows = list(rows)
    summary = summarize(rows) if summary is None else summary
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        results = out / "results.csv"
        with results.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESULTS_HEADER)
            for r in rows:
                w.writerow([r.method_trend, r.method_season, r.method_remainder, _fmt(r.decomposed), _fmt(r.alpha), r.seed, _fmt(r.picp), _fmt(r.piaw), _fmt(r.runtime_ms)])
        written.append(results)
        summary_path = out / "summary.json"
        doc = {"configs": summary, "failures": [asdict(r) for r in rows if not r.ok]}
        summary_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(summary_path)
        for r, run in zip(rows, runs or ()):
            if run is None:
                continue
            run_dir = out / "runs" / run_dir_name(r)
            run_dir.mkdir(parents=True, exist_ok=True)
            write_intervals_csv(run, run_dir / "intervals.csv")
            written.append(run_dir / "intervals.csv")
    except OSError as exc:
        raise IoFailure(f"cannot write report to {out}: {exc}") from exc
    return written


def default_workers() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1))
