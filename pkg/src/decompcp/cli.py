"""Command-line interface: ``decompcp synth|decompose|run|sweep``.

Exit codes: 0 on success, 1 on configuration or I/O errors, 2 when some
sweep cells failed (the remaining results are still written).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import load_config
from .evaluation import default_workers, emit_report, generate_synthetic, load_csv, run_sweep, write_series_csv
from .exceptions import BadArgument, DecompCPError
from .stl import StlConfig, stl_decompose
from .types import validate_series

OUT_DIR_ENV = "DECOMPCP_OUT_DIR"
MIN_SYNTH_LENGTH = 60

log = logging.getLogger("decompcp")


def _out_dir(cli_value, config_value) -> Path:
    return Path(cli_value or os.environ.get(OUT_DIR_ENV) or config_value or "results")


def cmd_synth(args) -> int:
    if args.length < MIN_SYNTH_LENGTH:
        raise BadArgument(f"--length must be >= {MIN_SYNTH_LENGTH}, got {args.length}")
    series = generate_synthetic(args.length, args.seed)
    write_series_csv(series, args.out)
    print(f"wrote {args.length} rows to {args.out}")
    return 0


def cmd_decompose(args) -> int:
    series = load_csv(args.input, args.value_col, args.period, args.time_col or None)
    validate_series(series)
    cfg = StlConfig(seasonal_span=args.seasonal_span, robust=args.robust, periodic=args.periodic)
    dec = stl_decompose(series, cfg)
    residual = np.abs(dec.reconstruct() - series.values)
    scale = np.maximum(np.abs(series.values), 1.0)
    write_series_csv(series, args.out, {"trend": dec.trend, "seasonal": dec.seasonal, "remainder": dec.remainder})
    print(f"max reconstruction residual: {float((residual / scale).max()):.3e}")
    return 0


def _print_summary(summary) -> None:
    width = max(len(f"{s['method_trend']}/{s['method_season']}/{s['method_remainder']}") for s in summary)
    print(f"{'methods':<{width}}  {'dec':>3}  {'alpha':>5}  {'picp':>6}  {'piaw':>9}  n")
    for s in summary:
        label = f"{s['method_trend']}/{s['method_season']}/{s['method_remainder']}"
        pc = "-" if s["picp_mean"] is None else f"{s['picp_mean']:.3f}"
        pw = "inf" if s["piaw_infinite"] else ("-" if s["piaw_mean"] is None else f"{s['piaw_mean']:.3f}")
        print(f"{label:<{width}}  {'yes' if s['decomposed'] else 'no':>3}  {s['alpha']:>5g}  {pc:>6}  {pw:>9}  {s['n_runs']}")


def _execute(args, first_alpha_only: bool) -> int:
    config, cfg_out = load_config(args.config)
    if first_alpha_only:
        config = replace(config, alphas=config.alphas[:1])
    workers = args.workers if args.workers else default_workers()
    result = run_sweep(config, workers=workers)
    out = _out_dir(args.out, cfg_out)
    emit_report(result, out)
    _print_summary(result.summary)
    print(f"reports written to {out}")
    if result.n_failed:
        log.error("%d of %d runs failed; see summary.json", result.n_failed, len(result))
        return 2
    return 0


def cmd_run(args) -> int:
    return _execute(args, first_alpha_only=True)


def cmd_sweep(args) -> int:
    return _execute(args, first_alpha_only=False)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="decompcp", description="Decomposed conformal prediction for time series.", formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write the synthetic trend+season+noise series", formatter_class=fmt)
    p.add_argument("--length", type=int, default=3000, help="number of time steps")
    p.add_argument("--seed", type=int, default=42, help="noise seed")
    p.add_argument("--out", default="synthetic.csv", help="output CSV path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("decompose", help="STL-decompose a CSV series", formatter_class=fmt)
    p.add_argument("--input", required=True, help="input CSV with a header row")
    p.add_argument("--period", type=int, required=True, help="steps per seasonal cycle")
    p.add_argument("--out", default="decomposition.csv", help="output CSV path")
    p.add_argument("--value-col", default="y", help="response column")
    p.add_argument("--time-col", default="t", help="integer time column ('' for none)")
    p.add_argument("--seasonal-span", type=int, default=7, help="LOESS span for cycle-subseries")
    p.add_argument("--robust", action="store_true", help="bisquare robustness iterations")
    p.add_argument("--periodic", action="store_true", help="constant seasonal pattern")
    p.set_defaults(func=cmd_decompose)

    for name, func, text in (
        ("run", cmd_run, "run every assignment and seed at the first alpha of a config"),
        ("sweep", cmd_sweep, "run the full assignment x alpha x seed grid of a config"),
    ):
        p = sub.add_parser(name, help=text, formatter_class=fmt)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", default=None, help=f"output directory (overrides ${OUT_DIR_ENV} and the config)")
        p.add_argument("--workers", type=int, default=default_workers(), help="parallel worker processes")
        p.set_defaults(func=func)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DecompCPError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
