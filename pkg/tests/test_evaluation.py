import csv
import json
import math

import numpy as np
import pytest

from decompcp import Component, HyperParams, IntervalSeries, generate_synthetic, load_csv, piaw, picp
from decompcp.evaluation import (
    RESULTS_HEADER,
    DatasetSpec,
    EvalRow,
    RunSpec,
    SweepConfig,
    emit_report,
    run_sweep,
    summarize,
    write_series_csv,
)
from decompcp.exceptions import ConfigError, EmptyFile, IoFailure, LengthMismatch, MissingColumn, NonNumericCell, SeriesTooShort


def iv(lo, hi):
    return IntervalSeries(np.asarray(lo, float), np.asarray(hi, float))


def test_picp_examples():
    lo, hi = np.zeros(10), np.ones(10)
    y = np.full(10, 0.5)
    y[3] = 2.0
    assert picp(iv(lo, hi), y) == 0.9
    assert picp(iv(np.full(3, -math.inf), np.full(3, math.inf)), [1e9, -1e9, 0]) == 1.0
    # bounds count as covered
    assert picp(iv([0, 0, 0], [1, 1, 1]), [0.5, 2.0, 1.0]) == pytest.approx(2 / 3)
    with pytest.raises(LengthMismatch):
        picp(iv([0], [1]), [0, 1])


def test_piaw_examples():
    assert piaw(iv([0, 0], [2, 4])) == (3.0, False)
    assert piaw(iv([1, 2], [1, 2])) == (0.0, False)
    assert piaw(iv([0, 0], [1, math.inf])) == (math.inf, True)


def test_synthetic_deterministic_part():
    s = generate_synthetic(60, seed=0, noise_sd=0.0)
    assert s.values[29] == pytest.approx(3.0, abs=1e-9)  # t = 30
    assert s.values[14] == pytest.approx(1.5, abs=1e-9)  # t = 15
    assert s.period == 30 and s.time_index[0] == 1


def test_synthetic_noise_variance():
    s = generate_synthetic(3000, seed=7)
    t = np.arange(1, 3001)
    eps = s.values - 0.1 * t - 100 * np.sin(2 * np.pi * t / 30)
    assert abs(eps.var(ddof=1) - 1.0) < 0.08


def test_synthetic_reproducible_and_short():
    assert np.array_equal(generate_synthetic(100, seed=1).values, generate_synthetic(100, seed=1).values)
    assert not np.array_equal(generate_synthetic(100, seed=1).values, generate_synthetic(100, seed=2).values)
    with pytest.raises(SeriesTooShort):
        generate_synthetic(59)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_csv_basic(tmp_path):
    s = load_csv(write(tmp_path / "a.csv", "t,y\n1,1.5\n2,2.5\n3,-1\n"), period=7)
    assert len(s) == 3 and s.period == 7
    assert s.values.tolist() == [1.5, 2.5, -1.0]


def test_load_csv_features(tmp_path):
    s = load_csv(write(tmp_path / "a.csv", "t,y,x\n1,1,10\n2,2,20\n"), feature_cols=["x"])
    assert s.features.tolist() == [[10.0], [20.0]]


def test_load_csv_errors(tmp_path):
    with pytest.raises(MissingColumn):
        load_csv(write(tmp_path / "a.csv", "t,z\n1,2\n"))
    with pytest.raises(NonNumericCell) as err:
        load_csv(write(tmp_path / "b.csv", "t,y\n1,2\n2,abc\n"))
    assert err.value.row == 2 and err.value.column == "y"
    with pytest.raises(EmptyFile):
        load_csv(write(tmp_path / "c.csv", ""))
    with pytest.raises(EmptyFile):
        load_csv(write(tmp_path / "d.csv", "t,y\n"))
    with pytest.raises(IoFailure):
        load_csv(tmp_path / "missing.csv")


def test_series_csv_roundtrip(tmp_path):
    s = generate_synthetic(90, seed=4)
    write_series_csv(s, tmp_path / "s.csv")
    back = load_csv(tmp_path / "s.csv", period=30)
    assert np.array_equal(back.values, s.values)
    assert back.time_index.tolist() == s.time_index.tolist()


def test_runspec():
    assert RunSpec.from_dict("EnbPI").methods == ("EnbPI", "EnbPI", "EnbPI")
    assert not RunSpec.from_dict({"raw": "ACI"}).decomposed
    spec = RunSpec.from_dict({"trend": "enbpi", "season": "BinaryPoint", "remainder": "CVPlus"})
    assert spec.decomposed and spec.methods == ("EnbPI", "BinaryPoint", "CVPlus")
    with pytest.raises(ConfigError):
        RunSpec.from_dict({"raw": "ACI", "trend": "ACI"})
    with pytest.raises(ConfigError):
        RunSpec.from_dict({"trnd": "ACI"})


def test_sweep_config_validation():
    with pytest.raises(ConfigError):
        SweepConfig(assignments=(RunSpec(),), seeds=())
    with pytest.raises(ConfigError):
        SweepConfig(assignments=())
    with pytest.raises(ConfigError):
        SweepConfig(assignments=(RunSpec(),), alphas=(1.5,))


def small_config(**kw):
    base = dict(
        dataset=DatasetSpec(length=1200),
        assignments=(RunSpec("EnbPI", "BinaryPoint", "CVPlus"),),
        alphas=(0.1,),
        seeds=(0, 1, 2),
        hyperparams=HyperParams(lag_order=1),
        timing=False,
    )
    base.update(kw)
    return SweepConfig(**base)


@pytest.fixture(scope="module")
def sweep():
    return run_sweep(small_config())


def test_sweep_counts(sweep):
    assert len(sweep) == 3 and len(sweep.summary) == 1
    assert [r.seed for r in sweep] == [0, 1, 2]
    assert sweep.n_failed == 0


def test_summary_mean(sweep):
    s = sweep.summary[0]
    assert s["picp_mean"] == pytest.approx(np.mean([r.picp for r in sweep]), abs=1e-12)
    assert s["piaw_mean"] == pytest.approx(np.mean([r.piaw for r in sweep]), abs=1e-12)
    assert s["piaw_se"] == pytest.approx(np.std([r.piaw for r in sweep], ddof=1) / math.sqrt(3), abs=1e-12)


def test_emit_report_files(tmp_path, sweep):
    emit_report(sweep, tmp_path / "a")
    lines = (tmp_path / "a" / "results.csv").read_text().splitlines()
    assert len(lines) == 4
    assert lines[0] == ",".join(RESULTS_HEADER)
    doc = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert len(doc["configs"]) == 1 and doc["failures"] == []
    runs = sorted(p.parent.name for p in (tmp_path / "a" / "runs").glob("*/intervals.csv"))
    assert runs == [f"EnbPI-BinaryPoint-CVPlus_a0.1_s{i}" for i in range(3)]


def test_emit_report_byte_identical(tmp_path, sweep):
    emit_report(sweep, tmp_path / "a")
    emit_report(run_sweep(small_config()), tmp_path / "b")
    for name in ("results.csv", "summary.json", "runs/EnbPI-BinaryPoint-CVPlus_a0.1_s1/intervals.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_parallel_matches_serial(tmp_path, sweep):
    par = run_sweep(small_config(), workers=2)
    assert [(r.picp, r.piaw) for r in par] == [(r.picp, r.piaw) for r in sweep]


def test_intervals_csv_recount(tmp_path, sweep):
    emit_report(sweep, tmp_path)
    with open(tmp_path / "runs" / "EnbPI-BinaryPoint-CVPlus_a0.1_s0" / "intervals.csv") as fh:
        rec = [r for r in csv.DictReader(fh) if r["component"] == Component.RECOMPOSED.value]
    assert len(rec) == 300
    covered = np.mean([float(r["lower"]) <= float(r["actual"]) <= float(r["upper"]) for r in rec])
    width = np.mean([float(r["upper"]) - float(r["lower"]) for r in rec])
    # six-decimal rounding can shift a boundary case; allow one step of slack
    assert abs(covered - sweep.rows[0].picp) <= 1 / 300
    assert width == pytest.approx(sweep.rows[0].piaw, abs=1e-5)


def test_inf_encoding(tmp_path):
    rows = [
        EvalRow("ACI", "ACI", "ACI", True, 0.1, 0, 0.99, math.inf, 0.0, True),
        EvalRow("ACI", "ACI", "ACI", True, 0.1, 1, 0.97, 10.0, 0.0, False),
    ]
    emit_report(rows, tmp_path)
    line = (tmp_path / "results.csv").read_text().splitlines()[1]
    assert line == "ACI,ACI,ACI,true,0.100000,0,0.990000,inf,0.000000"
    s = json.loads((tmp_path / "summary.json").read_text())["configs"][0]
    assert s["piaw_mean"] is None and s["piaw_infinite"] is True
    assert s["picp_mean"] == pytest.approx(0.98)


def test_failed_cell_is_recorded(tmp_path):
    cfg = small_config(seeds=(0,), assignments=(RunSpec(raw="EnbPI"), RunSpec(raw="BinaryPoint")))
    res = run_sweep(cfg)
    assert res.rows[0].ok
    # a seasonal scheme is not a raw baseline; the sweep keeps going
    assert res.n_failed == 1 and res.rows[1].error.startswith("ValueError")
    assert math.isnan(res.rows[1].picp)
    emit_report(res, tmp_path)
    assert len((tmp_path / "results.csv").read_text().splitlines()) == 3


def test_summarize_skips_failures():
    rows = [
        EvalRow("EnbPI", "EnbPI", "EnbPI", False, 0.1, 0, 0.9, 4.0, 1.0),
        EvalRow("EnbPI", "EnbPI", "EnbPI", False, 0.1, 1, math.nan, math.nan, 1.0, error="boom"),
    ]
    s = summarize(rows)[0]
    assert s["n_runs"] == 1 and s["n_failed"] == 1
    assert s["picp_mean"] == 0.9 and s["picp_se"] == 0.0
