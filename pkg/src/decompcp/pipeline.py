"""Decompose, forecast every component with its own conformal method, recompose.

The per-component methods see the lag design of their own component. The
fitting domain depends on the method:

* EnbPI and CV+ fit on training plus calibration rows and use their own
  out-of-sample scores;
* ACI and the weighting schemes fit on training rows and score the
  calibration rows, which stay fixed during the test period.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional

import numpy as np
from sklearn.base import BaseEstimator

from .conformal import CVPlusRegressor, residual_scores
from .exceptions import LengthMismatch, SeriesTooShort
from .regressors import LagLinearRegressor, LagMatrix, lag_design
from .seasonal import FEATURE_SCHEMES, POSITION_SCHEMES, WeightedConformalRegressor
from .sequential import aci_run, enbpi_fit, enbpi_predict
from .stl import StlConfig, stl_decompose
from .types import (
    Component,
    DecompositionResult,
    HyperParams,
    IntervalSeries,
    Method,
    MethodAssignment,
    SplitSpec,
    TimeSeries,
    validate_series,
)

TEST_MODES = ("extend", "refit")


@dataclass(frozen=True, eq=False)
class ComponentForecast:
    component: Component
    predictions: np.ndarray
    intervals: IntervalSeries
    method: Method
    effective_alpha: float
    actuals: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.predictions) != len(self.intervals):
            raise LengthMismatch("predictions and intervals are not aligned")


@dataclass(eq=False)
class RunResult:
    """Outcome of one decomposed or raw run over the test range.

    ``intervals`` is the recomposed interval for a decomposed run and the
    raw interval for a baseline run.
    """

    intervals: IntervalSeries
    predictions: np.ndarray
    actuals: np.ndarray
    time_index: np.ndarray
    decomposed: bool
    components: Dict[Component, ComponentForecast] = field(default_factory=dict)
    raw: Optional[IntervalSeries] = None
    decomposition: Optional[DecompositionResult] = None
    config: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    runtime_ms: float = 0.0

    @property
    def picp(self) -> float:
        return self.metrics["picp"]

    @property
    def piaw(self) -> float:
        return self.metrics["piaw"]


def recompose_intervals(trend: IntervalSeries, seasonal: IntervalSeries, remainder: IntervalSeries) -> IntervalSeries:
    """Pointwise sum of component bounds under the additive model."""
    if not len(trend) == len(seasonal) == len(remainder):
        raise LengthMismatch(f"component lengths {len(trend)}, {len(seasonal)}, {len(remainder)}")
    flags = trend.flags | seasonal.flags | remainder.flags
    return IntervalSeries(
        trend.lower + seasonal.lower + remainder.lower,
        trend.upper + seasonal.upper + remainder.upper,
        Component.RECOMPOSED,
        flags,
    )


def bonferroni_alpha(alpha: float, m: int = 3) -> float:
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if m < 1:
        raise ValueError("m must be >= 1")
    return alpha / m


def _metrics(intervals: IntervalSeries, actuals) -> dict:
    # imported lazily: evaluation depends on this module
    from .evaluation import piaw, picp

    width, infinite = piaw(intervals)
    return {"picp": picp(intervals, actuals), "piaw": width, "piaw_infinite": infinite}


def _design(values, lag_order: int, features, difference: bool):
    """Lag design, optionally on first differences.

    Returns the design and, per row, the level that must be added back to a
    prediction (zeros when not differencing).
    """
    values = np.asarray(values, float)
    if not difference:
        lm = lag_design(values, lag_order, features)
        return lm, np.zeros(len(lm))
    diffs = np.diff(values)
    feats = None if features is None else np.asarray(features, float)[1:]
    lm = lag_design(diffs, lag_order, feats)
    origin = lm.origin_index + 1
    lm = LagMatrix(lm.X, lm.y, origin, lm.lag_order)
    return lm, values[origin - 1]


def forecast_component(
    values,
    split: SplitSpec,
    method,
    alpha: float,
    hp: HyperParams,
    period: int,
    lag_order: int,
    features=None,
    component: Component = Component.RAW,
    seed: Optional[int] = None,
) -> ComponentForecast:
    """Point forecasts and conformal intervals over the test range of one series."""
    method = Method.parse(method)
    values = np.asarray(values, float)
    if len(values) != split.n_total:
        raise LengthMismatch(f"{len(values)} values for a split over {split.n_total}")
    lm, offset = _design(values, lag_order, features, hp.difference)
    o = lm.origin_index
    train, cal, test = o < split.train_end, (o >= split.train_end) & (o < split.cal_end), o >= split.cal_end
    if train.sum() < 2:
        raise SeriesTooShort(f"only {int(train.sum())} training rows for lag order {lag_order}")
    X_test, y_test, off_test = lm.X[test], lm.y[test], offset[test]
    est = LagLinearRegressor(ridge_penalty=hp.ridge_penalty)
    seed = hp.seed if seed is None else seed
    flags = None

    if method is Method.ENBPI:
        state = enbpi_fit(lm.rows(train | cal), hp.n_bootstraps, seed, est, hp.window_length)
        pred, lower, upper = enbpi_predict(state, X_test, y_test, alpha)
    elif method is Method.CVPLUS:
        reg = CVPlusRegressor(est, n_folds=hp.cv_folds, alpha=alpha).fit(lm.X[train | cal], lm.y[train | cal])
        pred, pis = reg.predict_interval(X_test)
        lower, upper = pis[:, 0], pis[:, 1]
    elif method is Method.ACI:
        model = est.fit(lm.X[train], lm.y[train])
        scores = residual_scores(model.predict(lm.X[cal]), lm.y[cal])
        pred = model.predict(X_test)
        iv, _, _ = aci_run(scores, pred, y_test, alpha, hp.gamma)
        lower, upper = iv.lower, iv.upper
    elif method in POSITION_SCHEMES | FEATURE_SCHEMES:
        feats_cal = feats_test = None
        if method in FEATURE_SCHEMES and features is not None:
            f = np.asarray(features, float)
            f = f[:, None] if f.ndim == 1 else f
            feats_cal, feats_test = f[o[cal]], f[o[test]]
        reg = WeightedConformalRegressor(
            est,
            scheme=method.value,
            period=period,
            alpha=alpha,
            neighborhood=hp.neighborhood,
            decay=hp.decay,
            knn_k=hp.knn_k,
            recency_periods=hp.recency_periods,
            circular=hp.circular,
            standardize=hp.standardize_features,
        )
        reg.fit(lm.X[train], lm.y[train], lm.X[cal], lm.y[cal], cal_features=feats_cal)
        pred, pis, flags = reg.predict_interval(X_test, features=feats_test, return_flags=True)
        lower, upper = pis[:, 0], pis[:, 1]
    else:
        raise ValueError(f"unsupported method {method}")

    pred = pred + off_test
    intervals = IntervalSeries(lower + off_test, upper + off_test, component, flags)
    return ComponentForecast(component, pred, intervals, method, alpha, actuals=y_test + off_test)


def _extend_trend(trend, n_ahead: int, lag_order: int, ridge_penalty: float) -> np.ndarray:
    """Recursive AR forecast of a smooth trend ``n_ahead`` steps past its end."""
    k = max(1, min(lag_order, len(trend) // 2))
    model = LagLinearRegressor(ridge_penalty=ridge_penalty)
    lm = lag_design(trend, k)
    model.fit(lm.X, lm.y)
    coef, icpt = model.coef_, model.intercept_
    buf = list(np.asarray(trend[-k:], float))
    out = np.empty(n_ahead)
    for h in range(n_ahead):
        nxt = float(icpt + np.dot(coef, buf[-k:]))
        out[h] = nxt
        buf.append(nxt)
    return out


def decompose_for_test(
    values,
    split: SplitSpec,
    period: int,
    stl_config: Optional[StlConfig] = None,
    mode: str = "extend",
    lag_order: Optional[int] = None,
    ridge_penalty: float = 1e-6,
    seasonal_cycles: Optional[int] = None,
) -> DecompositionResult:
    """Components over the whole series without peeking at test values.

    ``extend`` fits STL once on the observed range, repeats the mean of its
    last ``seasonal_cycles`` seasonal cycles (default: the seasonal span)
    and extends the trend with an AR model. ``refit`` reruns
    STL on every prefix ending at a test step and keeps its last point.
    The test remainder is whatever the observation leaves over.
    """
    values = np.asarray(values, float)
    if mode not in TEST_MODES:
        raise ValueError(f"test mode must be one of {TEST_MODES}, got {mode!r}")
    obs = values[: split.cal_end]
    cfg = stl_config or StlConfig()
    dec = stl_decompose(obs, cfg, period=period)
    n_test = split.n_test
    if mode == "extend":
        # average the last few cycles: the final one sits on the smoother's boundary
        m = max(1, min(seasonal_cycles or cfg.seasonal_span, len(obs) // period))
        cycle = dec.seasonal[len(obs) - m * period :].reshape(m, period).mean(axis=0)
        seasonal_test = np.resize(cycle, n_test)
        trend_test = _extend_trend(dec.trend, n_test, lag_order or period, ridge_penalty)
    else:
        trend_test, seasonal_test = np.empty(n_test), np.empty(n_test)
        for j in range(n_test):
            d = stl_decompose(values[: split.cal_end + j + 1], stl_config, period=period)
            trend_test[j], seasonal_test[j] = d.trend[-1], d.seasonal[-1]
    trend = np.concatenate([dec.trend, trend_test])
    seasonal = np.concatenate([dec.seasonal, seasonal_test])
    return DecompositionResult(trend, seasonal, values - trend - seasonal)


def _snapshot(split, hp, extra) -> dict:
    cfg = {"train_end": split.train_end, "cal_end": split.cal_end, "n_total": split.n_total}
    cfg.update(asdict(hp))
    cfg.update(extra)
    return cfg


def run_decomposed(
    series: TimeSeries,
    split: SplitSpec,
    assignment: MethodAssignment,
    hp: Optional[HyperParams] = None,
    stl_config: Optional[StlConfig] = None,
    test_mode: str = "extend",
) -> RunResult:
    """Full decompose, per-component conformal, recompose run."""
    start = time.perf_counter()
    hp = hp or HyperParams()
    validate_series(series)
    if split.n_total != len(series):
        raise LengthMismatch(f"split covers {split.n_total} steps, series has {len(series)}")
    period = series.period
    lag = hp.resolved_lag_order(period)
    dec = decompose_for_test(series.values, split, period, stl_config, test_mode, lag, hp.ridge_penalty)
    alpha = assignment.component_alpha
    plan = (
        (Component.TREND, assignment.trend, lag),
        (Component.SEASONAL, assignment.season, lag),
        (Component.REMAINDER, assignment.remainder, 0),
    )
    components = {}
    for i, (comp, method, k) in enumerate(plan):
        components[comp] = forecast_component(
            dec.component(comp),
            split,
            method,
            alpha,
            hp,
            period,
            k,
            features=series.features if Method.parse(method) in FEATURE_SCHEMES else None,
            component=comp,
            seed=hp.seed + i,
        )
    recomposed = recompose_intervals(*(components[c].intervals for c in (Component.TREND, Component.SEASONAL, Component.REMAINDER)))
    actuals = series.values[split.test]
    center = sum(components[c].predictions for c in components)
    result = RunResult(
        intervals=recomposed,
        predictions=center,
        actuals=actuals,
        time_index=np.asarray(series.time_index[split.test]),
        decomposed=True,
        components=components,
        decomposition=dec,
        config=_snapshot(split, hp, {"assignment": assignment.label, "alpha": assignment.alpha, "bonferroni": assignment.bonferroni, "test_mode": test_mode}),
        metrics=_metrics(recomposed, actuals),
    )
    result.runtime_ms = (time.perf_counter() - start) * 1e3
    return result


def run_raw_baseline(series: TimeSeries, split: SplitSpec, method, hp: Optional[HyperParams] = None, alpha: float = 0.1) -> RunResult:
    """One conformal method on the undecomposed series, lags plus exogenous features."""
    start = time.perf_counter()
    hp = hp or HyperParams()
    validate_series(series, require_decomposable=False)
    if split.n_total != len(series):
        raise LengthMismatch(f"split covers {split.n_total} steps, series has {len(series)}")
    method = Method.parse(method)
    if method not in (Method.ENBPI, Method.ACI, Method.CVPLUS):
        raise ValueError(f"{method} is not a raw baseline method")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    fc = forecast_component(
        series.values,
        split,
        method,
        alpha,
        hp,
        series.period,
        hp.resolved_lag_order(series.period),
        features=series.features,
        component=Component.RAW,
    )
    actuals = series.values[split.test]
    result = RunResult(
        intervals=fc.intervals,
        predictions=fc.predictions,
        actuals=actuals,
        time_index=np.asarray(series.time_index[split.test]),
        decomposed=False,
        components={Component.RAW: fc},
        raw=fc.intervals,
        config=_snapshot(split, hp, {"method": method.value, "alpha": alpha}),
        metrics=_metrics(fc.intervals, actuals),
    )
    result.runtime_ms = (time.perf_counter() - start) * 1e3
    return result


class DecomposedConformalForecaster(BaseEstimator):
    """Estimator front end to :func:`run_decomposed`.

    Parameters
    ----------
    trend, season, remainder : str
        Conformal method per component.
    alpha : float
    bonferroni : bool
    period : int
    train_fraction, cal_fraction : float
        Contiguous split proportions.
    hyperparams : HyperParams or None
    test_mode : {"extend", "refit"}

    Examples
    --------
    >>> from decompcp.evaluation import generate_synthetic
    >>> f = DecomposedConformalForecaster(period=30, hyperparams=HyperParams(lag_order=1))
    >>> f = f.fit(generate_synthetic(600, seed=0).values)
    >>> f.predict_interval().shape
    (150, 2)
    """

    def __init__(
        self,
        trend="EnbPI",
        season="BinaryPoint",
        remainder="CVPlus",
        alpha=0.1,
        bonferroni=False,
        period=2,
        train_fraction=0.5,
        cal_fraction=0.25,
        hyperparams=None,
        test_mode="extend",
    ):
        self.trend = trend
        self.season = season
        self.remainder = remainder
        self.alpha = alpha
        self.bonferroni = bonferroni
        self.period = period
        self.train_fraction = train_fraction
        self.cal_fraction = cal_fraction
        self.hyperparams = hyperparams
        self.test_mode = test_mode

    def fit(self, y, features=None):
        series = y if isinstance(y, TimeSeries) else TimeSeries(np.asarray(y, float), self.period, features)
        split = SplitSpec.from_fractions(len(series), self.train_fraction, self.cal_fraction)
        assignment = MethodAssignment(self.trend, self.season, self.remainder, self.alpha, self.bonferroni)
        self.result_ = run_decomposed(series, split, assignment, self.hyperparams, test_mode=self.test_mode)
        self.split_ = split
        return self

    def predict(self):
        return self.result_.predictions

    def predict_interval(self) -> np.ndarray:
        return np.column_stack([self.result_.intervals.lower, self.result_.intervals.upper])

    def score(self) -> float:
        """Empirical coverage over the test range."""
        return self.result_.picp
