"""LOESS smoothing and STL seasonal-trend decomposition.

The decomposition follows Cleveland et al. (1990): an inner loop that
alternates cycle-subseries smoothing, a low-pass filter and trend smoothing,
and an optional outer loop that downweights outliers with bisquare weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import PeriodTooLarge, SeriesTooShort, TooFewPoints, WindowTooLarge
from .types import DecompositionResult, TimeSeries


def _next_odd(value: float) -> int:
    n = int(math.ceil(value - 1e-12))
    return n if n % 2 == 1 else n + 1


@dataclass(frozen=True)
class LoessConfig:
    span: int
    degree: int = 1
    robustness_weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.degree not in (0, 1, 2):
            raise ValueError(f"degree must be 0, 1 or 2, got {self.degree}")
        if self.span % 2 != 1:
            raise ValueError(f"span must be odd, got {self.span}")
        if self.span < self.degree + 2:
            raise ValueError(f"span {self.span} too small for degree {self.degree}")


@dataclass(frozen=True)
class StlConfig:
    """STL tuning parameters.

    Unset spans are derived from the period when the config is resolved.
    ``periodic=True`` replaces each cycle-subseries smooth by its mean.
    ``outer_iterations=None`` means 1 pass, or 15 when ``robust`` is set.
    """

    seasonal_span: int = 7
    trend_span: Optional[int] = None
    lowpass_span: Optional[int] = None
    seasonal_degree: int = 1
    trend_degree: int = 1
    lowpass_degree: int = 1
    inner_iterations: int = 2
    outer_iterations: Optional[int] = None
    robust: bool = False
    periodic: bool = False

    def resolve(self, period: int) -> "StlConfig":
        ns = self.seasonal_span
        nt = self.trend_span
        if nt is None:
            nt = _next_odd(1.5 * period / (1 - 1.5 / ns))
        nl = self.lowpass_span if self.lowpass_span is not None else _next_odd(period)
        outer = self.outer_iterations
        if outer is None:
            outer = 15 if self.robust else 1
        for name, span in (("seasonal_span", ns), ("trend_span", nt), ("lowpass_span", nl)):
            if span < 3 or span % 2 != 1:
                raise ValueError(f"{name} must be odd and >= 3, got {span}")
        if self.inner_iterations < 1 or outer < 1:
            raise ValueError("iteration counts must be >= 1")
        return StlConfig(
            seasonal_span=ns,
            trend_span=nt,
            lowpass_span=nl,
            seasonal_degree=self.seasonal_degree,
            trend_degree=self.trend_degree,
            lowpass_degree=self.lowpass_degree,
            inner_iterations=self.inner_iterations,
            outer_iterations=outer,
            robust=self.robust,
            periodic=self.periodic,
        )


def _window_starts(x: np.ndarray, x_eval: np.ndarray, q: int) -> np.ndarray:
    """Start index of the q nearest neighbours of each evaluation point in sorted ``x``."""
    n = len(x)
    lo = np.clip(np.searchsorted(x, x_eval) - q // 2, 0, n - q)
    for _ in range(n):
        left = lo > 0
        left[left] = (x_eval[left] - x[lo[left] - 1]) < (x[lo[left] + q - 1] - x_eval[left])
        lo = lo - left
        right = lo + q < n
        right[right] = (x[lo[right] + q] - x_eval[right]) < (x_eval[right] - x[lo[right]])
        lo = lo + right
        if not (left.any() or right.any()):
            break
    return lo


def _loess(x, y, x_eval, span, degree, rw=None) -> np.ndarray:
    """Tricube-weighted local polynomial fit of sorted (x, y) evaluated at ``x_eval``.

    A span wider than the data is honoured by inflating the bandwidth by
    half the excess, as in the reference STL code.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    x_eval = np.atleast_1d(np.asarray(x_eval, float))
    n = len(x)
    q = min(span, n)
    lo = _window_starts(x, x_eval, q)
    idx = lo[:, None] + np.arange(q)
    xw = x[idx]
    yw = y[idx]
    dist = np.abs(xw - x_eval[:, None])
    h = np.maximum(x_eval - x[lo], x[lo + q - 1] - x_eval)
    if span > n:
        h = h + (span - n) / 2.0
    h = np.maximum(h, 1e-12)[:, None]
    kernel = np.where(dist <= 0.999 * h, (1 - (dist / h) ** 3) ** 3, 0.0)
    kernel = np.where(dist <= 0.001 * h, 1.0, kernel)
    w = kernel if rw is None else kernel * np.asarray(rw, float)[idx]
    sw = w.sum(axis=1)
    dead = sw <= 0
    if dead.any():
        # every robustness weight in the window vanished: drop them
        w[dead] = kernel[dead]
        sw[dead] = w[dead].sum(axis=1)
    mean = (w * yw).sum(axis=1) / sw
    if degree == 0:
        return mean
    xbar = (w * xw).sum(axis=1) / sw
    xc = xw - xbar[:, None]
    c = (w * xc**2).sum(axis=1)
    span_x = x[-1] - x[0] if n > 1 else 0.0
    ok = np.sqrt(np.maximum(c, 0)) > 0.001 * span_x
    if degree == 1:
        slope = np.zeros_like(mean)
        slope[ok] = (w[ok] * xc[ok] * yw[ok]).sum(axis=1) / c[ok]
        return mean + slope * (x_eval - xbar)
    # degree 2: centre on the evaluation point and solve the 3x3 systems
    u = xw - x_eval[:, None]
    basis = np.stack([np.ones_like(u), u, u**2], axis=2)
    gram = np.einsum("mq,mqi,mqj->mij", w, basis, basis)
    rhs = np.einsum("mq,mqi,mq->mi", w, basis, yw)
    coef = np.einsum("mij,mj->mi", np.linalg.pinv(gram), rhs)
    fit = coef[:, 0]
    return np.where(ok, fit, mean)


def loess_smooth(xs, ys, config: LoessConfig) -> np.ndarray:
    """Fitted LOESS value at every ``x``.

    Parameters
    ----------
    xs, ys : array-like of shape (n,)
        Abscissae (any order) and responses.
    config : LoessConfig
        Span in points, local degree and optional robustness weights.

    Raises
    ------
    TooFewPoints
        If fewer than ``config.span`` points are supplied.
    """
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("xs and ys must be 1-d arrays of equal length")
    if len(xs) < config.span:
        raise TooFewPoints(f"{len(xs)} points for span {config.span}")
    order = np.argsort(xs, kind="stable")
    rw = None
    if config.robustness_weights is not None:
        rw = np.asarray(config.robustness_weights, float)[order]
    fitted = _loess(xs[order], ys[order], xs[order], config.span, config.degree, rw)
    out = np.empty_like(fitted)
    out[order] = fitted
    return out


def moving_average(ys, window: int) -> np.ndarray:
    """Mean over every full window of ``window`` points; ``len(ys) - window + 1`` entries."""
    ys = np.asarray(ys, float)
    if window < 1:
        raise ValueError("window must be positive")
    if window > len(ys):
        raise WindowTooLarge(f"window {window} exceeds length {len(ys)}")
    csum = np.concatenate(([0.0], np.cumsum(ys)))
    return (csum[window:] - csum[:-window]) / window


def bisquare_weights(residuals) -> np.ndarray:
    """Robustness weights ``(1 - (r / 6 median|r|)^2)^2``, zero beyond the cutoff."""
    r = np.abs(np.asarray(residuals, float))
    if r.size == 0:
        raise ValueError("residuals must be non-empty")
    if not r.any():
        return np.ones_like(r)
    h = 6.0 * np.median(r)
    if h == 0:
        return (r == 0).astype(float)
    u = r / h
    return np.where(u < 1, (1 - u**2) ** 2, 0.0)


def _cycle_subseries(detrended, period, cfg: StlConfig, rw) -> np.ndarray:
    n = len(detrended)
    out = np.empty(n + 2 * period)
    for j in range(period):
        sub = detrended[j::period]
        sub_rw = rw[j::period]
        m = len(sub)
        if cfg.periodic:
            total = sub_rw.sum()
            level = (sub * sub_rw).sum() / total if total > 0 else sub.mean()
            fit = np.full(m + 2, level)
        else:
            pos = np.arange(m, dtype=float)
            fit = _loess(pos, sub, np.arange(-1, m + 1, dtype=float), cfg.seasonal_span, cfg.seasonal_degree, sub_rw)
        out[j::period] = fit
    return out


def _inner_loop(y, period, cfg: StlConfig, rw, trend):
    n = len(y)
    pos = np.arange(n, dtype=float)
    seasonal = np.zeros(n)
    for _ in range(cfg.inner_iterations):
        cycle = _cycle_subseries(y - trend, period, cfg, rw)
        low = moving_average(moving_average(moving_average(cycle, period), period), 3)
        low = _loess(pos, low, pos, cfg.lowpass_span, cfg.lowpass_degree)
        seasonal = cycle[period : period + n] - low
        trend = _loess(pos, y - seasonal, pos, cfg.trend_span, cfg.trend_degree, rw)
    return trend, seasonal


def stl_decompose(series, config: Optional[StlConfig] = None, period: Optional[int] = None) -> DecompositionResult:
    """Additive STL decomposition of ``series``.

    ``series`` is a :class:`TimeSeries`, or a plain array together with
    ``period``. The remainder is defined as ``y - trend - seasonal`` so the
    components reconstruct the input up to floating point rounding.

    Raises
    ------
    SeriesTooShort
        If the series covers fewer than two full periods.
    """
    if isinstance(series, TimeSeries):
        y = np.asarray(series.values, float)
        period = series.period if period is None else period
    else:
        y = np.asarray(series, float).ravel()
    if period is None:
        raise ValueError("period is required for array input")
    period = int(period)
    if period < 2:
        raise ValueError(f"period must be >= 2, got {period}")
    if len(y) < 2 * period:
        raise SeriesTooShort(f"{len(y)} observations cover fewer than two periods of {period}")
    if not np.all(np.isfinite(y)):
        raise ValueError("series contains non-finite values")
    cfg = (config or StlConfig()).resolve(period)
    rw = np.ones(len(y))
    trend = np.zeros(len(y))
    seasonal = np.zeros(len(y))
    for outer in range(cfg.outer_iterations):
        trend, seasonal = _inner_loop(y, period, cfg, rw, trend)
        if cfg.robust and outer < cfg.outer_iterations - 1:
            rw = bisquare_weights(y - trend - seasonal)
    return DecompositionResult(trend=trend, seasonal=seasonal, remainder=y - trend - seasonal)


class STLDecomposer(TransformerMixin, BaseEstimator):
    """Scikit-learn transformer wrapping :func:`stl_decompose`.

    ``transform`` maps a series of shape ``(n,)`` or ``(n, 1)`` to an
    ``(n, 3)`` array of trend, seasonal and remainder columns.
    """

    def __init__(
        self,
        period=7,
        seasonal_span=7,
        trend_span=None,
        lowpass_span=None,
        inner_iterations=2,
        outer_iterations=None,
        robust=False,
        periodic=False,
    ):
        self.period = period
        self.seasonal_span = seasonal_span
        self.trend_span = trend_span
        self.lowpass_span = lowpass_span
        self.inner_iterations = inner_iterations
        self.outer_iterations = outer_iterations
        self.robust = robust
        self.periodic = periodic

    def _config(self) -> StlConfig:
        return StlConfig(
            seasonal_span=self.seasonal_span,
            trend_span=self.trend_span,
            lowpass_span=self.lowpass_span,
            inner_iterations=self.inner_iterations,
            outer_iterations=self.outer_iterations,
            robust=self.robust,
            periodic=self.periodic,
        )

    def fit(self, X, y=None):
        values = np.asarray(X, float).ravel()
        if self.period > len(values) / 2:
            raise PeriodTooLarge(f"period {self.period} exceeds half the series length ({len(values)})")
        self.config_ = self._config().resolve(self.period)
        self.decomposition_ = stl_decompose(values, self.config_, period=self.period)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        values = np.asarray(X, float).ravel()
        result = stl_decompose(values, self.config_, period=self.period)
        return np.column_stack([result.trend, result.seasonal, result.remainder])

    def fit_transform(self, X, y=None):
        self.fit(X)
        d = self.decomposition_
        return np.column_stack([d.trend, d.seasonal, d.remainder])
