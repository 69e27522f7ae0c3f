"""Weighting schemes for the seasonal component and for feature-local calibration.

Weights are raw (unnormalised) and depend only on period positions or
features, never on scores. :func:`weighted_interval` turns them into an
interval through the weighted conformal quantile.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .conformal import WeightedScoreSet, residual_scores, weighted_quantile
from .exceptions import DimensionMismatch, EmptySelectionWarning, NeighborhoodTooLarge
from .regressors import LagLinearRegressor
from .types import Component, IntervalSeries, Method

POSITION_SCHEMES = frozenset({Method.BINARY_POINT, Method.BINARY_LOCAL, Method.EXP_LOCAL})
FEATURE_SCHEMES = frozenset({Method.KNN, Method.FEAT_DIST_POINT})


def default_decay(period: int) -> float:
    """Rate at which the weight half a period away has fallen to about 1%."""
    return min(0.99, 2 * math.log(100) / period)


@dataclass(frozen=True)
class SeasonContext:
    """Period positions of the calibration points and of the test point.

    Calibration point ``i`` (1-based) sits at ``i mod tau``; a test point
    ``j`` steps after the calibration set sits at ``(n + j) mod tau``.

    Examples
    --------
    >>> ctx = SeasonContext.for_step(7, 21, 1)
    >>> ctx.test_position
    1
    """

    tau: int
    test_position: int
    cal_positions: np.ndarray

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("tau must be positive")
        pos = np.asarray(self.cal_positions, int)
        if np.any((pos < 0) | (pos >= self.tau)) or not 0 <= self.test_position < self.tau:
            raise ValueError(f"positions must lie in [0, {self.tau})")
        object.__setattr__(self, "cal_positions", pos)

    @classmethod
    def for_step(cls, tau: int, n: int, step: int = 1) -> "SeasonContext":
        return cls(tau, (n + step) % tau, np.arange(1, n + 1) % tau)

    @classmethod
    def with_test_position(cls, tau: int, n: int, test_position: int) -> "SeasonContext":
        return cls(tau, int(test_position) % tau, np.arange(1, n + 1) % tau)

    @property
    def n(self) -> int:
        return len(self.cal_positions)

    def distances(self, circular: bool = True) -> np.ndarray:
        d = np.abs(self.cal_positions - self.test_position)
        return np.minimum(d, self.tau - d) if circular else d


def _check_n(ctx: SeasonContext, n: Optional[int]) -> None:
    if n is not None and n != ctx.n:
        raise DimensionMismatch(f"context holds {ctx.n} calibration positions, n={n}")


def binary_point_weights(ctx: SeasonContext, n: Optional[int] = None) -> np.ndarray:
    """1 where the calibration point shares the test position, else 0.

    An all-zero result means nothing matched; :func:`weighted_interval`
    turns that into an infinite, flagged interval.
    """
    _check_n(ctx, n)
    return (ctx.cal_positions == ctx.test_position).astype(float)


def binary_local_weights(ctx: SeasonContext, n: Optional[int] = None, k: int = 1, circular: bool = True) -> np.ndarray:
    """1 within circular position distance ``k`` of the test position."""
    _check_n(ctx, n)
    if k < 0:
        raise ValueError("k must be nonnegative")
    if ctx.tau > 1 and k >= ctx.tau / 2:
        raise NeighborhoodTooLarge(f"neighbourhood {k} covers the whole period {ctx.tau}")
    return (ctx.distances(circular) <= k).astype(float)


def exp_local_weights(ctx: SeasonContext, n: Optional[int] = None, lam: Optional[float] = None, circular: bool = True) -> np.ndarray:
    """``lam * exp(-lam * d)`` with ``d`` the position distance to the test point."""
    _check_n(ctx, n)
    lam = default_decay(ctx.tau) if lam is None else lam
    if not 0 < lam < 1:
        raise ValueError(f"decay must lie in (0, 1), got {lam}")
    return lam * np.exp(-lam * ctx.distances(circular))


def recency_filter(raw_weights, n: int, tau: int, keep_periods: int) -> np.ndarray:
    """Zero the weights of calibration points older than ``keep_periods`` periods.

    >>> recency_filter(np.ones(21), 21, 7, 1).nonzero()[0] + 1
    array([15, 16, 17, 18, 19, 20, 21])
    """
    raw = np.array(raw_weights, float)
    if len(raw) != n:
        raise DimensionMismatch(f"{len(raw)} weights for n={n}")
    if keep_periods < 1:
        raise ValueError("keep_periods must be >= 1")
    cutoff = n - keep_periods * tau
    if cutoff > 0:
        raw[:cutoff] = 0.0
    return raw


def _standardize(cal, test):
    mu = cal.mean(axis=0)
    sd = cal.std(axis=0)
    sd[sd == 0] = 1.0
    return (cal - mu) / sd, (test - mu) / sd


def feature_distances(cal_features, test_features, standardize: bool = False) -> np.ndarray:
    """Euclidean distances from one test feature vector to every calibration row."""
    cal = np.asarray(cal_features, float)
    if cal.ndim == 1:
        cal = cal[:, None]
    test = np.asarray(test_features, float).ravel()
    if cal.shape[1] != test.shape[0]:
        raise DimensionMismatch(f"calibration features have {cal.shape[1]} columns, test has {test.shape[0]}")
    if standardize:
        cal, test = _standardize(cal, test)
    return np.sqrt(((cal - test) ** 2).sum(axis=1))


def knn_weights(cal_features, test_features, k: int, standardize: bool = False) -> np.ndarray:
    """1 for the ``k`` nearest calibration rows; ties go to the lower index."""
    d = feature_distances(cal_features, test_features, standardize)
    n = len(d)
    if not 1 <= k:
        raise ValueError("k must be >= 1")
    w = np.zeros(n)
    w[np.argsort(d, kind="stable")[: min(k, n)]] = 1.0
    return w


def feat_dist_weights(cal_features, test_features, standardize: bool = False) -> np.ndarray:
    """Inverse-distance weights.

    A zero distance gets ten times the largest finite inverse distance (1 if
    every distance is zero), so normalisation stays finite.
    """
    d = feature_distances(cal_features, test_features, standardize)
    zero = d == 0
    w = np.zeros(len(d))
    w[~zero] = 1.0 / d[~zero]
    if zero.any():
        cap = w[~zero].max() if (~zero).any() else 0.1
        w[zero] = 10.0 * cap
    return w


def weighted_interval(scores, raw_weights, alpha: float, prediction: float, test_weight: float = 1.0):
    """``prediction -/+ q`` with ``q`` the weighted conformal quantile.

    Returns ``(lower, upper, empty)`` where ``empty`` marks an all-zero
    calibration selection, which yields an infinite interval.
    """
    raw = np.asarray(raw_weights, float)
    if not raw.any():
        return -math.inf, math.inf, True
    q = weighted_quantile(WeightedScoreSet.from_raw(scores, raw, test_weight=test_weight), 1 - alpha)
    return prediction - q, prediction + q, False


def scheme_weights(
    method,
    n: int,
    step: int,
    period: int,
    neighborhood: int = 1,
    decay: Optional[float] = None,
    knn_k: Optional[int] = None,
    recency_periods: Optional[int] = None,
    circular: bool = True,
    cal_features=None,
    test_features=None,
    standardize: bool = False,
):
    """Raw weights and test mass for calibration size ``n`` at test step ``step`` (1-based)."""
    method = Method.parse(method)
    if method in POSITION_SCHEMES:
        ctx = SeasonContext.for_step(period, n, step)
        if method is Method.BINARY_POINT:
            raw, test_w = binary_point_weights(ctx), 1.0
        elif method is Method.BINARY_LOCAL:
            raw, test_w = binary_local_weights(ctx, k=neighborhood, circular=circular), 1.0
        else:
            lam = default_decay(period) if decay is None else decay
            raw, test_w = exp_local_weights(ctx, lam=lam, circular=circular), lam
    elif method is Method.KNN:
        k = max(1, n // 2) if knn_k is None else knn_k
        raw, test_w = knn_weights(cal_features, test_features, k, standardize), 1.0
    elif method is Method.FEAT_DIST_POINT:
        raw = feat_dist_weights(cal_features, test_features, standardize)
        test_w = float(raw.max()) if raw.any() else 1.0
    else:
        raise ValueError(f"{method} is not a weighting scheme")
    if recency_periods is not None:
        raw = recency_filter(raw, n, period, recency_periods)
    return raw, test_w


class WeightedConformalRegressor(RegressorMixin, BaseEstimator):
    """Split conformal regression with locality weights on the calibration scores.

    Calibration rows are assumed to be contiguous in time and immediately
    followed by the rows passed to :meth:`predict_interval`.

    Parameters
    ----------
    estimator : regressor, optional
    scheme : str
        One of ``BinaryPoint``, ``BinaryLocal``, ``ExpLocal``, ``KNN`` or
        ``FeatDistPoint``.
    period : int
    alpha : float
    neighborhood, decay, knn_k, recency_periods, circular, standardize
        Scheme settings; ``None`` picks the documented defaults.
    """

    def __init__(
        self,
        estimator=None,
        scheme="BinaryPoint",
        period=2,
        alpha=0.1,
        neighborhood=1,
        decay=None,
        knn_k=None,
        recency_periods=None,
        circular=True,
        standardize=False,
    ):
        self.estimator = estimator
        self.scheme = scheme
        self.period = period
        self.alpha = alpha
        self.neighborhood = neighborhood
        self.decay = decay
        self.knn_k = knn_k
        self.recency_periods = recency_periods
        self.circular = circular
        self.standardize = standardize

    def fit(self, X, y, X_cal=None, y_cal=None, cal_features=None):
        X, y = check_X_y(X, y, ensure_min_features=0)
        if X_cal is None or y_cal is None:
            raise ValueError("weighted conformal regression needs a calibration set")
        X_cal, y_cal = check_X_y(X_cal, y_cal, ensure_min_features=0)
        self.method_ = Method.parse(self.scheme)
        if self.method_ not in POSITION_SCHEMES | FEATURE_SCHEMES:
            raise ValueError(f"{self.scheme} is not a weighting scheme")
        self.estimator_ = clone(self.estimator if self.estimator is not None else LagLinearRegressor()).fit(X, y)
        self.conformity_scores_ = residual_scores(self.estimator_.predict(X_cal), y_cal)
        self.cal_features_ = X_cal if cal_features is None else np.asarray(cal_features, float)
        return self

    def predict(self, X):
        check_is_fitted(self, "estimator_")
        return self.estimator_.predict(check_array(X, ensure_min_features=0))

    def predict_interval(self, X, alpha=None, features=None, return_flags=False):
        """Per-row intervals; row ``j`` (0-based) is step ``j + 1`` after calibration."""
        pred = self.predict(X)
        alpha = self.alpha if alpha is None else alpha
        feats = np.asarray(X if features is None else features, float)
        n = len(self.conformity_scores_)
        lower, upper = np.empty(len(pred)), np.empty(len(pred))
        flags = np.zeros(len(pred), bool)
        cache = {}
        for j in range(len(pred)):
            if self.method_ in POSITION_SCHEMES:
                key = (n + j + 1) % self.period
                if key not in cache:
                    cache[key] = self._half_width(n, j + 1, alpha, None)
                half, empty = cache[key]
            else:
                half, empty = self._half_width(n, j + 1, alpha, feats[j])
            lower[j], upper[j] = pred[j] - half, pred[j] + half
            flags[j] = empty
        if flags.any():
            warnings.warn(f"{int(flags.sum())} steps had no calibration point selected", EmptySelectionWarning, stacklevel=2)
        pis = np.column_stack([lower, upper])
        return (pred, pis, flags) if return_flags else (pred, pis)

    def _half_width(self, n, step, alpha, test_features):
        raw, test_w = scheme_weights(
            self.method_,
            n,
            step,
            self.period,
            neighborhood=self.neighborhood,
            decay=self.decay,
            knn_k=self.knn_k,
            recency_periods=self.recency_periods,
            circular=self.circular,
            cal_features=self.cal_features_,
            test_features=test_features,
            standardize=self.standardize,
        )
        lo, hi, empty = weighted_interval(self.conformity_scores_, raw, alpha, 0.0, test_w)
        return hi, empty

    def to_intervals(self, X, alpha=None, features=None, component=Component.SEASONAL):
        pred, pis, flags = self.predict_interval(X, alpha, features, return_flags=True)
        return pred, IntervalSeries(pis[:, 0], pis[:, 1], component, flags)
