"""Sequential conformal methods for non-exchangeable streams: EnbPI and ACI."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .conformal import WeightedScoreSet, residual_scores, weighted_quantile
from .exceptions import LengthMismatch, TooFewRows
from .regressors import BootstrapEnsemble, LagLinearRegressor, LagMatrix, bootstrap_fit, lag_design
from .types import Component, IntervalSeries


def empirical_quantile(scores, level: float) -> float:
    """Smallest score whose empirical CDF reaches ``level`` (no test mass)."""
    if level >= 1:
        return float(np.max(scores))
    return float(np.quantile(np.asarray(scores, float), level, method="inverted_cdf"))


@dataclass(eq=False)
class EnbpiState:
    """Fitted ensemble plus the rolling window of scores.

    ``window`` holds at most ``capacity`` scores; once full, every new score
    evicts the oldest one.
    """

    ensemble: BootstrapEnsemble
    window: deque
    capacity: int
    window_length: int = 1

    @classmethod
    def from_scores(cls, ensemble, scores, window_length=1, capacity=None) -> "EnbpiState":
        scores = [float(s) for s in scores]
        capacity = len(scores) if capacity is None else int(capacity)
        return cls(ensemble, deque(scores[-capacity:], maxlen=capacity), capacity, window_length)

    def push(self, score: float) -> None:
        self.window.append(float(score))

    def quantile(self, alpha: float) -> float:
        return empirical_quantile(np.fromiter(self.window, float), 1 - alpha)


def enbpi_fit(lm: LagMatrix, n_bootstraps=20, seed=None, estimator=None, window_length=1) -> EnbpiState:
    """Fit the bootstrap ensemble and seed the window with leave-one-out scores."""
    ensemble = bootstrap_fit(lm, n_bootstraps=n_bootstraps, seed=seed, estimator=estimator)
    scores = residual_scores(ensemble.out_of_bag_predictions(lm.X), lm.y)
    return EnbpiState.from_scores(ensemble, scores, window_length=window_length)


def enbpi_predict(state: EnbpiState, X_test, y_test, alpha: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Roll the state over a test stream.

    Returns point predictions, lower and upper bounds. ``state`` is updated in
    place with the observed test scores.
    """
    X_test = np.asarray(X_test, float)
    y_test = np.asarray(y_test, float)
    if len(X_test) != len(y_test):
        raise LengthMismatch(f"{len(X_test)} test rows for {len(y_test)} actuals")
    preds = state.ensemble.predict(X_test) if len(X_test) else np.empty(0)
    half = np.empty(len(preds))
    q = math.nan
    for t in range(len(preds)):
        if t % state.window_length == 0:
            q = state.quantile(alpha)
        half[t] = q
        state.push(abs(y_test[t] - preds[t]))
    return preds, preds - half, preds + half


def enbpi_run(
    values,
    lag_order: int,
    n_bootstraps: int = 20,
    alpha: float = 0.1,
    seed=None,
    fit_end: Optional[int] = None,
    features=None,
    window_length: int = 1,
    estimator=None,
) -> Tuple[np.ndarray, IntervalSeries]:
    """EnbPI over one series.

    The first ``fit_end`` values (default three quarters) train the
    ensemble; intervals cover the remaining steps.

    Returns
    -------
    predictions : ndarray
    intervals : IntervalSeries
    """
    values = np.asarray(values, float)
    fit_end = int(round(0.75 * len(values))) if fit_end is None else int(fit_end)
    lm = lag_design(values, lag_order, features)
    fit_lm, test_lm = lm.between(0, fit_end), lm.between(fit_end, len(values))
    if len(fit_lm) < 2:
        raise TooFewRows("EnbPI needs at least two fit rows")
    state = enbpi_fit(fit_lm, n_bootstraps, seed, estimator, window_length)
    preds, lower, upper = enbpi_predict(state, test_lm.X, test_lm.y, alpha)
    return preds, IntervalSeries(lower, upper, Component.RAW)


@dataclass(frozen=True, eq=False)
class AciState:
    """ACI state.

    ``alpha_t`` is recomputed from the step and miss counters, so the
    telescoped form of the update holds without accumulated rounding.
    """

    alpha_0: float
    alpha_target: float
    gamma: float
    cal_scores: WeightedScoreSet
    n_steps: int = 0
    n_misses: int = 0
    history: Tuple[Tuple[float, bool], ...] = ()

    @classmethod
    def start(cls, cal_scores, alpha: float, gamma: float = 0.01, alpha_0: Optional[float] = None) -> "AciState":
        cal_scores = np.asarray(cal_scores, float)
        if cal_scores.size == 0:
            raise TooFewRows("ACI needs calibration scores")
        wss = WeightedScoreSet.from_raw(cal_scores)
        return cls(alpha if alpha_0 is None else alpha_0, alpha, gamma, wss)

    @property
    def alpha_t(self) -> float:
        return self.alpha_0 + self.gamma * (self.n_steps * self.alpha_target - self.n_misses)

    def half_width(self) -> float:
        """Interval half-width at the current level; ``inf`` if ``alpha_t <= 0``, 0 if ``>= 1``."""
        a = self.alpha_t
        # a positive alpha_t below half an ulp of 1 still means level 1
        if a <= 0 or 1 - a >= 1:
            return math.inf
        if a >= 1:
            return 0.0
        return weighted_quantile(self.cal_scores, 1 - a)


def aci_step(state: AciState, covered: bool) -> AciState:
    """``alpha_{t+1} = alpha_t + gamma * (alpha - 1[miss])``.

    >>> s = aci_step(AciState.start([1.0], 0.1, 0.01), covered=False)
    >>> round(s.alpha_t, 12)
    0.091
    """
    miss = not covered
    return replace(
        state,
        n_steps=state.n_steps + 1,
        n_misses=state.n_misses + int(miss),
        history=state.history + ((state.alpha_t, bool(covered)),),
    )


def aci_run(cal_scores, test_predictions, test_actuals, alpha: float, gamma: float = 0.01):
    """Run ACI over a test stream with fixed calibration scores.

    Returns
    -------
    intervals : IntervalSeries
    trace : ndarray of shape (n_test + 1,)
        ``alpha_t`` before each step, followed by the final level.
    state : AciState
    """
    preds = np.asarray(test_predictions, float)
    actuals = np.asarray(test_actuals, float)
    if preds.shape != actuals.shape:
        raise LengthMismatch(f"{len(preds)} predictions for {len(actuals)} actuals")
    state = AciState.start(cal_scores, alpha, gamma)
    n = len(preds)
    lower, upper = np.empty(n), np.empty(n)
    # history is built once at the end instead of being copied every step
    n_miss = 0
    trace = np.empty(n + 1)
    for t in range(n):
        cur = replace(state, n_steps=t, n_misses=n_miss)
        trace[t] = cur.alpha_t
        h = cur.half_width()
        lower[t], upper[t] = preds[t] - h, preds[t] + h
        if not (lower[t] <= actuals[t] <= upper[t]):
            n_miss += 1
    final = replace(state, n_steps=n, n_misses=n_miss)
    trace[n] = final.alpha_t
    covered = (lower <= actuals) & (actuals <= upper)
    final = replace(final, history=tuple(zip(trace[:-1].tolist(), covered.tolist())))
    return IntervalSeries(lower, upper, Component.RAW), trace, final


class EnbPIRegressor(RegressorMixin, BaseEstimator):
    """Ensemble batch prediction intervals with a rolling score window.

    Parameters
    ----------
    estimator : regressor, optional
        Base model, cloned for each bootstrap member. Defaults to
        :class:`LagLinearRegressor`.
    n_bootstraps : int
    alpha : float
    window_length : int
        Steps between quantile recomputations.
    random_state : int or None
    """

    def __init__(self, estimator=None, n_bootstraps=20, alpha=0.1, window_length=1, random_state=None):
        self.estimator = estimator
        self.n_bootstraps = n_bootstraps
        self.alpha = alpha
        self.window_length = window_length
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_min_features=0)
        lm = LagMatrix(X, y, np.arange(len(y)), 0)
        self.state_ = enbpi_fit(lm, self.n_bootstraps, self.random_state, self.estimator, self.window_length)
        return self

    def predict(self, X):
        check_is_fitted(self, "state_")
        return self.state_.ensemble.predict(check_array(X, ensure_min_features=0))

    def predict_interval(self, X, y=None, alpha=None):
        """Intervals for ``X``.

        With ``y`` the window rolls forward through the observed targets;
        without it every row gets the current window quantile.
        """
        check_is_fitted(self, "state_")
        X = check_array(X, ensure_min_features=0)
        alpha = self.alpha if alpha is None else alpha
        if y is None:
            pred = self.predict(X)
            q = self.state_.quantile(alpha)
            return pred, np.column_stack([pred - q, pred + q])
        pred, lower, upper = enbpi_predict(self.state_, X, np.asarray(y, float), alpha)
        return pred, np.column_stack([lower, upper])


class ACIRegressor(RegressorMixin, BaseEstimator):
    """Adaptive conformal inference around a point regressor."""

    def __init__(self, estimator=None, alpha=0.1, gamma=0.01):
        self.estimator = estimator
        self.alpha = alpha
        self.gamma = gamma

    def fit(self, X, y, X_cal=None, y_cal=None):
        X, y = check_X_y(X, y, ensure_min_features=0)
        if X_cal is None or y_cal is None:
            raise ValueError("ACI needs a calibration set")
        X_cal, y_cal = check_X_y(X_cal, y_cal, ensure_min_features=0)
        self.estimator_ = clone(self.estimator if self.estimator is not None else LagLinearRegressor()).fit(X, y)
        self.conformity_scores_ = residual_scores(self.estimator_.predict(X_cal), y_cal)
        return self

    def predict(self, X):
        check_is_fitted(self, "estimator_")
        return self.estimator_.predict(check_array(X, ensure_min_features=0))

    def predict_interval(self, X, y=None, alpha=None):
        """Without ``y`` the level stays at ``alpha``; with ``y`` it adapts step by step."""
        pred = self.predict(X)
        alpha = self.alpha if alpha is None else alpha
        if y is None:
            q = AciState.start(self.conformity_scores_, alpha, self.gamma).half_width()
            return pred, np.column_stack([pred - q, pred + q])
        intervals, trace, _ = aci_run(self.conformity_scores_, pred, y, alpha, self.gamma)
        self.alpha_trace_ = trace
        return pred, np.column_stack([intervals.lower, intervals.upper])
