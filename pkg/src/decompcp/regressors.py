"""Autoregressive design matrices, the ridge-regularised linear model and bootstrap ensembles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import CoverageFailure, DimensionMismatch, SeriesTooShort, SingularDesign


@dataclass(frozen=True, eq=False)
class LagMatrix:
    """Design matrix whose row ``r`` predicts ``values[origin_index[r]]``.

    Columns are ``y[t-k], ..., y[t-1]`` followed by any exogenous features
    observed at ``t``. ``origin_index`` is 0-based.
    """

    X: np.ndarray
    y: np.ndarray
    origin_index: np.ndarray
    lag_order: int

    def __len__(self):
        return len(self.y)

    def rows(self, mask_or_slice) -> "LagMatrix":
        return LagMatrix(self.X[mask_or_slice], self.y[mask_or_slice], self.origin_index[mask_or_slice], self.lag_order)

    def between(self, start: int, stop: int) -> "LagMatrix":
        """Rows whose target time lies in ``[start, stop)``."""
        keep = (self.origin_index >= start) & (self.origin_index < stop)
        return self.rows(keep)


def build_lag_features(values, lag_order: int, features=None) -> LagMatrix:
    """Autoregressive design for one-step-ahead prediction.

    Examples
    --------
    >>> lm = build_lag_features([1, 2, 3, 4], 2)
    >>> lm.X.tolist(), lm.y.tolist()
    ([[1.0, 2.0], [2.0, 3.0]], [3.0, 4.0])
    """
    if lag_order < 1:
        raise ValueError(f"lag_order must be >= 1, got {lag_order}")
    return lag_design(values, lag_order, features)


def lag_design(values, lag_order: int, features=None) -> LagMatrix:
    """Like :func:`build_lag_features` but ``lag_order=0`` gives an intercept-only design."""
    values = np.asarray(values, float).ravel()
    if lag_order < 0:
        raise ValueError(f"lag_order must be >= 0, got {lag_order}")
    if len(values) <= lag_order:
        raise SeriesTooShort(f"{len(values)} values for lag order {lag_order}")
    n = len(values) - lag_order
    if lag_order:
        windows = np.lib.stride_tricks.sliding_window_view(values, lag_order)[:n]
        X = np.array(windows, dtype=float)
    else:
        X = np.empty((n, 0))
    if features is not None:
        feats = np.asarray(features, float)
        if feats.ndim == 1:
            feats = feats[:, None]
        if feats.shape[0] != len(values):
            raise DimensionMismatch(f"features have {feats.shape[0]} rows for {len(values)} values")
        X = np.hstack([X, feats[lag_order:]])
    return LagMatrix(X=X, y=values[lag_order:].copy(), origin_index=np.arange(lag_order, len(values)), lag_order=lag_order)


@dataclass(frozen=True, eq=False)
class LinearModel:
    coefficients: np.ndarray
    intercept: float
    ridge_penalty: float = 0.0

    @property
    def n_features(self) -> int:
        return len(self.coefficients)


def _solve_normal(X, y, ridge_penalty):
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} rows but {y.shape[0]} targets")
    if X.shape[0] == 0:
        raise ValueError("cannot fit a model on zero rows")
    y_mean = y.mean()
    if X.shape[1] == 0:
        return np.empty(0), float(y_mean)
    x_mean = X.mean(axis=0)
    Xc = X - x_mean
    gram = Xc.T @ Xc
    if ridge_penalty > 0:
        gram = gram + ridge_penalty * np.eye(X.shape[1])
    rhs = Xc.T @ (y - y_mean)
    try:
        factor = linalg.cho_factor(gram, check_finite=False)
        beta = linalg.cho_solve(factor, rhs, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularDesign("normal equations are not positive definite; use ridge_penalty > 0") from exc
    if ridge_penalty == 0 and np.linalg.cond(gram) > 1e13:
        raise SingularDesign("design is rank-deficient; use ridge_penalty > 0")
    return beta, float(y_mean - x_mean @ beta)


def fit_linear(lm: LagMatrix, ridge_penalty: float = 1e-6) -> LinearModel:
    """Least squares with an unpenalised intercept and an L2 penalty on the slopes."""
    if ridge_penalty < 0:
        raise ValueError("ridge_penalty must be nonnegative")
    beta, intercept = _solve_normal(lm.X, lm.y, ridge_penalty)
    return LinearModel(coefficients=beta, intercept=intercept, ridge_penalty=ridge_penalty)


def predict(model: LinearModel, x) -> np.ndarray:
    """``intercept + x @ coefficients`` for a single row or a matrix of rows."""
    x = np.asarray(x, float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != model.n_features:
        raise DimensionMismatch(f"model has {model.n_features} features, input has {X.shape[1]}")
    out = model.intercept + X @ model.coefficients
    return float(out[0]) if single else out


def fit_difference_model(values, lag_order: int, ridge_penalty: float = 1e-6) -> Tuple[LinearModel, float]:
    """Fit an AR model on first differences; returns the model and the last level."""
    values = np.asarray(values, float).ravel()
    if len(values) < lag_order + 2:
        raise SeriesTooShort(f"{len(values)} values for differenced lag order {lag_order}")
    model = fit_linear(lag_design(np.diff(values), lag_order), ridge_penalty)
    return model, float(values[-1])


def predict_undifferenced(model: LinearModel, history) -> float:
    """One-step level forecast ``y[t-1] + predicted difference`` from a level history."""
    history = np.asarray(history, float).ravel()
    k = model.n_features
    if len(history) < k + 1:
        raise SeriesTooShort(f"need {k + 1} past levels, got {len(history)}")
    diffs = np.diff(history)
    x = diffs[len(diffs) - k :] if k else np.empty(0)
    return float(history[-1] + predict(model, x))


def undifference(first_value: float, diffs) -> np.ndarray:
    return np.concatenate(([first_value], first_value + np.cumsum(diffs)))


class LagLinearRegressor(RegressorMixin, BaseEstimator):
    """Scikit-learn regressor backed by :func:`fit_linear`.

    Accepts a design with zero columns, in which case it predicts the
    training mean.
    """

    def __init__(self, ridge_penalty=1e-6):
        self.ridge_penalty = ridge_penalty

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_min_features=0, y_numeric=True)
        beta, intercept = _solve_normal(X, y, self.ridge_penalty)
        self.coef_ = beta
        self.intercept_ = intercept
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, ensure_min_features=0)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"model has {self.n_features_in_} features, input has {X.shape[1]}")
        return self.intercept_ + X @ self.coef_

    def to_model(self) -> LinearModel:
        check_is_fitted(self, "coef_")
        return LinearModel(self.coef_.copy(), self.intercept_, self.ridge_penalty)


@dataclass(eq=False)
class BootstrapEnsemble:
    models: List
    in_bag_masks: np.ndarray
    seed: Optional[int]

    @property
    def n_models(self) -> int:
        return len(self.models)

    def predict_all(self, X) -> np.ndarray:
        """Predictions of every member, shape ``(B, n_rows)``."""
        return np.vstack([m.predict(X) for m in self.models])

    def predict(self, X) -> np.ndarray:
        return self.predict_all(X).mean(axis=0)

    def out_of_bag_predictions(self, X) -> np.ndarray:
        """Mean over the members that did not see each row."""
        preds = self.predict_all(X)
        oob = ~self.in_bag_masks
        counts = oob.sum(axis=0)
        return (preds * oob).sum(axis=0) / np.maximum(counts, 1)


def bootstrap_fit(
    lm: LagMatrix,
    n_bootstraps: int = 20,
    seed: Optional[int] = None,
    estimator=None,
    max_retries: int = 50,
) -> BootstrapEnsemble:
    """Fit ``n_bootstraps`` models on with-replacement row resamples.

    The whole set of resamples is redrawn until every row is out-of-bag for
    at least one model.

    Raises
    ------
    CoverageFailure
        If ``max_retries`` redraws never achieve that.
    """
    if n_bootstraps < 2:
        raise ValueError("n_bootstraps must be >= 2")
    n = len(lm)
    if n == 0:
        raise ValueError("cannot bootstrap an empty design")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        draws = rng.integers(0, n, size=(n_bootstraps, n))
        masks = np.zeros((n_bootstraps, n), dtype=bool)
        np.put_along_axis(masks, draws, True, axis=1)
        if (~masks).any(axis=0).all():
            break
    else:
        raise CoverageFailure(f"some row stayed in-bag for all {n_bootstraps} models after {max_retries} draws")
    base = estimator if estimator is not None else LagLinearRegressor()
    models = [clone(base).fit(lm.X[d], lm.y[d]) for d in draws]
    return BootstrapEnsemble(models=models, in_bag_masks=masks, seed=seed)
