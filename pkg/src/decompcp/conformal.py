"""Nonconformity scores, the weighted conformal quantile, split CP and CV+.

Every conformal method in the package reduces to :func:`weighted_quantile`
over a score set that carries an extra point mass at ``+inf`` for the test
sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import AllZeroWeights, LengthMismatch, TooFewRows
from .regressors import LagLinearRegressor, LagMatrix

# cumulative weights within this distance of the target level count as reaching it
LEVEL_TOL = 1e-10


def residual_scores(predictions, actuals) -> np.ndarray:
    """Absolute residuals ``|prediction - actual|``."""
    predictions = np.asarray(predictions, float)
    actuals = np.asarray(actuals, float)
    if predictions.shape != actuals.shape:
        raise LengthMismatch(f"{predictions.shape} predictions vs {actuals.shape} actuals")
    return np.abs(predictions - actuals)


def normalize_weights(raw) -> np.ndarray:
    """Scale nonnegative weights (calibration points then the test point) to sum to one."""
    raw = np.asarray(raw, float)
    if np.any(raw < 0) or np.any(~np.isfinite(raw)):
        raise ValueError("weights must be finite and nonnegative")
    total = raw.sum()
    if total <= 0:
        raise AllZeroWeights("all weights are zero")
    return raw / total


@dataclass(frozen=True, eq=False)
class WeightedScoreSet:
    """Scores ``s_1..s_n`` with weights ``w_1..w_n, w_{n+1}``; the last weight sits at ``+inf``."""

    scores: np.ndarray
    weights: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        scores = np.asarray(self.scores, float).ravel()
        weights = np.asarray(self.weights, float).ravel()
        if len(weights) != len(scores) + 1:
            raise LengthMismatch(f"{len(scores)} scores need {len(scores) + 1} weights, got {len(weights)}")
        if np.any(~np.isfinite(scores)) or np.any(scores < 0):
            raise ValueError("scores must be finite and nonnegative")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        if self.normalized and abs(weights.sum() - 1) > 1e-12 * max(1, len(weights)):
            raise ValueError(f"normalized weights sum to {weights.sum()!r}")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_raw(cls, scores, raw_weights=None, test_weight: Optional[float] = None) -> "WeightedScoreSet":
        """Normalise raw weights.

        ``raw_weights`` has ``n`` or ``n + 1`` entries; with ``n`` entries the
        test mass is ``test_weight`` (default 1, the uniform case).
        """
        scores = np.asarray(scores, float).ravel()
        n = len(scores)
        if raw_weights is None:
            raw = np.ones(n + 1)
            if test_weight is not None:
                raw[-1] = test_weight
        else:
            raw = np.asarray(raw_weights, float).ravel()
            if len(raw) == n:
                raw = np.append(raw, 1.0 if test_weight is None else test_weight)
        return cls(scores, normalize_weights(raw), normalized=True)

    @property
    def n(self) -> int:
        return len(self.scores)

    @property
    def test_mass(self) -> float:
        return float(self.weights[-1])


def weighted_quantile(wss: WeightedScoreSet, level: float) -> float:
    """Smallest score whose cumulative weight reaches ``level``; ``inf`` if only the test mass does.

    Examples
    --------
    >>> weighted_quantile(WeightedScoreSet.from_raw([1, 2, 3, 4]), 0.8)
    4.0
    >>> weighted_quantile(WeightedScoreSet([1.0], [0.5, 0.5]), 0.9)
    inf
    """
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if not wss.normalized:
        wss = WeightedScoreSet.from_raw(wss.scores, wss.weights)
    w = wss.weights[:-1]
    keep = w > 0
    scores = wss.scores[keep]
    if scores.size == 0:
        return math.inf
    order = np.argsort(scores, kind="stable")
    cum = np.cumsum(w[keep][order])
    idx = int(np.searchsorted(cum, level - LEVEL_TOL, side="left"))
    if idx >= len(cum):
        return math.inf
    return float(scores[order][idx])


def conformal_rank(n: int, level: float) -> int:
    """``ceil(level * (n + 1))``, robust to rounding in ``level``."""
    return int(math.ceil(level * (n + 1) - 1e-9))


def split_cp_quantile(cal_scores, alpha: float) -> float:
    return weighted_quantile(WeightedScoreSet.from_raw(cal_scores), 1 - alpha)


def split_cp_interval(cal_scores, alpha: float, prediction):
    """Symmetric split-conformal interval ``prediction -/+ q``.

    ``q`` is the ``ceil((n+1)(1-alpha))``-th smallest calibration score, or
    ``inf`` when that rank exceeds ``n``.
    """
    if len(cal_scores) < 1:
        raise TooFewRows("split CP needs at least one calibration score")
    q = split_cp_quantile(cal_scores, alpha)
    prediction = np.asarray(prediction, float)
    lower, upper = prediction - q, prediction + q
    if prediction.ndim == 0:
        return float(lower), float(upper)
    return lower, upper


def _contiguous_folds(n: int, n_folds: int, shuffle=False, seed=None):
    idx = np.arange(n)
    if shuffle:
        idx = np.random.default_rng(seed).permutation(n)
    return np.array_split(idx, n_folds)


def cv_plus_bounds(fold_preds, fold_of_row, residuals, alpha: float) -> Tuple[np.ndarray, np.ndarray]:
    """CV+ bounds from per-fold test predictions.

    Parameters
    ----------
    fold_preds : ndarray of shape (K, m)
        Prediction of each fold model at each of ``m`` test points.
    fold_of_row : ndarray of shape (N,)
        Fold that held out each training row.
    residuals : ndarray of shape (N,)
        Out-of-fold absolute residuals.
    """
    n = len(residuals)
    per_row = np.asarray(fold_preds)[fold_of_row]  # (N, m)
    k_lo = int(math.floor(alpha * (n + 1) + 1e-9))
    k_hi = conformal_rank(n, 1 - alpha)
    m = per_row.shape[1]
    if k_lo < 1:
        lower = np.full(m, -np.inf)
    else:
        lower = np.partition(per_row - residuals[:, None], k_lo - 1, axis=0)[k_lo - 1]
    if k_hi > n:
        upper = np.full(m, np.inf)
    else:
        upper = np.partition(per_row + residuals[:, None], k_hi - 1, axis=0)[k_hi - 1]
    return lower, upper


def cv_plus_interval(lag_matrix: LagMatrix, n_folds: int, alpha: float, x_test, seed=None, estimator=None, shuffle=False):
    """CV+ interval(s) for ``x_test`` from ``n_folds`` contiguous folds of ``lag_matrix``.

    Returns ``(lower, upper)``; floats for a single row, arrays otherwise.
    """
    reg = CVPlusRegressor(estimator=estimator, n_folds=n_folds, alpha=alpha, shuffle=shuffle, random_state=seed)
    reg.fit(lag_matrix.X, lag_matrix.y)
    x_test = np.asarray(x_test, float)
    single = x_test.ndim == 1
    _, pis = reg.predict_interval(x_test[None, :] if single else x_test)
    if single:
        return float(pis[0, 0]), float(pis[0, 1])
    return pis[:, 0], pis[:, 1]


class SplitConformalRegressor(RegressorMixin, BaseEstimator):
    """Split conformal regression around any scikit-learn regressor."""

    def __init__(self, estimator=None, alpha=0.1):
        self.estimator = estimator
        self.alpha = alpha

    def fit(self, X, y, X_cal=None, y_cal=None):
        X, y = check_X_y(X, y, ensure_min_features=0)
        if X_cal is None or y_cal is None:
            raise ValueError("split conformal needs a calibration set")
        X_cal, y_cal = check_X_y(X_cal, y_cal, ensure_min_features=0)
        self.estimator_ = clone(self.estimator if self.estimator is not None else LagLinearRegressor()).fit(X, y)
        self.conformity_scores_ = residual_scores(self.estimator_.predict(X_cal), y_cal)
        return self

    def predict(self, X):
        check_is_fitted(self, "estimator_")
        return self.estimator_.predict(check_array(X, ensure_min_features=0))

    def predict_interval(self, X, alpha=None):
        pred = self.predict(X)
        lower, upper = split_cp_interval(self.conformity_scores_, self.alpha if alpha is None else alpha, pred)
        return pred, np.column_stack([lower, upper])


class CVPlusRegressor(RegressorMixin, BaseEstimator):
    """CV+ (cross-conformal) regression.

    Folds are contiguous blocks of rows unless ``shuffle`` is set, so that
    temporal order inside each fold is preserved. ``n_folds`` equal to the
    number of rows gives the jackknife+.
    """

    def __init__(self, estimator=None, n_folds=20, alpha=0.1, shuffle=False, random_state=None):
        self.estimator = estimator
        self.n_folds = n_folds
        self.alpha = alpha
        self.shuffle = shuffle
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_min_features=0)
        n = len(y)
        if self.n_folds < 2:
            raise ValueError("n_folds must be >= 2")
        if n < self.n_folds:
            raise TooFewRows(f"{n} rows for {self.n_folds} folds")
        base = self.estimator if self.estimator is not None else LagLinearRegressor()
        folds = _contiguous_folds(n, self.n_folds, self.shuffle, self.random_state)
        self.fold_of_row_ = np.empty(n, dtype=int)
        self.estimators_ = []
        residuals = np.empty(n)
        for k, held_out in enumerate(folds):
            keep = np.ones(n, bool)
            keep[held_out] = False
            model = clone(base).fit(X[keep], y[keep])
            self.estimators_.append(model)
            self.fold_of_row_[held_out] = k
            residuals[held_out] = np.abs(y[held_out] - model.predict(X[held_out]))
        self.residuals_ = residuals
        return self

    def _fold_predictions(self, X):
        check_is_fitted(self, "estimators_")
        X = check_array(X, ensure_min_features=0)
        return np.vstack([m.predict(X) for m in self.estimators_])

    def predict(self, X):
        return self._fold_predictions(X).mean(axis=0)

    def predict_interval(self, X, alpha=None):
        fold_preds = self._fold_predictions(X)
        lower, upper = cv_plus_bounds(fold_preds, self.fold_of_row_, self.residuals_, self.alpha if alpha is None else alpha)
        return fold_preds.mean(axis=0), np.column_stack([lower, upper])
