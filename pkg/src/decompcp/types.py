"""Shared value types: series, splits, decompositions, intervals and method configs."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from enum import Enum
from typing import Optional

import numpy as np

from .exceptions import EmptySeries, LengthMismatch, PeriodTooLarge


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class Component(str, Enum):
    TREND = "trend"
    SEASONAL = "seasonal"
    REMAINDER = "remainder"
    RECOMPOSED = "recomposed"
    RAW = "raw"


class Method(str, Enum):
    ENBPI = "EnbPI"
    ACI = "ACI"
    CVPLUS = "CVPlus"
    BINARY_POINT = "BinaryPoint"
    BINARY_LOCAL = "BinaryLocal"
    EXP_LOCAL = "ExpLocal"
    KNN = "KNN"
    FEAT_DIST_POINT = "FeatDistPoint"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        key = str(value).replace("+", "Plus").replace("-", "").replace("_", "").lower()
        for member in cls:
            if member.value.lower() == key or member.name.replace("_", "").lower() == key:
                return member
        raise ValueError(f"unknown conformal method {value!r}")

    def __str__(self):
        return self.value


TREND_METHODS = frozenset({Method.ENBPI, Method.ACI})
SEASON_METHODS = frozenset(
    {
        Method.ENBPI,
        Method.ACI,
        Method.BINARY_POINT,
        Method.BINARY_LOCAL,
        Method.EXP_LOCAL,
        Method.KNN,
        Method.FEAT_DIST_POINT,
    }
)
REMAINDER_METHODS = frozenset({Method.ENBPI, Method.ACI, Method.CVPLUS})
RAW_METHODS = frozenset({Method.ENBPI, Method.ACI, Method.CVPLUS})


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Gap-free univariate series with a declared seasonal period.

    ``time_index`` defaults to ``1..T``. ``features`` is an optional
    ``(T, d)`` matrix of exogenous covariates.
    """

    values: np.ndarray
    period: int
    features: Optional[np.ndarray] = None
    time_index: Optional[np.ndarray] = None
    name: str = "series"

    def __post_init__(self):
        values = _frozen_array(np.ravel(self.values))
        object.__setattr__(self, "values", values)
        if self.time_index is None:
            object.__setattr__(self, "time_index", _frozen_array(np.arange(1, len(values) + 1), int))
        else:
            object.__setattr__(self, "time_index", _frozen_array(self.time_index, int))
        if self.features is not None:
            feats = np.asarray(self.features, dtype=float)
            if feats.ndim == 1:
                feats = feats[:, None]
            object.__setattr__(self, "features", _frozen_array(feats))
        object.__setattr__(self, "period", int(self.period))

    def __len__(self):
        return len(self.values)

    @property
    def n_features(self) -> int:
        return 0 if self.features is None else self.features.shape[1]


def validate_series(series: TimeSeries, require_decomposable: bool = True) -> TimeSeries:
    """Check the invariants of ``series`` and return it unchanged.

    Raises
    ------
    EmptySeries
        If the series has no observations.
    LengthMismatch
        If the time index or feature matrix disagree with the value length.
    PeriodTooLarge
        If ``require_decomposable`` and the period exceeds ``T / 2``.
    """
    n = len(series.values)
    if n == 0:
        raise EmptySeries("series has no observations")
    if len(series.time_index) != n:
        raise LengthMismatch(f"time_index has {len(series.time_index)} entries, values has {n}")
    if series.features is not None and series.features.shape[0] != n:
        raise LengthMismatch(f"features have {series.features.shape[0]} rows, values has {n}")
    if not np.all(np.isfinite(series.values)):
        raise ValueError("series values must be finite")
    if series.period < 1:
        raise ValueError(f"period must be positive, got {series.period}")
    if require_decomposable:
        if series.period < 2:
            raise ValueError(f"period must be >= 2 for decomposition, got {series.period}")
        if series.period > n / 2:
            raise PeriodTooLarge(f"period {series.period} exceeds half the series length ({n})")
    return series


@dataclass(frozen=True)
class SplitSpec:
    """Contiguous train/calibration/test split.

    Ends are 1-based inclusive, so in Python slices the ranges are
    ``[0:train_end]``, ``[train_end:cal_end]`` and ``[cal_end:n_total]``.
    """

    train_end: int
    cal_end: int
    n_total: int

    def __post_init__(self):
        if not 1 <= self.train_end < self.cal_end < self.n_total:
            raise ValueError(
                f"need 1 <= train_end < cal_end < T, got {self.train_end}, {self.cal_end}, {self.n_total}"
            )

    @classmethod
    def from_fractions(cls, n_total: int, train: float = 0.5, cal: float = 0.25) -> "SplitSpec":
        if not (0 < train and 0 < cal and train + cal < 1):
            raise ValueError(f"invalid split fractions train={train}, cal={cal}")
        train_end = int(round(n_total * train))
        cal_end = int(round(n_total * (train + cal)))
        return cls(train_end, cal_end, n_total)

    @property
    def train(self) -> slice:
        return slice(0, self.train_end)

    @property
    def cal(self) -> slice:
        return slice(self.train_end, self.cal_end)

    @property
    def test(self) -> slice:
        return slice(self.cal_end, self.n_total)

    @property
    def n_cal(self) -> int:
        return self.cal_end - self.train_end

    @property
    def n_test(self) -> int:
        return self.n_total - self.cal_end


@dataclass(frozen=True, eq=False)
class DecompositionResult:
    trend: np.ndarray
    seasonal: np.ndarray
    remainder: np.ndarray

    def __post_init__(self):
        for name in ("trend", "seasonal", "remainder"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        if not (len(self.trend) == len(self.seasonal) == len(self.remainder)):
            raise LengthMismatch("decomposition components differ in length")

    def __len__(self):
        return len(self.trend)

    def reconstruct(self) -> np.ndarray:
        return self.trend + self.seasonal + self.remainder

    def component(self, label) -> np.ndarray:
        return getattr(self, Component(label).value)


@dataclass(frozen=True, eq=False)
class IntervalSeries:
    """Pointwise prediction interval bounds.

    Infinite bounds are allowed; ``flags`` marks steps where a weighting
    scheme had nothing to calibrate on.
    """

    lower: np.ndarray
    upper: np.ndarray
    component: Component = Component.RAW
    flags: Optional[np.ndarray] = None

    def __post_init__(self):
        lower = _frozen_array(np.ravel(self.lower))
        upper = _frozen_array(np.ravel(self.upper))
        if lower.shape != upper.shape:
            raise LengthMismatch(f"lower has {len(lower)} steps, upper has {len(upper)}")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ValueError("interval bounds must not be NaN")
        if np.any(lower > upper):
            bad = int(np.argmax(lower > upper))
            raise ValueError(f"lower > upper at step {bad}: {lower[bad]} > {upper[bad]}")
        flags = np.zeros(len(lower), bool) if self.flags is None else np.asarray(self.flags, bool)
        if flags.shape != lower.shape:
            raise LengthMismatch("flags must align with bounds")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "flags", _frozen_array(flags, bool))
        object.__setattr__(self, "component", Component(self.component))

    def __len__(self):
        return len(self.lower)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def infinite(self) -> np.ndarray:
        return ~(np.isfinite(self.lower) & np.isfinite(self.upper))

    @property
    def has_infinite(self) -> bool:
        return bool(self.infinite.any())

    def contains(self, actuals) -> np.ndarray:
        actuals = np.asarray(actuals, float)
        if actuals.shape != self.lower.shape:
            raise LengthMismatch(f"{len(actuals)} actuals for {len(self)} intervals")
        return (self.lower <= actuals) & (actuals <= self.upper)


@dataclass(frozen=True)
class MethodAssignment:
    """Which conformal method handles each component."""

    trend: Method = Method.ENBPI
    season: Method = Method.BINARY_POINT
    remainder: Method = Method.CVPLUS
    alpha: float = 0.1
    bonferroni: bool = False

    def __post_init__(self):
        for name, allowed in (
            ("trend", TREND_METHODS),
            ("season", SEASON_METHODS),
            ("remainder", REMAINDER_METHODS),
        ):
            method = Method.parse(getattr(self, name))
            if method not in allowed:
                raise ValueError(f"{method} is not available for the {name} component")
            object.__setattr__(self, name, method)
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")

    @property
    def component_alpha(self) -> float:
        return self.alpha / 3 if self.bonferroni else self.alpha

    @property
    def label(self) -> str:
        return f"{self.trend}/{self.season}/{self.remainder}"


@dataclass(frozen=True)
class HyperParams:
    """Tuning knobs for regressors and conformal methods.

    ``lag_order=None`` means one full period. ``decay=None`` picks the
    ExpLocal rate from the period, ``knn_k=None`` keeps half of the
    calibration set.
    """

    gamma: float = 0.01
    n_bootstraps: int = 20
    cv_folds: int = 20
    window_length: int = 1
    neighborhood: int = 1
    decay: Optional[float] = None
    knn_k: Optional[int] = None
    lag_order: Optional[int] = None
    ridge_penalty: float = 1e-6
    recency_periods: Optional[int] = None
    circular: bool = True
    standardize_features: bool = False
    difference: bool = False
    seed: int = 42

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.n_bootstraps < 2:
            raise ValueError("n_bootstraps must be >= 2")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        if self.window_length < 1:
            raise ValueError("window_length must be >= 1")
        if self.neighborhood < 0:
            raise ValueError("neighborhood must be >= 0")
        if self.decay is not None and not 0 < self.decay < 1:
            raise ValueError("decay must lie in (0, 1)")
        if self.lag_order is not None and self.lag_order < 1:
            raise ValueError("lag_order must be >= 1")
        if self.ridge_penalty < 0:
            raise ValueError("ridge_penalty must be >= 0")
        if self.recency_periods is not None and self.recency_periods < 1:
            raise ValueError("recency_periods must be >= 1")

    def resolved_lag_order(self, period: int) -> int:
        return self.lag_order if self.lag_order is not None else max(1, int(period))

    def resolved_decay(self, period: int) -> float:
        if self.decay is not None:
            return self.decay
        return min(0.99, 2 * math.log(100) / period)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def with_(self, **changes) -> "HyperParams":
        return replace(self, **changes)
