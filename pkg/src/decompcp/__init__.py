"""Conformal prediction intervals for time series via STL decomposition.

Each component of an additive trend + seasonal + remainder split gets a
conformal method suited to its dependence structure; the component intervals
are summed back into an interval for the series.
"""

from .conformal import (
    CVPlusRegressor,
    SplitConformalRegressor,
    WeightedScoreSet,
    cv_plus_interval,
    normalize_weights,
    residual_scores,
    split_cp_interval,
    weighted_quantile,
)
from .evaluation import (
    EvalRow,
    SweepConfig,
    emit_report,
    generate_synthetic,
    load_csv,
    piaw,
    picp,
    run_sweep,
)
from .exceptions import *  # noqa: F401,F403
from .pipeline import (
    ComponentForecast,
    DecomposedConformalForecaster,
    RunResult,
    bonferroni_alpha,
    recompose_intervals,
    run_decomposed,
    run_raw_baseline,
)
from .regressors import LagLinearRegressor, bootstrap_fit, build_lag_features, fit_linear, predict
from .seasonal import (
    SeasonContext,
    WeightedConformalRegressor,
    binary_local_weights,
    binary_point_weights,
    exp_local_weights,
    feat_dist_weights,
    knn_weights,
    recency_filter,
)
from .sequential import ACIRegressor, AciState, EnbPIRegressor, EnbpiState, aci_run, aci_step, enbpi_run
from .stl import STLDecomposer, StlConfig, loess_smooth, stl_decompose
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

__version__ = "0.1.0"
