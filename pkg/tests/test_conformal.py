import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decompcp import (
    CVPlusRegressor,
    SplitConformalRegressor,
    WeightedScoreSet,
    build_lag_features,
    cv_plus_interval,
    normalize_weights,
    residual_scores,
    split_cp_interval,
    weighted_quantile,
)
from decompcp.conformal import conformal_rank
from decompcp.exceptions import AllZeroWeights, LengthMismatch, TooFewRows
from decompcp.regressors import LagMatrix


def brute_quantile(scores, raw_weights, level):
    """Exact rational scan: smallest score whose cumulative weight reaches the level."""
    w = [Fraction(x) for x in raw_weights]
    total = sum(w)
    lv = Fraction(level)
    for s in sorted(set(scores)):
        cum = sum(wi for si, wi in zip(scores, w[:-1]) if si <= s) / total
        if cum >= lv:
            return s
    return math.inf


def test_residual_scores():
    assert residual_scores([1, 2], [1, 4]).tolist() == [0, 2]
    assert residual_scores([0], [-3]).tolist() == [3]
    assert residual_scores([1, 2, 3], [1, 2, 3]).tolist() == [0, 0, 0]
    with pytest.raises(LengthMismatch):
        residual_scores([1], [1, 2])


def test_normalize_weights():
    assert np.allclose(normalize_weights(np.ones(5)), 0.2)
    assert normalize_weights([2, 0, 0]).tolist() == [1, 0, 0]
    with pytest.raises(AllZeroWeights):
        normalize_weights([0, 0])


def test_binary_point_normalization():
    raw = np.zeros(22)
    raw[[3, 10, 17]] = 1  # positions 4, 11, 18 (1-based)
    raw[-1] = 1
    w = normalize_weights(raw)
    assert np.allclose(w[[3, 10, 17, 21]], 0.25)


def test_quantile_examples():
    assert weighted_quantile(WeightedScoreSet.from_raw([1, 2, 3, 4]), 0.8) == 4.0
    assert weighted_quantile(WeightedScoreSet([1.0], [0.5, 0.5]), 0.9) == math.inf
    assert weighted_quantile(WeightedScoreSet.from_raw([5, 3, 9]), 0.1) == 3.0


def test_quantile_ties_merged():
    wss = WeightedScoreSet.from_raw([2, 2, 2, 5])
    assert weighted_quantile(wss, 0.3) == 2.0
    assert weighted_quantile(wss, 0.6) == 2.0
    assert weighted_quantile(wss, 0.61) == 5.0


def test_quantile_zero_weight_ignored():
    wss = WeightedScoreSet.from_raw([1, 100, 2], [1, 0, 1, 1])
    assert weighted_quantile(wss, 0.6) == 2.0


def test_score_set_validation():
    with pytest.raises(LengthMismatch):
        WeightedScoreSet([1.0, 2.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        WeightedScoreSet([-1.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        WeightedScoreSet([1.0], [0.4, 0.4])
    with pytest.raises(ValueError):
        weighted_quantile(WeightedScoreSet.from_raw([1.0]), 1.0)


@settings(max_examples=300)
@given(
    st.lists(st.integers(0, 20), min_size=1, max_size=50),
    st.data(),
    st.integers(1, 99),
)
def test_quantile_matches_brute_force(scores, data, pct):
    raw = data.draw(st.lists(st.integers(0, 5), min_size=len(scores) + 1, max_size=len(scores) + 1))
    if sum(raw) == 0:
        return
    level = pct / 100
    wss = WeightedScoreSet.from_raw(scores, raw)
    assert weighted_quantile(wss, level) == brute_quantile(scores, raw, level)


@given(st.lists(st.floats(0, 100), min_size=1, max_size=40), st.floats(0.01, 0.98), st.floats(0.001, 0.01))
def test_quantile_monotone_in_level(scores, level, step):
    wss = WeightedScoreSet.from_raw(scores)
    assert weighted_quantile(wss, level) <= weighted_quantile(wss, min(level + step, 0.999))


@given(st.lists(st.floats(0, 100), min_size=1, max_size=40), st.data(), st.floats(0.01, 0.99), st.floats(0.1, 1000))
def test_quantile_scale_invariant(scores, data, level, c):
    raw = np.array(data.draw(st.lists(st.floats(0.01, 10), min_size=len(scores) + 1, max_size=len(scores) + 1)))
    a = weighted_quantile(WeightedScoreSet.from_raw(scores, raw), level)
    b = weighted_quantile(WeightedScoreSet.from_raw(scores, raw * c), level)
    assert a == b


@given(st.lists(st.floats(0, 100), min_size=2, max_size=30), st.data(), st.floats(0.01, 0.99))
def test_quantile_permutation_invariant(scores, data, level):
    raw = np.array(data.draw(st.lists(st.floats(0.01, 10), min_size=len(scores) + 1, max_size=len(scores) + 1)))
    perm = np.array(data.draw(st.permutations(range(len(scores)))))
    a = weighted_quantile(WeightedScoreSet.from_raw(scores, raw), level)
    b = weighted_quantile(WeightedScoreSet.from_raw(np.array(scores)[perm], np.append(raw[:-1][perm], raw[-1])), level)
    assert a == b


@pytest.mark.parametrize("alpha", [0.05, 0.1, 0.25])
def test_uniform_quantile_is_order_statistic(alpha):
    rng = np.random.default_rng(0)
    for n in range(1, 201):
        scores = rng.exponential(size=n)
        k = math.ceil((n + 1) * (1 - alpha) - 1e-9)
        expected = math.inf if k > n else np.sort(scores)[k - 1]
        assert weighted_quantile(WeightedScoreSet.from_raw(scores), 1 - alpha) == expected
        assert conformal_rank(n, 1 - alpha) == k


def test_split_cp_examples():
    assert split_cp_interval(np.arange(1.0, 20.0), 0.1, 0.0) == (-18.0, 18.0)
    assert split_cp_interval(np.zeros(10), 0.1, 2.5) == (2.5, 2.5)
    lo, hi = split_cp_interval([1.0, 2.0], 0.01, 0.0)
    assert math.isinf(lo) and math.isinf(hi)
    with pytest.raises(TooFewRows):
        split_cp_interval([], 0.1, 0.0)


def test_split_cp_vector_prediction():
    lo, hi = split_cp_interval(np.arange(1.0, 20.0), 0.1, np.array([0.0, 1.0]))
    assert lo.tolist() == [-18.0, -17.0] and hi.tolist() == [18.0, 19.0]


def test_cv_plus_collapses_without_residuals():
    x = np.arange(40.0)
    lm = LagMatrix(x[:, None], 2 * x + 1, np.arange(40), 1)
    lo, hi = cv_plus_interval(lm, 5, 0.1, np.array([50.0]))
    assert hi - lo < 1e-6
    assert lo == pytest.approx(101.0)


def test_jackknife_plus_noiseless():
    x = np.arange(20.0)
    lm = LagMatrix(x[:, None], 3 * x - 1, np.arange(20), 1)
    lo, hi = cv_plus_interval(lm, 20, 0.1, np.array([[5.5], [30.0]]))
    assert np.all(hi - lo < 1e-6)


def test_cv_plus_too_few_rows():
    lm = LagMatrix(np.ones((3, 1)), np.ones(3), np.arange(3), 1)
    with pytest.raises(TooFewRows):
        cv_plus_interval(lm, 5, 0.1, np.array([1.0]))


def test_cv_plus_order_statistics_oracle(rng):
    X = rng.normal(size=(30, 2))
    y = X @ [1.0, 2.0] + rng.normal(size=30)
    reg = CVPlusRegressor(n_folds=6, alpha=0.2).fit(X, y)
    x0 = rng.normal(size=(1, 2))
    _, pis = reg.predict_interval(x0)
    # oracle: explicit fold refits and explicit sorted lists
    folds = np.array_split(np.arange(30), 6)
    lows, highs = [], []
    for f in folds:
        keep = np.setdiff1d(np.arange(30), f)
        A = np.column_stack([np.ones(len(keep)), X[keep]])
        coef = np.linalg.lstsq(A, y[keep], rcond=None)[0]
        pred = coef[0] + x0[0] @ coef[1:]
        for i in f:
            r = abs(y[i] - (coef[0] + X[i] @ coef[1:]))
            lows.append(pred - r)
            highs.append(pred + r)
    k_lo = math.floor(0.2 * 31)
    k_hi = math.ceil(0.8 * 31)
    assert pis[0, 0] == pytest.approx(sorted(lows)[k_lo - 1], abs=1e-6)
    assert pis[0, 1] == pytest.approx(sorted(highs)[k_hi - 1], abs=1e-6)


def test_cv_plus_infinite_bounds_for_tiny_alpha(rng):
    X = rng.normal(size=(10, 1))
    reg = CVPlusRegressor(n_folds=5, alpha=0.05).fit(X, X[:, 0])
    _, pis = reg.predict_interval(X[:1])
    assert np.isinf(pis).all()


def test_cv_plus_gaussian_coverage():
    rng = np.random.default_rng(7)
    covered = 0
    for _ in range(4):
        X = rng.normal(size=(500, 1))
        y = 0.5 * X[:, 0] + rng.normal(size=500)
        reg = CVPlusRegressor(n_folds=20, alpha=0.1).fit(X, y)
        Xt = rng.normal(size=(500, 1))
        yt = 0.5 * Xt[:, 0] + rng.normal(size=500)
        _, pis = reg.predict_interval(Xt)
        covered += ((pis[:, 0] <= yt) & (yt <= pis[:, 1])).sum()
    assert 0.86 <= covered / 2000 <= 0.96


def test_split_regressor_api(rng):
    X = rng.normal(size=(200, 1))
    y = X[:, 0] + rng.normal(0, 0.1, 200)
    reg = SplitConformalRegressor(alpha=0.1).fit(X[:100], y[:100], X[100:], y[100:])
    pred, pis = reg.predict_interval(X[:5])
    assert pis.shape == (5, 2) and np.all(pis[:, 0] <= pred) and np.all(pred <= pis[:, 1])
    assert "alpha" in reg.get_params()
