import math

import numpy as np
import pytest
from scipy import stats

from tsfem.linfit import (
    DesignMatrix,
    PerfectFitWarning,
    RankError,
    bic,
    deviance,
    ols_fit,
    predictive_loglik,
)


def test_intercept_only():
    f = ols_fit(np.ones((3, 1)), [1.0, 2.0, 3.0])
    np.testing.assert_allclose(f.coefficients, [2.0])
    assert f.rss == pytest.approx(2.0)
    assert deviance(f) == pytest.approx(2.0)
    assert f.loglik == pytest.approx(-1.5 * (math.log(2 * math.pi * 2 / 3) + 1))


def test_duplicate_column_is_rank_error():
    X = DesignMatrix(np.ones((4, 2)), ("intercept", "copy"))
    with pytest.raises(RankError) as err:
        ols_fit(X, np.arange(4.0))
    assert err.value.dependent


def test_saturated_groups():
    X = np.array([[1, 0], [1, 0], [0, 1]], dtype=float)
    f = ols_fit(X, [1.0, 1.0, 5.0])
    np.testing.assert_allclose(f.coefficients, [1.0, 5.0])
    assert f.rss == pytest.approx(0.0, abs=1e-24)
    assert deviance(f) == pytest.approx(0.0, abs=1e-24)


def test_more_columns_than_rows():
    with pytest.raises(RankError):
        ols_fit(np.eye(2, 3), [1.0, 2.0])


def test_normal_equations_oracle():
    rng = np.random.default_rng(0)
    for _ in range(500):
        q = int(rng.integers(1, 6))
        X = rng.normal(size=(50, q))
        y = rng.normal(size=50)
        oracle = np.linalg.inv(X.T @ X) @ (X.T @ y)
        f = ols_fit(X, y)
        np.testing.assert_allclose(f.coefficients, oracle, rtol=1e-8, atol=1e-12)
        resid = y - X @ oracle
        assert f.rss == pytest.approx(resid @ resid, rel=1e-8)
        # residuals orthogonal to the design
        assert np.max(np.abs(X.T @ (y - X @ f.coefficients))) <= 1e-8 * np.linalg.norm(y)


def test_nested_designs_never_increase_rss():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 5))
    y = rng.normal(size=40)
    rss = [ols_fit(X[:, : j + 1], y).rss for j in range(5)]
    assert all(b <= a + 1e-12 for a, b in zip(rss, rss[1:]))


def test_loglik_invariant_to_column_order():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(30, 4))
    y = rng.normal(size=30)
    a = ols_fit(X, y)
    b = ols_fit(X[:, [2, 0, 3, 1]], y)
    assert a.loglik == pytest.approx(b.loglik, rel=1e-12)


def test_predictive_loglik_zero_residual():
    f = ols_fit(np.ones((4, 1)), [0.0, 2.0, 0.0, 2.0])  # sigma2 = 1
    assert f.sigma2 == pytest.approx(1.0)
    single = predictive_loglik(f, np.ones((1, 1)), [1.0])
    assert single == pytest.approx(-0.5 * math.log(2 * math.pi))
    double = predictive_loglik(f, np.ones((2, 1)), [1.0, 1.0])
    assert double == 2 * single


def test_predictive_loglik_density_oracle():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(20, 3))
    y = rng.normal(size=20)
    Xt = rng.normal(size=(20, 3))
    yt = rng.normal(size=20)
    f = ols_fit(X, y)
    oracle = sum(stats.norm.logpdf(yt[j], Xt[j] @ f.coefficients, math.sqrt(f.sigma2)) for j in range(20))
    assert predictive_loglik(f, Xt, yt) == pytest.approx(oracle, rel=1e-10)


def test_predictive_loglik_perfect_fit_warns():
    f = ols_fit(np.ones((2, 1)), [1.0, 1.0])
    with pytest.warns(PerfectFitWarning):
        predictive_loglik(f, np.ones((1, 1)), [1.0])


def test_bic_closed_form():
    f = ols_fit(np.ones((3, 1)), [1.0, 2.0, 3.0])
    loglik = -1.5 * (math.log(2 * math.pi * 2 / 3) + 1)
    assert bic(f) == pytest.approx(-2 * loglik + math.log(3), rel=1e-12)


def test_bic_penalty():
    # a column of zeros in the residual direction: orthogonal to y, same rss
    X = np.array([[1.0, 1.0], [1.0, -1.0], [1.0, 1.0], [1.0, -1.0]])
    y = np.array([1.0, 1.0, 3.0, 3.0])
    small = ols_fit(X[:, :1], y)
    big = ols_fit(X, y)
    assert big.rss == pytest.approx(small.rss)
    assert bic(big) - bic(small) == pytest.approx(math.log(4))
