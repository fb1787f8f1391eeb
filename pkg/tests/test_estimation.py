import math

import numpy as np
import pytest

from ghdiag.baseline import BaselineSpec
from ghdiag.estimation import (
    ComparisonError,
    DegenerateDataError,
    OptimizerConfig,
    compare_models,
    fit_mle,
    numerical_hessian,
)
from ghdiag.model import GHParameters, SurvivalDataset
from ghdiag.redundancy import hessian_method
from ghdiag.simulation import sample_gh


def five_point_hessian(f, x, h):
    """Fourth-order central-difference Hessian, used as an oracle."""
    k = x.size
    E = np.eye(k)
    H = np.zeros((k, k))
    w1 = ((1, 8), (-1, -8), (2, -1), (-2, 1))
    for i in range(k):
        ei = E[i] * h[i]
        H[i, i] = (-f(x + 2 * ei) + 16 * f(x + ei) - 30 * f(x) + 16 * f(x - ei) - f(x - 2 * ei)) / (12 * h[i] ** 2)
        for j in range(i + 1, k):
            ej = E[j] * h[j]
            s = sum(ca * cb * f(x + a * ei + b * ej) for a, ca in w1 for b, cb in w1)
            H[i, j] = H[j, i] = s / (144 * h[i] * h[j])
    return H


def simulated(n=500, seed=11, gamma=2.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 1))
    theta = GHParameters(BaselineSpec.of("pgw", 0.5, 1.5, gamma), [1.0], [0.5])
    t = sample_gh(theta, X, X, rng)
    c = np.quantile(t, 0.8)
    return SurvivalDataset(np.minimum(t, c), (t <= c).astype(int), X, X, ("x",), ("x",))


def test_hessian_of_quadratic():
    A = np.array([[4.0, 1.0, 0.5], [1.0, 3.0, -0.2], [0.5, -0.2, 2.0]])
    H = numerical_hessian(lambda v: 0.5 * v @ A @ v, [0.3, -1.2, 2.0])
    np.testing.assert_allclose(H, A, atol=1e-6)
    assert np.array_equal(H, H.T)


def test_hessian_of_normal_log_density():
    s = 0.7
    H = numerical_hessian(lambda v: 0.5 * (v[0] / s) ** 2 + math.log(s), [0.0])
    assert H[0, 0] == pytest.approx(1 / s**2, rel=1e-6)


def test_hessian_step_halving():
    # finite only on (-1e-3, 1e-3): the default step fails, halved steps succeed
    f = lambda v: v[0] ** 2 if abs(v[0]) < 1e-3 else math.inf
    assert numerical_hessian(f, [0.0])[0, 0] == pytest.approx(2.0, rel=1e-6)
    with pytest.raises(ArithmeticError):
        numerical_hessian(lambda v: math.inf if v[0] != 0 else 0.0, [0.0])


def test_exponential_consistency():
    rng = np.random.default_rng(5)
    t = rng.exponential(size=5000)
    data = SurvivalDataset(t, np.ones(5000, int), np.zeros((5000, 0)), np.zeros((5000, 0)))
    fit = fit_mle(data, "weibull", "gh")
    assert abs(fit.estimate[1] - 1.0) < 0.05
    assert fit.converged


def test_hessian_method_matches_five_point_oracle():
    data = simulated()
    fit = fit_mle(data, "pgw", "gh")
    like = fit.likelihood
    w = like.to_working(fit.estimate)
    oracle = five_point_hessian(lambda v: -like.loglik_working(v), w, 2e-3 * np.maximum(1.0, np.abs(w)))
    ratios, _ = hessian_method(fit)
    ref, _ = hessian_method(oracle)
    np.testing.assert_allclose(ratios, ref, rtol=1e-4)


def test_lung_hessian_ratios_match_oracle(lung_fit):
    like = lung_fit.likelihood
    w = like.to_working(lung_fit.estimate)
    oracle = five_point_hessian(lambda v: -like.loglik_working(v), w, 2e-3 * np.maximum(1.0, np.abs(w)))
    np.testing.assert_allclose(hessian_method(lung_fit)[0], hessian_method(oracle)[0], rtol=1e-4)


def test_fit_result_contract():
    data = simulated(n=300)
    fit = fit_mle(data, "pgw", "gh")
    assert fit.aic == pytest.approx(2 * fit.k - 2 * fit.loglik)
    assert fit.loglik == pytest.approx(fit.likelihood.loglik(fit.estimate), rel=1e-12)
    np.testing.assert_allclose(fit.hessian, fit.hessian.T, atol=1e-8)
    assert fit.optimizer_trace["grad_max"] <= 1e-4 * max(1, data.n / 10)
    again = fit_mle(data, "pgw", "gh")
    assert np.array_equal(fit.estimate, again.estimate)


def test_gh_dominates_ph():
    data = simulated(n=300)
    gh = fit_mle(data, "pgw", "gh")
    ph = fit_mle(data, "pgw", "ph")
    assert gh.loglik >= ph.loglik - 1e-4


def test_column_permutation():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(300, 2))
    theta = GHParameters(BaselineSpec.of("pgw", 1.0, 1.3, 2.0), [0.4], [0.8, -0.5])
    t = sample_gh(theta, X, X[:, :1], rng)
    d = SurvivalDataset(t, np.ones(300, int), X, X[:, :1], ("a", "b"), ("a",))
    p = SurvivalDataset(t, np.ones(300, int), X[:, ::-1], X[:, :1], ("b", "a"), ("a",))
    f1, f2 = fit_mle(d, "pgw", "ph"), fit_mle(p, "pgw", "ph")
    assert f1.loglik == pytest.approx(f2.loglik, abs=1e-8)
    np.testing.assert_allclose(f1.estimate[3:], f2.estimate[3:][::-1], atol=1e-4)


def test_degenerate_and_comparison_errors():
    data = simulated(n=50)
    censored = SurvivalDataset(data.times, np.zeros(50, int), data.X, data.Xtilde, ("x",), ("x",))
    with pytest.raises(DegenerateDataError):
        fit_mle(censored, "weibull", "ph")
    a = fit_mle(data, "weibull", "ph")
    with pytest.raises(ComparisonError):
        compare_models([a])
    other = fit_mle(simulated(n=50, seed=99), "weibull", "ph")
    with pytest.raises(ComparisonError):
        compare_models([a, other])


def test_compare_models_ties_by_k():
    data = simulated(n=200)
    cfg = OptimizerConfig(n_starts=2)
    big = fit_mle(data, "pgw", "ph", cfg)
    small = fit_mle(data, "weibull", "ph", cfg)
    tied = type(big)(**{**big.__dict__, "aic": small.aic})
    assert compare_models([tied, small])[0] is small
    ranked = compare_models([big, small])
    assert [f.aic for f in ranked] == sorted(f.aic for f in ranked)


def test_lung_fit_values(lung_fit):
    assert lung_fit.aic == pytest.approx(342.357, abs=0.5)
    assert lung_fit.estimate[2] == pytest.approx(0.861, abs=0.05)
