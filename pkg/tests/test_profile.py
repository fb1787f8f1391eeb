import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from ghdiag.profile import (
    LEVEL_95,
    likelihood_region,
    pni_flag,
    profile_objective,
    profile_scan,
    write_profiles_csv,
)


def exponential_problem(seed=1, n=60):
    rng = np.random.default_rng(seed)
    t = rng.exponential(2.0, size=n)
    d = (rng.uniform(size=n) < 0.8).astype(float)
    D, T = d.sum(), t.sum()
    loglik = lambda u: -D * u - T * math.exp(-u)  # u = log sigma
    return loglik, math.log(T / D)


def test_exponential_one_parameter_oracle():
    loglik, u_hat = exponential_problem()
    grid = np.linspace(u_hat - 1.0, u_hat + 1.0, 21)
    curve = profile_objective(lambda x: -loglik(x[0]), [u_hat], 0, grid)
    exact = np.exp([loglik(u) - loglik(u_hat) for u in curve.grid])
    np.testing.assert_allclose(curve.rel_profile, exact, rtol=1e-8, atol=1e-12)

    target = lambda u: loglik(u) - loglik(u_hat) - math.log(LEVEL_95)
    lo = optimize.brentq(target, u_hat - 1.0, u_hat, xtol=1e-14)
    hi = optimize.brentq(target, u_hat, u_hat + 1.0, xtol=1e-14)
    got_lo, got_hi = likelihood_region(curve, LEVEL_95)
    assert got_lo == pytest.approx(lo, abs=1e-4)
    assert got_hi == pytest.approx(hi, abs=1e-4)
    # a different level goes through bisection again
    lo5 = optimize.brentq(lambda u: target(u) + math.log(LEVEL_95) - math.log(0.5), u_hat - 1.0, u_hat)
    assert likelihood_region(curve, 0.5)[0] == pytest.approx(lo5, abs=1e-4)


def gaussian(A, x_hat):
    A = np.asarray(A, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    return lambda x: 0.5 * (x - x_hat) @ A @ (x - x_hat)


def test_gaussian_profile_with_correlated_nuisance():
    # profile curvature of coordinate 0 is 1 / (A^-1)_00
    A = np.array([[4.0, 1.5, 0.3], [1.5, 2.0, 0.2], [0.3, 0.2, 1.0]])
    x_hat = np.array([0.5, -1.0, 2.0])
    var0 = np.linalg.inv(A)[0, 0]
    grid = np.linspace(-1.5, 2.5, 17)
    curve = profile_objective(gaussian(A, x_hat), x_hat, 0, grid)
    exact = np.exp(-0.5 * (curve.grid - 0.5) ** 2 / var0)
    np.testing.assert_allclose(curve.rel_profile, exact, rtol=1e-6, atol=1e-10)


def test_curvature_ten_is_not_pni():
    # scale A so the profile curvature is exactly 10: R_P(+-3) = exp(-45)
    A = np.array([[2.0, 0.8], [0.8, 1.0]])
    A = A * 10.0 * np.linalg.inv(A)[0, 0]
    curve = profile_objective(gaussian(A, [0.0, 0.0]), [0.0, 0.0], 0, np.linspace(-3, 3, 13), delta=3.0)
    assert curve.rel_profile[0] == pytest.approx(math.exp(-45), rel=1e-4)
    assert curve.pni_flag is False
    assert curve.region_endpoints[0] is not None and curve.region_endpoints[1] is not None


def test_flat_ridge_is_pni():
    A = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-3]])
    curve = profile_objective(gaussian(A, [0.0, 0.0]), [0.0, 0.0], 0, np.linspace(-3, 3, 13), delta=3.0)
    assert curve.pni_flag is True
    assert curve.region_endpoints == (None, None)


@settings(max_examples=25)
@given(
    a=st.floats(0.2, 20.0),
    b=st.floats(0.2, 20.0),
    r=st.floats(-0.9, 0.9),
    centre=st.floats(-2, 2),
)
def test_profile_normalised_and_region_contains_estimate(a, b, r, centre):
    c = r * math.sqrt(a * b)
    A = np.array([[a, c], [c, b]])
    curve = profile_objective(gaussian(A, [centre, 1.0]), [centre, 1.0], 0, np.linspace(centre - 2, centre + 2, 9))
    i = int(np.argmin(np.abs(curve.grid - centre)))
    assert curve.rel_profile[i] == 1.0
    assert np.all(curve.rel_profile <= 1.0)
    lo, hi = curve.region_endpoints
    assert (lo is None or lo <= centre) and (hi is None or hi >= centre)


def test_region_levels():
    loglik, u_hat = exponential_problem()
    curve = profile_objective(lambda x: -loglik(x[0]), [u_hat], 0, np.linspace(u_hat - 1, u_hat + 1, 11))
    assert likelihood_region(curve, 1.0) == (curve.estimate, curve.estimate)
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            likelihood_region(curve, bad)


def test_csv_export(tmp_path):
    loglik, u_hat = exponential_problem()
    curve = profile_objective(lambda x: -loglik(x[0]), [u_hat], 0, np.linspace(u_hat - 1, u_hat + 1, 5), name="logsigma")
    path = tmp_path / "p.csv"
    write_profiles_csv([curve], path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["param", "psi", "rel_profile"]
    assert len(rows) == curve.grid.size and rows[0]["param"] == "logsigma"


def test_lung_nuisance_scale_invariance(lung_fit):
    grid = lung_fit.estimate[lung_fit.names.index("beta[age]")] + np.array([-1.0, -0.5, 0.5, 1.0])
    a = profile_scan(None, lung_fit, "beta[age]", grid, nuisance="log")
    b = profile_scan(None, lung_fit, "beta[age]", grid, nuisance="natural")
    np.testing.assert_allclose(a.rel_profile, b.rel_profile, rtol=1e-6, atol=1e-9)


def test_lung_sex_region_bounded(lung_fit):
    curve = profile_scan(None, lung_fit, "beta[sex]", points=13)
    lo, hi = curve.region_endpoints
    assert lo is not None and hi is not None and lo < curve.estimate < hi
    assert curve.pni_flag is False
    assert curve.rel_profile[6] == 1.0 and np.nanmax(curve.rel_profile) == 1.0
    assert curve.failures == 0


def test_lung_age_time_coefficient_pni(lung_fit):
    assert pni_flag(None, lung_fit, "alpha[age]") is True


def test_scan_argument_errors(lung_fit):
    with pytest.raises(KeyError):
        profile_scan(None, lung_fit, "beta[height]")
    with pytest.raises(IndexError):
        profile_scan(None, lung_fit, 99)
    with pytest.raises(ValueError):
        profile_scan(None, lung_fit, "sigma", [-1.0, 1.0])
    with pytest.raises(ValueError):
        pni_flag(None, lung_fit, 0, delta=0.0)
    single = profile_scan(None, lung_fit, "beta[sex]", points=1)
    assert single.rel_profile.tolist() == [1.0]
