import json
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy import integrate, optimize, stats
from scipy.special import gamma as gamma_fn

from ghdiag.baseline import BaselineSpec, density0
from ghdiag.redundancy import (
    Divergence,
    bootstrap_criterion_probability,
    diagnose,
    divergence,
    effective_sample_size,
    hellinger_threshold,
    hessian_method,
    kl_threshold,
    min_distance_to_weibull,
    min_n_eff_required,
)

EULER = 0.5772156649015329


def weibull_kl(s1, k1, s2, k2):
    """Closed-form KL(Weibull(s1, k1) || Weibull(s2, k2))."""
    return (
        math.log(k1 / s1**k1)
        - math.log(k2 / s2**k2)
        + (k1 - k2) * (math.log(s1) - EULER / k1)
        + (s1 / s2) ** k2 * gamma_fn(k2 / k1 + 1)
        - 1
    )


def weibull_hellinger_same_shape(s1, s2, nu):
    bc = 2 * (s1 * s2) ** (nu / 2) / (s1**nu + s2**nu)
    return math.sqrt(1 - bc)


def W(s, n):
    return BaselineSpec.of("weibull", s, n)


# ---------------------------------------------------------------------------
# thresholds
# ---------------------------------------------------------------------------


def test_threshold_values():
    assert effective_sample_size(227, 63) == 195.5
    assert effective_sample_size(1043, 164) == 961
    assert hellinger_threshold(195.5) == pytest.approx(0.0651, abs=1e-3)
    assert hellinger_threshold(961) == pytest.approx(0.0294, abs=1e-3)
    assert kl_threshold(195.5, 7) == pytest.approx(0.00472, abs=5e-5)
    assert kl_threshold(961, 10) == pytest.approx(0.00179, abs=5e-5)
    assert kl_threshold(195.5, 7, k_exponent=2) == pytest.approx(0.033, abs=5e-4)
    assert kl_threshold(961, 10, k_exponent=2) == pytest.approx(0.0178, abs=5e-4)


def test_threshold_domain_errors():
    with pytest.raises(ValueError):
        effective_sample_size(10, 11)
    with pytest.raises(ValueError):
        effective_sample_size(10, 1, rho=1.0)
    with pytest.raises(ValueError):
        kl_threshold(1.0, 3)
    with pytest.raises(ValueError):
        kl_threshold(10, 3, k_exponent=3)
    with pytest.raises(ValueError):
        hellinger_threshold(10, kappa=0.5)


@given(n1=st.floats(3.0, 1e6), factor=st.floats(1.001, 100.0), k=st.integers(1, 20))
def test_thresholds_decrease_in_n_eff(n1, factor, k):
    n2 = n1 * factor
    assert hellinger_threshold(n2) < hellinger_threshold(n1)
    assert kl_threshold(n2, k) < kl_threshold(n1, k)


@given(d=st.floats(1e-4, 0.9), n_eff=st.floats(1.0, 1e6), kappa=st.floats(0.01, 0.45))
def test_hellinger_inequality_equivalence(d, n_eff, kappa):
    # D <= threshold(n_eff)  <=>  n_eff <= n_required(D)
    req = min_n_eff_required(d, kappa)
    assume(abs(n_eff - req) > 1e-6 * req)
    assert (d <= hellinger_threshold(n_eff, kappa)) == (n_eff <= req)


# ---------------------------------------------------------------------------
# divergences
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("a, b", [((1.0, 1.0), (1.3, 0.8)), ((0.5, 2.0), (0.7, 1.5)), ((2.0, 0.6), (1.0, 1.0))])
def test_weibull_kl_closed_form(a, b):
    assert divergence(W(*a), W(*b), "kl") == pytest.approx(weibull_kl(*a, *b), rel=1e-7, abs=1e-12)


@pytest.mark.parametrize("s1, s2, nu", [(1.0, 1.2, 1.0), (0.4, 0.5, 2.5), (3.0, 1.0, 0.7)])
def test_weibull_hellinger_closed_form(s1, s2, nu):
    assert divergence(W(s1, nu), W(s2, nu), "hellinger") == pytest.approx(
        weibull_hellinger_same_shape(s1, s2, nu), rel=1e-7
    )


def test_symmetry():
    a, b = W(1.0, 1.0), W(1.6, 0.7)
    assert divergence(a, b, "hellinger") == pytest.approx(divergence(b, a, "hellinger"), rel=1e-8)
    assert abs(divergence(a, b, "kl") - divergence(b, a, "kl")) > 1e-3


@given(
    sigma=st.floats(0.3, 3.0),
    nu=st.floats(0.5, 3.0),
    g=st.floats(0.3, 4.0),
    ws=st.floats(0.3, 3.0),
    wn=st.floats(0.5, 3.0),
)
def test_divergence_bounds(sigma, nu, g, ws, wn):
    fitted = BaselineSpec.of("pgw", sigma, nu, g)
    kl = divergence(fitted, W(ws, wn), "kl")
    h = divergence(fitted, W(ws, wn), "hellinger")
    assert kl >= -1e-10
    assert -1e-12 <= h <= 1.0


@pytest.mark.parametrize("family", ["pgw", "ew", "gg"])
@pytest.mark.parametrize("kind", list(Divergence))
def test_zero_distance_at_nesting(family, kind):
    res = min_distance_to_weibull(BaselineSpec.of(family, 1.3, 0.9, 1.0), kind)
    assert res.value == pytest.approx(0.0, abs=1e-6)
    assert res.weibull_argmin.xi == pytest.approx((1.3, 0.9), rel=1e-3)


def test_weibull_input_is_its_own_projection():
    res = min_distance_to_weibull(W(2.0, 1.5), "kl")
    assert res.value == 0.0 and res.weibull_argmin.xi == (2.0, 1.5)


def test_min_distance_against_quadrature_oracle(lung_fit):
    # independent check: plain quad over (0, inf) at the reported argmin, then a
    # local search from it cannot do noticeably better
    base = lung_fit.theta_hat.baseline
    res = min_distance_to_weibull(base, "kl")
    assert res.inner_converged

    def kl_quad(log_sw):
        g = stats.weibull_min(math.exp(log_sw[1]), scale=math.exp(log_sw[0]))

        def f(t):
            ft = float(density0(base, t))
            return ft * (math.log(ft) - g.logpdf(t)) if ft > 0 else 0.0

        return sum(integrate.quad(f, a, b, limit=200, epsabs=1e-13)[0] for a, b in ((0, 1), (1, 10), (10, np.inf)))

    x0 = np.log(res.weibull_argmin.xi)
    at = kl_quad(x0)
    assert at == pytest.approx(res.value, rel=1e-5)
    better = optimize.minimize(kl_quad, x0, method="Nelder-Mead", options={"xatol": 1e-6, "fatol": 1e-12})
    assert better.fun >= res.value * (1 - 1e-3)


def test_min_distance_matches_weibull_argmin_for_pgw():
    res = min_distance_to_weibull(BaselineSpec.of("pgw", 1.0, 1.5, 2.0), "hellinger")
    direct = divergence(BaselineSpec.of("pgw", 1.0, 1.5, 2.0), res.weibull_argmin, "hellinger")
    assert res.value == pytest.approx(direct, rel=1e-8)
    assert 0 < res.value < 1


# ---------------------------------------------------------------------------
# Hessian method
# ---------------------------------------------------------------------------


def test_hessian_method_simple_cases():
    ratios, flag = hessian_method(np.eye(4))
    np.testing.assert_array_equal(ratios, np.ones(4))
    assert not flag
    ratios, flag = hessian_method(np.diag([5.0, -2.0, 1e-3]))
    np.testing.assert_allclose(ratios, [1.0, 0.4, 2e-4])
    assert flag
    with pytest.raises(ArithmeticError):
        hessian_method(np.zeros((2, 2)))
    with pytest.raises(ArithmeticError):
        hessian_method(np.array([[1.0, np.nan], [np.nan, 1.0]]))


# ---------------------------------------------------------------------------
# reports and bootstrap
# ---------------------------------------------------------------------------


def test_diagnose_report(lung_fit):
    rep = diagnose(lung_fit)
    assert rep.n_eff == 195.5 and rep.k == 7
    assert all(rep.flags.values())
    assert len(rep.verdicts()) == 3
    json.dumps(rep.to_dict())


def test_bootstrap_identity_resample_reproduces_point_flags(lung, lung_fit):
    rep = diagnose(lung_fit)
    boot = bootstrap_criterion_probability(lung, lung_fit, B=1, index_sampler=lambda rng, n: np.arange(n))
    assert boot.converged == 1 and boot.failures == 0
    expected = {"kl": rep.flags["nr_kl"], "hellinger": rep.flags["nr_hellinger"], "hessian": rep.flags["nr_hessian"]}
    assert boot.probabilities == {c: float(v) for c, v in expected.items()}
    rec = boot.records[0]
    assert rec["kl"] == pytest.approx(rep.kl.value, rel=1e-3)
    assert boot.probabilities_for(k_exponent=2)["kl"] == 1.0
    json.dumps(boot.to_dict())


def test_bootstrap_argument_errors(lung, lung_fit):
    with pytest.raises(ValueError):
        bootstrap_criterion_probability(lung, lung_fit, B=0)
    with pytest.raises(ValueError):
        bootstrap_criterion_probability(lung, lung_fit, B=1, criteria=("aic",))
