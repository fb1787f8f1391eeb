import json
import math

import numpy as np
import pytest
from scipy import stats

from ghdiag.baseline import BaselineSpec
from ghdiag.model import GHParameters, gh_cum_hazard
from ghdiag.simulation import (
    SCENARIOS,
    CalibrationError,
    ClassificationTable,
    ScenarioSpec,
    calibrate_censoring,
    read_scenario_config,
    run_scenario,
    sample_gh,
    simulate_dataset,
)


@pytest.mark.parametrize("scenario", sorted(SCENARIOS))
def test_pit_uniformity(scenario):
    spec = ScenarioSpec(scenario, 1000, 0.3)
    rng = np.random.default_rng(100 + scenario)
    x = rng.standard_normal((10_000, 1))
    t = sample_gh(spec.theta, x, x, rng)
    H = np.array([gh_cum_hazard(spec.theta, ti, xi, xi) for ti, xi in zip(t, x)]).ravel()
    u = np.exp(-H)
    assert stats.kstest(u, "uniform").statistic < 0.02


def test_no_covariate_effect_gives_baseline_draws():
    theta = GHParameters(BaselineSpec.of("weibull", 1.0, 1.0), [0.0], [0.0])
    x = np.ones((5, 1))
    a = sample_gh(theta, x, x, np.random.default_rng(4))
    b = np.random.default_rng(4).exponential(size=5)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_aft_scaling():
    # alpha = beta: the time is the baseline draw divided by exp(x * alpha)
    base = BaselineSpec.of("pgw", 0.8, 1.4, 2.0)
    x = np.full((6, 1), 0.7)
    t_aft = sample_gh(GHParameters(base, [1.2], [1.2]), x, x, np.random.default_rng(8))
    t0 = sample_gh(GHParameters(base, [0.0], [0.0]), x, x, np.random.default_rng(8))
    np.testing.assert_allclose(t_aft, t0 * math.exp(-0.84), rtol=1e-10)


def test_sampling_shape_errors():
    theta = GHParameters(BaselineSpec.of("weibull", 1.0, 1.0), [0.0], [0.0])
    with pytest.raises(ValueError):
        sample_gh(theta, np.ones((3, 2)), np.ones((3, 1)), np.random.default_rng(0))


def test_calibration_exponential_median():
    theta = GHParameters(BaselineSpec.of("weibull", 1.0, 1.0), [0.0], [0.0])
    c = calibrate_censoring(theta, np.zeros((1, 1)), np.zeros((1, 1)), 0.5, np.random.default_rng(0))
    assert c == pytest.approx(math.log(2), abs=0.02)
    with pytest.raises(CalibrationError):
        calibrate_censoring(theta, np.zeros((1, 1)), np.zeros((1, 1)), 1.0, np.random.default_rng(0))


def test_calibration_hits_target_rate():
    spec = ScenarioSpec(2, 250, 0.3)
    rng = np.random.default_rng(12)
    x = rng.standard_normal((5000, 1))
    c = calibrate_censoring(spec.theta, x, x, 0.3, rng)
    rates = [1 - simulate_dataset(spec, c, rng).status.mean() for _ in range(50)]
    assert np.mean(rates) == pytest.approx(0.30, abs=0.03)


def test_scenario_spec_validation(tmp_path):
    s = ScenarioSpec(4, 500, 0.5)
    assert s.true_family.value == "lognormal" and s.fit_family.value == "pgw"
    json.dumps(s.to_dict())
    with pytest.raises(ValueError):
        ScenarioSpec(1, 500, 0.3, replicates=0)
    with pytest.raises(ValueError):
        ScenarioSpec(9, 500, 0.3)
    with pytest.raises(ValueError):
        ScenarioSpec(1, 500, 1.2)
    cfg = tmp_path / "s.cfg"
    cfg.write_text("# cell\nscenario = 3\nn = 400  # small\ncensoring = 0.5\nseed = 7\n")
    spec = read_scenario_config(cfg)
    assert (spec.scenario_id, spec.n, spec.target_censoring, spec.seed) == (3, 400, 0.5, 7)
    cfg.write_text("scenario = 3\nsize = 4\n")
    with pytest.raises(ValueError):
        read_scenario_config(cfg)
    cfg.write_text("scenario = 3\n")
    with pytest.raises(ValueError):
        read_scenario_config(cfg)


def test_run_scenario_is_deterministic():
    spec = ScenarioSpec(1, 300, 0.3, replicates=2, seed=5)
    a, b = run_scenario(spec), run_scenario(spec)
    assert isinstance(a, ClassificationTable)
    assert a.counts == b.counts and a.gamma_hat == b.gamma_hat
    assert a.classified + a.replicate_failures == 2
    assert a.classified > 0
    total = sum(a.proportion("hellinger", nr, pni) for nr in (True, False) for pni in (True, False))
    assert total == pytest.approx(1.0)
    assert "hellinger" in a.format()
    json.loads(a.to_json())
