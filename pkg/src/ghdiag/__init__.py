"""General hazard survival models and diagnostics for near-redundancy and
practical non-identifiability."""

from .baseline import BaselineSpec, Family
from .datasets import DatasetFile, load_dataset, load_fixture
from .estimation import FitResult, OptimizerConfig, compare_models, fit_mle
from .model import GHParameters, Structure, SurvivalDataset, log_likelihood
from .profile import ProfileCurve, likelihood_region, model_pni, pni_flag, profile_scan
from .redundancy import (
    RedundancyReport,
    bootstrap_criterion_probability,
    diagnose,
    effective_sample_size,
    hellinger_threshold,
    hessian_method,
    kl_threshold,
    min_distance_to_weibull,
    min_n_eff_required,
)
from .simulation import ClassificationTable, ScenarioSpec, calibrate_censoring, run_scenario, sample_gh

__all__ = [
    "BaselineSpec",
    "Family",
    "DatasetFile",
    "load_dataset",
    "load_fixture",
    "FitResult",
    "OptimizerConfig",
    "compare_models",
    "fit_mle",
    "GHParameters",
    "Structure",
    "SurvivalDataset",
    "log_likelihood",
    "ProfileCurve",
    "likelihood_region",
    "model_pni",
    "pni_flag",
    "profile_scan",
    "RedundancyReport",
    "bootstrap_criterion_probability",
    "diagnose",
    "effective_sample_size",
    "hellinger_threshold",
    "hessian_method",
    "kl_threshold",
    "min_distance_to_weibull",
    "min_n_eff_required",
    "ClassificationTable",
    "ScenarioSpec",
    "calibrate_censoring",
    "run_scenario",
    "sample_gh",
]

__version__ = "0.1.0"
