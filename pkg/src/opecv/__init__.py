"""Off-policy evaluation estimators and cross-validated estimator selection."""

from .banditgen import (
    BanditProblem,
    ClassificationDataset,
    FiniteContextBandit,
    build_problem,
    linear_finite_bandit,
    load_classification_csv,
    load_dataset,
    synthetic_classification,
)
from .core import (
    InvalidInputError,
    LoggedDataset,
    LoggedSample,
    NumericalDegeneracyError,
    PerSampleValues,
    SoftmaxLinearPolicy,
    derive_seed,
    make_rng,
    mc_split,
    propensity_weight,
    propensity_weights,
    split_sizes,
)
from .estimators import Estimate, EstimatorSpec, Kind, contributions, estimate
from .reward_model import RewardModel, fit_ridge
from .selection import Evaluator, SelectionResult, ocv_select, selection_regret, slope_select
from .tuning import (
    HyperGrid,
    default_grid,
    theory_truncation,
    tune_dr_shrink,
    tune_ips_lambda,
    tune_switch_dr,
)

__version__ = "0.1.0"

__all__ = [
    "BanditProblem", "ClassificationDataset", "FiniteContextBandit", "build_problem",
    "linear_finite_bandit", "load_classification_csv", "load_dataset", "synthetic_classification",
    "InvalidInputError", "LoggedDataset", "LoggedSample", "NumericalDegeneracyError",
    "PerSampleValues", "SoftmaxLinearPolicy", "derive_seed", "make_rng", "mc_split",
    "propensity_weight", "propensity_weights", "split_sizes",
    "Estimate", "EstimatorSpec", "Kind", "contributions", "estimate",
    "RewardModel", "fit_ridge",
    "Evaluator", "SelectionResult", "ocv_select", "selection_regret", "slope_select",
    "HyperGrid", "default_grid", "theory_truncation", "tune_dr_shrink", "tune_ips_lambda",
    "tune_switch_dr",
]
