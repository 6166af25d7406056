"""Doubly-robust counterfactual-mean estimation with kernel U-statistic
bias corrections, a Monte Carlo coverage harness, numerical verification of
the worst-case lower-bound constructions, and a partially linear logistic
extension."""

from .core import (
    CrossfitResult,
    Dataset,
    FoldAssignment,
    LogisticModel,
    NuisanceValues,
    Observation,
    crossfit_nuisances,
    fit_logistic,
    load_dataset_csv,
    make_folds,
    validate,
)
from .errors import DrustatError, EstimationError, ValidationError
from .estimators import (
    EstimateReport,
    aipw,
    correction_main,
    correction_mu,
    correction_omega,
    default_bandwidth,
    estimate,
    influence_values,
    select_bandwidth_cv,
)
from .kernels import KernelSpec, kernel_eval, kh, pair_stats, pairwise_weighted_sum
from .lowerbounds import (
    BumpBasis,
    ConstructionPair,
    VerificationReport,
    build_pair,
    make_bump_basis,
    verify_pair,
)
from .plm_logit import PlmData, PlmReport, plm_moment, solve_theta
from .simulation import (
    DgpSpec,
    SimResults,
    SimulationConfig,
    generate_dataset,
    perturbed_nuisance,
    run_monte_carlo,
    true_psi,
)

__version__ = "0.1.0"

__all__ = [
    "CrossfitResult",
    "Dataset",
    "FoldAssignment",
    "LogisticModel",
    "NuisanceValues",
    "Observation",
    "crossfit_nuisances",
    "fit_logistic",
    "load_dataset_csv",
    "make_folds",
    "validate",
    "DrustatError",
    "EstimationError",
    "ValidationError",
    "EstimateReport",
    "aipw",
    "correction_main",
    "correction_mu",
    "correction_omega",
    "default_bandwidth",
    "estimate",
    "influence_values",
    "select_bandwidth_cv",
    "KernelSpec",
    "kernel_eval",
    "kh",
    "pair_stats",
    "pairwise_weighted_sum",
    "BumpBasis",
    "ConstructionPair",
    "VerificationReport",
    "build_pair",
    "make_bump_basis",
    "verify_pair",
    "PlmData",
    "PlmReport",
    "plm_moment",
    "solve_theta",
    "DgpSpec",
    "SimResults",
    "SimulationConfig",
    "generate_dataset",
    "perturbed_nuisance",
    "run_monte_carlo",
    "true_psi",
]
