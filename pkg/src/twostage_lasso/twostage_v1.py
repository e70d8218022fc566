from twostage_lasso.core.bootstrap import (
    BootstrapEnsemble,
    IntervalSet,
    bootstrap_ensemble,
    confidence_intervals,
    mallows_check,
    wasserstein2_1d,
)
from twostage_lasso.core.diagnostics import (
    IcReport,
    c11_min_eigenvalue,
    design_leverage_statistic,
    irrepresentable_check,
    qq_normality_score,
    sign_consistency_rate,
)
from twostage_lasso.core.lasso import (
    CvResult,
    LambdaGrid,
    cross_validate,
    fit_lasso,
    fit_lasso_cv,
    kkt_max_violation,
    lambda_grid,
    lasso_path,
)
from twostage_lasso.core.model import (
    LassoFit,
    RegressionDataset,
    SupportSet,
    TwoStageEstimate,
    destandardize_coefficients,
    read_csv,
    standardize,
    validate_dataset,
)
from twostage_lasso.core.pipeline import (
    LassoSelection,
    SecondStage,
    StabilitySelection,
    TwoStagePipeline,
    fit_two_stage,
)
from twostage_lasso.core.second_stage import extract_support, fit_mls, fit_ols_after, fit_ridge_after
from twostage_lasso.core.simulation import (
    ExperimentConfig,
    MetricsReport,
    generate_fixed_design,
    run_consistency_experiment,
    run_coverage_experiment,
    run_estimation_experiment,
    sampling_distribution_draws,
    toeplitz_covariance,
    true_beta,
)
from twostage_lasso.core.stability import (
    SelectionProfile,
    fit_randomized_lasso,
    selection_profile,
    sparse_eigenvalue_estimate,
    stable_set,
)
from twostage_lasso.core.utils import BootstrapMethod, CiKind, EstimatorKind, TwoStageError

__all__ = [
    "BootstrapEnsemble",
    "BootstrapMethod",
    "CiKind",
    "CvResult",
    "EstimatorKind",
    "ExperimentConfig",
    "IcReport",
    "IntervalSet",
    "LambdaGrid",
    "LassoFit",
    "LassoSelection",
    "MetricsReport",
    "RegressionDataset",
    "SecondStage",
    "SelectionProfile",
    "StabilitySelection",
    "SupportSet",
    "TwoStageError",
    "TwoStageEstimate",
    "TwoStagePipeline",
    "bootstrap_ensemble",
    "c11_min_eigenvalue",
    "confidence_intervals",
    "cross_validate",
    "design_leverage_statistic",
    "destandardize_coefficients",
    "extract_support",
    "fit_lasso",
    "fit_lasso_cv",
    "fit_mls",
    "fit_ols_after",
    "fit_randomized_lasso",
    "fit_ridge_after",
    "fit_two_stage",
    "generate_fixed_design",
    "irrepresentable_check",
    "kkt_max_violation",
    "lambda_grid",
    "lasso_path",
    "mallows_check",
    "qq_normality_score",
    "read_csv",
    "run_consistency_experiment",
    "run_coverage_experiment",
    "run_estimation_experiment",
    "sampling_distribution_draws",
    "selection_profile",
    "sign_consistency_rate",
    "sparse_eigenvalue_estimate",
    "stable_set",
    "standardize",
    "toeplitz_covariance",
    "true_beta",
    "validate_dataset",
    "wasserstein2_1d",
]
