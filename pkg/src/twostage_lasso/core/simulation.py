"""
Monte Carlo bench for the two-stage estimators.

Eight example settings (p = 500, s = 10, sigma = 1) vary the sample size, the
Toeplitz correlation of the predictors and the sign pattern of beta*. The design
is drawn once per experiment and kept fixed; every replicate draws fresh noise
from its own stream, so any single replicate can be re-derived in isolation.
"""

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
from joblib import Parallel, delayed

from .bootstrap import CSV_FLOAT_FORMAT, bootstrap_ensemble, confidence_intervals, mallows_check
from .lasso import GramCache
from .model import RegressionDataset, TwoStageEstimate, standardize
from .pipeline import LassoSelection, SecondStage, TwoStagePipeline, refit_support, select_lasso
from .second_stage import extract_support
from .utils import (
    DEFAULT_B,
    DEFAULT_CV_FOLDS,
    DEFAULT_LEVEL,
    DEFAULT_N_LAMBDA,
    BootstrapMethod,
    CiKind,
    EstimatorKind,
    FactorizationFailure,
    InvalidConfig,
    Stream,
    TwoStageError,
    readonly,
    rng_stream,
)

logger = logging.getLogger(__name__)

# example id -> (n, rho, beta case)
EXAMPLE_SETTINGS: Dict[int, Tuple[int, float, int]] = {
    1: (200, 0.0, 1),
    2: (400, 0.0, 1),
    3: (200, 0.5, 1),
    4: (400, 0.5, 1),
    5: (200, 0.0, 2),
    6: (400, 0.0, 2),
    7: (200, 0.5, 2),
    8: (400, 0.5, 2),
}

LARGE_COEF, SMALL_COEF = 1.5, 0.75
CASE_2_SIGNS = (1, 1, -1, -1, 1, 1, -1, 1, -1, -1)

ESTIMATION_METHODS: Dict[str, EstimatorKind] = {
    "Lasso": EstimatorKind.LASSO,
    "Lasso+mLS": EstimatorKind.MLS,
    "Lasso+Ridge": EstimatorKind.RIDGE,
    "Lasso+OLS": EstimatorKind.OLS,
}
DEFAULT_ESTIMATION_METHODS = ("Lasso", "Lasso+mLS", "Lasso+Ridge")

# residual/paired bootstrap around the Lasso (RBL, PBL) and the two-stage fits
COVERAGE_METHODS: Dict[str, Tuple[EstimatorKind, BootstrapMethod]] = {
    "RBL": (EstimatorKind.LASSO, BootstrapMethod.RESIDUAL),
    "RBLmLS": (EstimatorKind.MLS, BootstrapMethod.RESIDUAL),
    "PBL": (EstimatorKind.LASSO, BootstrapMethod.PAIRED),
    "RBLRidge": (EstimatorKind.RIDGE, BootstrapMethod.RESIDUAL),
}
DEFAULT_COVERAGE_METHODS = ("RBL", "RBLmLS", "PBL")


@dataclass(frozen=True)
class ExperimentConfig:
    """
    One simulation setting. `from_example` fills n, rho and the beta case from
    the example registry; any field can be overridden to scale a run down.
    `lam` fixes the Lasso penalty; None cross-validates it per replicate.
    """

    example_id: int
    n: int
    p: int = 500
    s: int = 10
    rho: float = 0.0
    beta_case: int = 1
    sigma: float = 1.0
    n_reps: int = 100
    B: int = DEFAULT_B
    level: float = DEFAULT_LEVEL
    test_size: int = 500
    seed: int = 0
    n_lambda: int = DEFAULT_N_LAMBDA
    cv_folds: int = DEFAULT_CV_FOLDS
    lam: float | None = None

    def __post_init__(self) -> None:
        if self.n < 2 or self.p < 1:
            raise InvalidConfig(f"Need n >= 2 and p >= 1, got n={self.n}, p={self.p}")
        if not 0 <= self.s <= self.p:
            raise InvalidConfig(f"s must lie in [0, p], got {self.s}")
        if not abs(self.rho) < 1.0:
            raise InvalidConfig(f"rho must satisfy |rho| < 1, got {self.rho}")
        if self.beta_case not in (1, 2):
            raise InvalidConfig(f"beta_case must be 1 or 2, got {self.beta_case}")
        if not self.sigma >= 0.0:
            raise InvalidConfig(f"sigma must be nonnegative, got {self.sigma}")
        if self.n_reps < 1 or self.B < 1 or self.test_size < 1:
            raise InvalidConfig("n_reps, B and test_size must be positive")
        if not 0.0 < self.level < 1.0:
            raise InvalidConfig(f"level must lie in (0, 1), got {self.level}")

    @staticmethod
    def from_example(example_id: int, **overrides: Any) -> "ExperimentConfig":
        if example_id not in EXAMPLE_SETTINGS:
            raise InvalidConfig(f"Unknown example {example_id}, expected 1..{len(EXAMPLE_SETTINGS)}")
        n, rho, case = EXAMPLE_SETTINGS[example_id]
        settings: Dict[str, Any] = {"n": n, "rho": rho, "beta_case": case}
        settings.update(overrides)
        return ExperimentConfig(example_id=example_id, **settings)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class FixedDesign(NamedTuple):
    "Noiseless dataset (y = X beta*) on the standardized design, and the held-out test set"

    dataset: RegressionDataset
    X_test: np.ndarray
    y_test: np.ndarray
    design_hash: str


class MetricRecord(NamedTuple):
    method: str
    metric: str
    group: str
    value: float


@dataclass(frozen=True)
class MetricsReport:
    """
    Long-format experiment results, one value per (method, metric, group).

    Estimation runs report bias_sq, mse_mean, mse_sd, pmse_mean and pmse_sd in
    group "all". Coverage runs report coverage_mean and length_mean for the
    basic intervals (percentile_coverage_mean and percentile_length_mean for the
    percentile ones) in groups "nonzero" and "zero", plus per-coordinate values
    with the coordinate index as the group.
    """

    experiment: str
    config: ExperimentConfig
    design_hash: str
    records: Tuple[MetricRecord, ...]
    max_kkt_violation: float = 0.0
    raw: pd.DataFrame | None = field(default=None, compare=False, repr=False)

    def __repr__(self) -> str:
        return f"<MetricsReport: {self.experiment}, example {self.config.example_id}, {len(self.records)} values>"

    def value(self, method: str, metric: str, group: str = "all") -> float:
        for record in self.records:
            if (record.method, record.metric, record.group) == (method, metric, group):
                return record.value
        raise KeyError((method, metric, group))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.records, columns=list(MetricRecord._fields))
        frame.insert(1, "example", self.config.example_id)
        return frame

    def to_csv(self, path: str | Path) -> None:
        self.to_frame().to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)

    def to_dict(self) -> Dict[str, Any]:
        metrics: Dict[str, Dict[str, Dict[str, float]]] = {}
        for record in self.records:
            metrics.setdefault(record.method, {}).setdefault(record.metric, {})[record.group] = record.value
        return {
            "experiment": self.experiment,
            "config": self.config.to_dict(),
            "design_hash": self.design_hash,
            "max_kkt_violation": self.max_kkt_violation,
            "metrics": metrics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def toeplitz_covariance(p: int, rho: float) -> np.ndarray:
    "Sigma_ij = rho^|i - j|"
    if not abs(rho) < 1.0:
        raise InvalidConfig(f"rho must satisfy |rho| < 1, got {rho}")
    if p < 1:
        raise InvalidConfig(f"p must be positive, got {p}")
    return scipy.linalg.toeplitz(rho ** np.arange(p, dtype=np.float64))


def true_beta(case: int, p: int, s: int = 10, magnitudes: Sequence[float] | None = None) -> np.ndarray:
    """
    Coefficient vector with s leading nonzeros.

    By default the first half of the nonzeros are 1.5 and the rest 0.75. Case 1
    keeps them all positive; case 2 applies the signs (+ + - - + + - + - -),
    which needs s = 10. Explicit `magnitudes` replace the default values.
    """
    if not 0 <= s <= p:
        raise InvalidConfig(f"s must lie in [0, {p}], got {s}")
    if magnitudes is None:
        values = np.where(np.arange(s) < (s + 1) // 2, LARGE_COEF, SMALL_COEF)
    else:
        values = np.asarray(magnitudes, dtype=np.float64)
        if values.shape != (s,):
            raise InvalidConfig(f"Expected {s} magnitudes, got {values.shape[0]}")
    match case:
        case 1:
            signs = np.ones(s)
        case 2:
            if s != len(CASE_2_SIGNS):
                raise InvalidConfig(f"Case 2 sign pattern is defined for s = {len(CASE_2_SIGNS)}")
            signs = np.asarray(CASE_2_SIGNS, dtype=np.float64)
        case _:
            raise InvalidConfig(f"Unknown beta case {case}")
    beta = np.zeros(p)
    beta[:s] = signs * values
    return beta


def design_hash(X: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(X, dtype=np.float64).tobytes()).hexdigest()[:16]


def _gaussian_rows(rng: np.random.Generator, size: int, factor: np.ndarray) -> np.ndarray:
    return rng.standard_normal((size, factor.shape[0])) @ factor.T


def _covariance_factor(config: ExperimentConfig) -> np.ndarray:
    sigma = toeplitz_covariance(config.p, config.rho)
    try:
        return scipy.linalg.cholesky(sigma, lower=True)
    except scipy.linalg.LinAlgError as err:
        raise FactorizationFailure(f"Covariance with rho={config.rho} is not positive definite") from err


def generate_fixed_design(config: ExperimentConfig, rng_seed: int | None = None) -> np.ndarray:
    """
    n draws from N(0, Sigma), standardized column by column.

    The draw is keyed on (seed, example id, n), so the same configuration always
    yields the same matrix.

    Raises:
        FactorizationFailure: If Sigma is not positive definite.
    """
    return _simulate_design(config, rng_seed)[0]


def _simulate_design(
    config: ExperimentConfig, rng_seed: int | None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    seed = config.seed if rng_seed is None else rng_seed
    factor = _covariance_factor(config)
    raw = _gaussian_rows(rng_stream(seed, Stream.DESIGN, config.example_id, config.n), config.n, factor)
    placeholder = RegressionDataset(raw, np.zeros(config.n))
    scaled = standardize(placeholder)
    return scaled.dataset.X, scaled.column_means, scaled.column_scales, factor


def fixed_design(config: ExperimentConfig) -> FixedDesign:
    "The fixed design, beta*, and a test set drawn once from the same distribution"
    X, means, scales, factor = _simulate_design(config, None)
    beta = true_beta(config.beta_case, config.p, config.s)
    dataset = RegressionDataset(X, X @ beta, beta, config.sigma, standardized=True)

    rng = rng_stream(config.seed, Stream.TEST_SET, config.example_id, config.n)
    X_test = (_gaussian_rows(rng, config.test_size, factor) - means) / scales
    y_test = X_test @ beta + config.sigma * rng.standard_normal(config.test_size)
    return FixedDesign(dataset, readonly(X_test), readonly(y_test), design_hash(X))


def replicate_dataset(design: FixedDesign, config: ExperimentConfig, replicate: int) -> RegressionDataset:
    "y = X beta* + sigma eps with eps from the replicate's own noise stream"
    ds = design.dataset
    assert ds.beta_true is not None
    noise = rng_stream(config.seed, Stream.NOISE, config.example_id, config.n, replicate).standard_normal(ds.n)
    return ds.with_response(ds.X @ ds.beta_true + config.sigma * noise)


def _lasso_selection(config: ExperimentConfig, replicate: int) -> LassoSelection:
    # CV reruns on every replicate; folds are keyed by the replicate
    return LassoSelection(
        lam=config.lam,
        n_lambda=config.n_lambda,
        cv_folds=config.cv_folds,
        seed=config.seed,
        stream_keys=(replicate,),
    )


def _estimate_replicate(
    design: FixedDesign,
    config: ExperimentConfig,
    replicate: int,
    kinds: Sequence[EstimatorKind],
) -> Tuple[List[np.ndarray], float, str]:
    ds = replicate_dataset(design, config, replicate)
    gram = GramCache(ds.X)
    selection = _lasso_selection(config, replicate)
    try:
        lasso = select_lasso(ds, selection, gram)
        S = extract_support(lasso, selection.zero_tol)
        betas = [np.array(refit_support(ds, S, SecondStage(kind), lasso).beta) for kind in kinds]
    except TwoStageError as err:
        err.add_note(f"in replicate {replicate} of example {config.example_id}")
        raise
    return betas, lasso.kkt_violation, design_hash(ds.X)


def _check_fixed_design(expected: str, hashes: Sequence[str]) -> None:
    if any(h != expected for h in hashes):
        raise TwoStageError("The design matrix changed between replicates")


def run_estimation_experiment(
    config: ExperimentConfig,
    n_jobs: int = 1,
    methods: Sequence[str] = DEFAULT_ESTIMATION_METHODS,
) -> MetricsReport:
    """
    Bias^2, MSE and PMSE of each method over `config.n_reps` fresh-noise replicates.

    All methods in a replicate share one cross-validated Lasso fit. MSE is
    ||b - beta*||^2 per replicate, bias^2 is ||mean(b) - beta*||^2, and PMSE is
    the mean squared error on the fixed test set. Per-replicate values are kept
    in `raw`.
    """
    unknown = [m for m in methods if m not in ESTIMATION_METHODS]
    if unknown:
        raise InvalidConfig(f"Unknown estimation method(s) {unknown}; choose from {list(ESTIMATION_METHODS)}")
    design = fixed_design(config)
    beta_true = design.dataset.beta_true
    assert beta_true is not None
    kinds = [ESTIMATION_METHODS[m] for m in methods]
    logger.info("Estimation experiment on example %d: %d replicates", config.example_id, config.n_reps)

    results = Parallel(n_jobs=n_jobs)(
        delayed(_estimate_replicate)(design, config, r, kinds) for r in range(config.n_reps)
    )
    _check_fixed_design(design.design_hash, [h for _, _, h in results])

    records: List[MetricRecord] = []
    raw_rows: List[Dict[str, Any]] = []
    for index, method in enumerate(methods):
        betas = np.vstack([betas[index] for betas, _, _ in results])
        mse = np.sum((betas - beta_true) ** 2, axis=1)
        pmse = np.mean((design.y_test[:, None] - design.X_test @ betas.T) ** 2, axis=0)
        bias_sq = float(np.sum((betas.mean(axis=0) - beta_true) ** 2))
        ddof = 1 if config.n_reps > 1 else 0
        records += [
            MetricRecord(method, "bias_sq", "all", bias_sq),
            MetricRecord(method, "mse_mean", "all", float(mse.mean())),
            MetricRecord(method, "mse_sd", "all", float(mse.std(ddof=ddof))),
            MetricRecord(method, "pmse_mean", "all", float(pmse.mean())),
            MetricRecord(method, "pmse_sd", "all", float(pmse.std(ddof=ddof))),
        ]
        raw_rows += [
            {"method": method, "replicate": r, "mse": float(mse[r]), "pmse": float(pmse[r])}
            for r in range(config.n_reps)
        ]

    return MetricsReport(
        experiment="estimation",
        config=config,
        design_hash=design.design_hash,
        records=tuple(records),
        max_kkt_violation=max(kkt for _, kkt, _ in results),
        raw=pd.DataFrame(raw_rows),
    )


def _coverage_replicate(
    design: FixedDesign,
    config: ExperimentConfig,
    replicate: int,
    methods: Sequence[str],
    n_jobs: int,
) -> Tuple[Dict[str, np.ndarray], float, str]:
    ds = replicate_dataset(design, config, replicate)
    beta_true = design.dataset.beta_true
    assert beta_true is not None
    gram = GramCache(ds.X)
    selection = _lasso_selection(config, replicate)
    # rows: basic coverage, basic length, percentile coverage, percentile length
    out: Dict[str, np.ndarray] = {}
    try:
        lasso = select_lasso(ds, selection, gram)
        S = extract_support(lasso, selection.zero_tol)
        worst = lasso.kkt_violation
        for index, method in enumerate(methods):
            kind, resampling = COVERAGE_METHODS[method]
            pipeline = TwoStagePipeline(selection, SecondStage(kind))
            estimate: TwoStageEstimate = refit_support(ds, S, pipeline.second_stage, lasso)
            ensemble = bootstrap_ensemble(
                ds,
                estimate,
                pipeline,
                B=config.B,
                method=resampling,
                rng_seed=config.seed,
                stream_keys=(replicate, index),
                gram=gram,
                n_jobs=n_jobs,
            )
            worst = max(worst, ensemble.max_kkt_violation)
            basic = confidence_intervals(ensemble, config.level, CiKind.BASIC)
            percentile = confidence_intervals(ensemble, config.level, CiKind.PERCENTILE)
            out[method] = np.vstack(
                [basic.covers(beta_true), basic.lengths, percentile.covers(beta_true), percentile.lengths]
            ).astype(np.float64)
    except TwoStageError as err:
        err.add_note(f"in replicate {replicate} of example {config.example_id}")
        raise
    return out, worst, design_hash(ds.X)


def worker_budget(n_workers: int, n_reps: int) -> Tuple[int, int]:
    "Split a worker budget into replicate-level and bootstrap-level parallelism"
    if n_workers < 1:
        raise InvalidConfig(f"The worker budget must be positive, got {n_workers}")
    outer = min(n_workers, n_reps)
    return outer, max(1, n_workers // outer)


def run_coverage_experiment(
    config: ExperimentConfig,
    n_jobs: int = 1,
    methods: Sequence[str] = DEFAULT_COVERAGE_METHODS,
) -> MetricsReport:
    """
    Coverage and length of bootstrap confidence intervals for beta*.

    For every replicate each method fits its estimator, draws `config.B`
    bootstrap replicates from stream keys (replicate, method index), and forms
    basic and percentile intervals at `config.level`. Results are averaged per
    coordinate and over the nonzero (j < s) and zero (j >= s) groups.
    """
    unknown = [m for m in methods if m not in COVERAGE_METHODS]
    if unknown:
        raise InvalidConfig(f"Unknown coverage method(s) {unknown}; choose from {list(COVERAGE_METHODS)}")
    design = fixed_design(config)
    outer, inner = worker_budget(n_jobs, config.n_reps)
    logger.info(
        "Coverage experiment on example %d: %d replicates x B=%d (%d x %d workers)",
        config.example_id,
        config.n_reps,
        config.B,
        outer,
        inner,
    )
    results = Parallel(n_jobs=outer)(
        delayed(_coverage_replicate)(design, config, r, methods, inner) for r in range(config.n_reps)
    )
    _check_fixed_design(design.design_hash, [h for _, _, h in results])

    groups = {"nonzero": np.arange(config.s), "zero": np.arange(config.s, config.p)}
    names = ("coverage", "length", "percentile_coverage", "percentile_length")
    records: List[MetricRecord] = []
    for method in methods:
        means = np.mean([table[method] for table, _, _ in results], axis=0)
        for row, name in enumerate(names):
            for group, idx in groups.items():
                if idx.size:
                    records.append(MetricRecord(method, f"{name}_mean", group, float(means[row, idx].mean())))
        for row, name in enumerate(names):
            records += [MetricRecord(method, name, str(j), float(v)) for j, v in enumerate(means[row])]

    return MetricsReport(
        experiment="coverage",
        config=config,
        design_hash=design.design_hash,
        records=tuple(records),
        max_kkt_violation=max(kkt for _, kkt, _ in results),
    )


def _pipeline_for(spec: str, config: ExperimentConfig, replicate: int) -> TwoStagePipeline:
    pipeline = TwoStagePipeline.from_str(spec, lasso=_lasso_selection(config, replicate))
    if pipeline is None:
        raise InvalidConfig(f"Invalid estimator {spec!r}")
    return pipeline


def _replicate_estimate(design: FixedDesign, config: ExperimentConfig, spec: str, replicate: int) -> np.ndarray:
    ds = replicate_dataset(design, config, replicate)
    return np.array(_pipeline_for(spec, config, replicate).fit(ds).beta)


def sampling_distribution_draws(
    config: ExperimentConfig,
    method: str,
    j: int,
    n_draws: int,
    n_jobs: int = 1,
) -> np.ndarray:
    """
    sqrt(n)(b_j - beta*_j) over `n_draws` fresh-noise replicates.

    Args:
        method (str): An estimator string such as `lasso` or `lasso+mls`.
        j (int): Zero-based coordinate.
    """
    if not 0 <= j < config.p:
        raise InvalidConfig(f"Coordinate {j} out of range [0, {config.p})")
    design = fixed_design(config)
    beta_true = design.dataset.beta_true
    assert beta_true is not None
    betas = _replicate_estimates(design, config, method, n_draws, n_jobs)
    return math.sqrt(config.n) * (betas[:, j] - beta_true[j])


def _replicate_estimates(
    design: FixedDesign, config: ExperimentConfig, method: str, n_draws: int, n_jobs: int
) -> np.ndarray:
    if n_draws < 1:
        raise InvalidConfig(f"n_draws must be positive, got {n_draws}")
    _pipeline_for(method, config, 0)
    betas = Parallel(n_jobs=n_jobs)(
        delayed(_replicate_estimate)(design, config, method, r) for r in range(n_draws)
    )
    return np.vstack(betas)


def run_consistency_experiment(
    config: ExperimentConfig,
    n_values: Sequence[int] = (100, 200, 400),
    n_draws: int = 500,
    B: int = DEFAULT_B,
    method: str = "lasso+mls",
    n_jobs: int = 1,
) -> MetricsReport:
    """
    Median coordinatewise Mallows distance between the sampling distribution of
    sqrt(n)(b - beta*) and its residual-bootstrap approximation, over the true
    support, for each sample size in `n_values`.

    The bootstrap is run around the fit to one extra replicate (index n_draws)
    that is not among the sampling draws.
    """
    records: List[MetricRecord] = []
    hashes: List[str] = []
    worst = 0.0
    for n in n_values:
        sized = replace(config, n=n, B=B)
        design = fixed_design(sized)
        hashes.append(design.design_hash)
        beta_true = design.dataset.beta_true
        assert beta_true is not None
        draws = _replicate_estimates(design, sized, method, n_draws, n_jobs)

        ds = replicate_dataset(design, sized, n_draws)
        pipeline = _pipeline_for(method, sized, n_draws)
        estimate = pipeline.fit(ds)
        ensemble = bootstrap_ensemble(
            ds, estimate, pipeline, B=B, rng_seed=sized.seed, stream_keys=(n_draws,), n_jobs=n_jobs
        )
        worst = max(worst, estimate.selection_kkt, ensemble.max_kkt_violation)
        distances = [mallows_check(draws, ensemble, j, beta_true) for j in range(sized.s)]
        median = float(np.median(distances)) if distances else 0.0
        logger.info("n=%d: median Mallows distance %.4g", n, median)
        records.append(MetricRecord(method, "mallows_median", str(n), median))

    return MetricsReport(
        experiment="consistency",
        config=config,
        design_hash=",".join(hashes),
        records=tuple(records),
        max_kkt_violation=worst,
    )
