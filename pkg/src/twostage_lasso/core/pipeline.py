import logging
import re
from dataclasses import dataclass, replace
from typing import Optional, Tuple, TypeAlias

import numpy as np

from .lasso import GramCache, fit_lasso, fit_lasso_cv
from .model import LassoFit, RegressionDataset, SupportSet, TwoStageEstimate
from .second_stage import (
    default_tau,
    extract_support,
    fit_mls,
    fit_ols_after,
    fit_ridge_after,
    lasso_estimate,
    ridge_mu,
)
from .stability import selection_profile, stable_set
from .utils import (
    DEFAULT_ALPHA,
    DEFAULT_CV_FOLDS,
    DEFAULT_MAX_ITERS,
    DEFAULT_N_LAMBDA,
    DEFAULT_N_SUBSAMPLES,
    DEFAULT_P_W,
    DEFAULT_PI_THR,
    DEFAULT_TOL,
    EstimatorKind,
    InvalidConfig,
    SelectorKind,
)

logger = logging.getLogger(__name__)

ESTIMATOR_PATTERN = re.compile(
    r"^(?P<selector>lasso|ss)(?:\+(?P<second_stage>mls|ridge|ols))?$", re.IGNORECASE
)


@dataclass(frozen=True)
class LassoSelection:
    """
    Lasso selection stage. `lam` fixes the penalty; None selects it by K-fold
    cross-validation with the given grid settings.
    """

    lam: float | None = None
    n_lambda: int = DEFAULT_N_LAMBDA
    ratio: float | None = None
    cv_folds: int = DEFAULT_CV_FOLDS
    seed: int = 0
    stream_keys: Tuple[int, ...] = ()
    tol: float = DEFAULT_TOL
    max_iters: int = DEFAULT_MAX_ITERS
    zero_tol: float = 0.0


@dataclass(frozen=True)
class StabilitySelection:
    lambda_values: Tuple[float, ...] | None = None
    n_subsamples: int = DEFAULT_N_SUBSAMPLES
    alpha: float = DEFAULT_ALPHA
    p_w: float = DEFAULT_P_W
    pi_thr: float = DEFAULT_PI_THR
    replace: bool = True
    seed: int = 0
    tol: float = DEFAULT_TOL
    max_iters: int = DEFAULT_MAX_ITERS


Selection: TypeAlias = LassoSelection | StabilitySelection


@dataclass(frozen=True)
class SecondStage:
    "tau and mu default to 1/n when left as None"

    kind: EstimatorKind
    tau: float | None = None
    mu: float | None = None


def select_lasso(
    ds: RegressionDataset, selection: LassoSelection, gram: GramCache | None = None, n_jobs: int = 1
) -> LassoFit:
    "Run the Lasso selection stage with a fixed or cross-validated penalty"
    if selection.lam is not None:
        return fit_lasso(ds, selection.lam, tol=selection.tol, max_iters=selection.max_iters, gram=gram)
    _, fit = fit_lasso_cv(
        ds,
        n_lambda=selection.n_lambda,
        ratio=selection.ratio,
        k=selection.cv_folds,
        rng_seed=selection.seed,
        stream_keys=selection.stream_keys,
        tol=selection.tol,
        max_iters=selection.max_iters,
        n_jobs=n_jobs,
        gram=gram,
    )
    return fit


def refit_support(
    ds: RegressionDataset,
    S: SupportSet,
    second_stage: SecondStage,
    lasso: LassoFit | None = None,
    zero_tol: float = 0.0,
) -> TwoStageEstimate:
    """
    Apply the second stage to a selected support.

    Raises:
        InvalidConfig: If the LASSO kind is requested without a Lasso fit.
    """
    match second_stage.kind:
        case EstimatorKind.MLS:
            tau = default_tau(ds.n) if second_stage.tau is None else second_stage.tau
            estimate = fit_mls(ds, S, tau)
        case EstimatorKind.RIDGE:
            mu = ridge_mu(ds.n) if second_stage.mu is None else second_stage.mu
            estimate = fit_ridge_after(ds, S, mu)
        case EstimatorKind.OLS:
            estimate = fit_ols_after(ds, S)
        case EstimatorKind.LASSO:
            if lasso is None:
                raise InvalidConfig("The Lasso estimate needs the selection-stage fit")
            estimate = lasso_estimate(lasso, zero_tol)
        case _:
            raise ValueError(f"Unexpected estimator kind encountered: {second_stage.kind}")
    if lasso is not None:
        estimate = replace(estimate, lam=lasso.lam, selection_kkt=lasso.kkt_violation)
    return estimate


@dataclass(frozen=True)
class TwoStagePipeline:
    """
    A selection stage followed by a second stage, written `lasso+mls`,
    `lasso+ridge`, `lasso+ols`, `ss+mls`, ... or just `lasso` for the plain Lasso.
    """

    selection: Selection
    second_stage: SecondStage

    def __post_init__(self) -> None:
        if isinstance(self.selection, StabilitySelection) and self.second_stage.kind == EstimatorKind.LASSO:
            raise InvalidConfig("Stability selection needs a second stage (mls, ridge or ols)")

    def __repr__(self) -> str:
        return f"<TwoStagePipeline: {str(self)}, selection={self.selection}, second_stage={self.second_stage}>"

    def __str__(self) -> str:
        selector = "lasso" if isinstance(self.selection, LassoSelection) else "ss"
        if self.second_stage.kind == EstimatorKind.LASSO:
            return selector
        return f"{selector}+{self.second_stage.kind}"

    @property
    def selector(self) -> SelectorKind:
        return SelectorKind.LASSO if isinstance(self.selection, LassoSelection) else SelectorKind.STABILITY

    @staticmethod
    def from_str(
        spec: str,
        lasso: LassoSelection | None = None,
        stability: StabilitySelection | None = None,
        tau: float | None = None,
        mu: float | None = None,
    ) -> Optional["TwoStagePipeline"]:
        """
        Build a pipeline from its textual form, e.g. `lasso+mls` or `ss+ridge`.

        Args:
            spec (str): The estimator string (case-insensitive).
            lasso (LassoSelection | None): Settings used when the selector is `lasso`.
            stability (StabilitySelection | None): Settings used when the selector is `ss`.
            tau (float | None): mLS threshold.
            mu (float | None): Ridge penalty.

        Returns:
            Optional[TwoStagePipeline]: None if `spec` is not a valid estimator string.
        """
        match = ESTIMATOR_PATTERN.match(spec.strip())
        if not match:
            return None
        stage2 = match.group("second_stage")
        kind = EstimatorKind.LASSO if stage2 is None else EstimatorKind.from_str(stage2)
        selection: Selection
        if SelectorKind.from_str(match.group("selector")) == SelectorKind.LASSO:
            selection = lasso if lasso is not None else LassoSelection()
        else:
            if kind == EstimatorKind.LASSO:
                return None
            selection = stability if stability is not None else StabilitySelection()
        return TwoStagePipeline(selection, SecondStage(kind, tau, mu))

    def with_lambda(self, lam: float) -> "TwoStagePipeline":
        "The same pipeline with the Lasso penalty fixed (stability selection is left unchanged)"
        if isinstance(self.selection, LassoSelection):
            return replace(self, selection=replace(self.selection, lam=lam))
        return self

    def fit(self, ds: RegressionDataset, gram: GramCache | None = None, n_jobs: int = 1) -> TwoStageEstimate:
        "Run selection, then the second stage on the selected support"
        selection = self.selection
        if isinstance(selection, LassoSelection):
            lasso = select_lasso(ds, selection, gram, n_jobs)
            S = extract_support(lasso, selection.zero_tol)
            return refit_support(ds, S, self.second_stage, lasso, selection.zero_tol)

        values = None if selection.lambda_values is None else np.asarray(selection.lambda_values)
        profile = selection_profile(
            ds,
            values,
            n_subsamples=selection.n_subsamples,
            alpha=selection.alpha,
            p_w=selection.p_w,
            rng_seed=selection.seed,
            replace=selection.replace,
            tol=selection.tol,
            max_iters=selection.max_iters,
            n_jobs=n_jobs,
        )
        S = stable_set(profile, selection.pi_thr)
        estimate = refit_support(ds, S, self.second_stage)
        return replace(
            estimate,
            selector=SelectorKind.STABILITY,
            pi_thr=selection.pi_thr,
            selection_kkt=profile.max_kkt_violation,
        )


def fit_two_stage(
    ds: RegressionDataset, stage1: Selection, stage2: SecondStage, n_jobs: int = 1
) -> TwoStageEstimate:
    "Selection (Lasso or stability selection) followed by mLS, Ridge, OLS or no refit"
    return TwoStagePipeline(stage1, stage2).fit(ds, n_jobs=n_jobs)
