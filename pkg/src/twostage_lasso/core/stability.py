"""
Stability selection with the randomized Lasso.

Each draw fits the Lasso on a subsample of floor(n/2) rows with every penalty
weight independently set to alpha (probability p_w) or 1, and records which
predictors are nonzero along a penalty grid. Selection frequencies over draws
give the profile; the stable set keeps predictors whose best frequency reaches
pi_thr.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from .lasso import GramCache, fit_lasso, kkt_max_violation, lambda_grid, lasso_objective
from .model import LassoFit, RegressionDataset, SupportSet
from .utils import (
    DEFAULT_ALPHA,
    DEFAULT_MAX_ITERS,
    DEFAULT_N_SUBSAMPLES,
    DEFAULT_P_W,
    DEFAULT_SS_N_LAMBDA,
    DEFAULT_SS_RATIO,
    DEFAULT_TOL,
    DimensionMismatch,
    InvalidConfig,
    Stream,
    SubsampleFailure,
    TwoStageError,
    readonly,
    rng_stream,
)

logger = logging.getLogger(__name__)

EXACT_EIGEN_MAX_P: int = 20


@dataclass(frozen=True)
class SelectionProfile:
    """
    pi[k, l] is the fraction of subsample draws in which predictor k is nonzero
    at lambda_values[l].
    """

    lambda_values: np.ndarray
    pi: np.ndarray
    n_subsamples: int
    alpha: float
    p_w: float
    max_kkt_violation: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "lambda_values", readonly(self.lambda_values))
        object.__setattr__(self, "pi", readonly(self.pi))

    def __repr__(self) -> str:
        return f"<SelectionProfile: p={self.pi.shape[0]}, {self.pi.shape[1]} penalties, {self.n_subsamples} draws>"

    def max_frequency(self) -> np.ndarray:
        return self.pi.max(axis=1)


class SparseEigenvalues(NamedTuple):
    "Search bounds: phi_min is an upper bound on the true minimum, phi_max a lower bound on the maximum"

    phi_min: float
    phi_max: float


def _check_randomization(alpha: float, p_w: float) -> None:
    if not 0.0 < alpha <= 1.0:
        raise InvalidConfig(f"alpha must lie in (0, 1], got {alpha}")
    if not 0.0 < p_w < 1.0:
        raise InvalidConfig(f"p_w must lie in (0, 1), got {p_w}")


def draw_weights(rng: np.random.Generator, p: int, alpha: float, p_w: float) -> np.ndarray:
    "W_k = alpha with probability p_w, else 1"
    return np.where(rng.random(p) < p_w, alpha, 1.0)


def fit_randomized_lasso(
    ds: RegressionDataset,
    lam: float,
    alpha: float = DEFAULT_ALPHA,
    p_w: float = DEFAULT_P_W,
    rng: np.random.Generator | None = None,
    weights: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> LassoFit:
    """
    Solve min ||y - X beta||^2 + lam * sum_k |beta_k| / W_k.

    Column k is multiplied by W_k, the plain Lasso is solved on the rescaled
    design and the coefficients are multiplied back by W_k. The inner tolerance
    is tol * min(W), which bounds the weighted KKT residual by tol.

    Args:
        rng (np.random.Generator | None): Source of the weight draw.
        weights (np.ndarray | None): Fixed weights instead of a draw.
    """
    _check_randomization(alpha, p_w)
    if weights is None:
        if rng is None:
            raise InvalidConfig("Either rng or weights must be given")
        weights = draw_weights(rng, ds.p, alpha, p_w)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (ds.p,):
        raise DimensionMismatch(f"weights have shape {weights.shape}, expected ({ds.p},)")
    if not np.all(weights > 0.0):
        raise InvalidConfig("weights must be positive")

    rescaled = RegressionDataset(ds.X * weights, ds.y)
    inner = fit_lasso(rescaled, lam, tol=tol * float(weights.min()), max_iters=max_iters)
    beta = inner.beta * weights
    return LassoFit(
        beta,
        lam,
        inner.n_iters,
        kkt_max_violation(ds, beta, lam, weights),
        lasso_objective(ds, beta, lam, weights),
        weights=weights,
    )


def _subsample_selection(
    ds: RegressionDataset,
    lambda_values: np.ndarray,
    alpha: float,
    p_w: float,
    rng_seed: int,
    draw: int,
    replace: bool,
    tol: float,
    max_iters: int,
) -> Tuple[np.ndarray, float]:
    rng = rng_stream(rng_seed, Stream.SUBSAMPLE, draw)
    rows = rng.choice(ds.n, ds.n // 2, replace=replace)
    weights = draw_weights(rng, ds.p, alpha, p_w)
    sub = RegressionDataset(ds.X[rows] * weights, ds.y[rows])
    cache = GramCache(sub.X)
    inner_tol = tol * float(weights.min())

    selected = np.zeros((ds.p, lambda_values.shape[0]), dtype=bool)
    worst = 0.0
    init: np.ndarray | None = None
    try:
        for col, lam in enumerate(lambda_values):
            fit = fit_lasso(sub, float(lam), init=init, tol=inner_tol, max_iters=max_iters, gram=cache)
            selected[:, col] = fit.beta != 0.0
            worst = max(worst, fit.kkt_violation / float(weights.min()))
            init = np.array(fit.beta)
    except TwoStageError as err:
        raise SubsampleFailure(draw, str(err)) from err
    return selected, worst


def default_selection_grid(ds: RegressionDataset) -> np.ndarray:
    "Penalty grid on the half-sample scale: the full-data grid times floor(n/2)/n"
    grid = lambda_grid(ds, DEFAULT_SS_N_LAMBDA, DEFAULT_SS_RATIO)
    return grid.values * ((ds.n // 2) / ds.n)


def selection_profile(
    ds: RegressionDataset,
    lambda_values: Sequence[float] | np.ndarray | None = None,
    n_subsamples: int = DEFAULT_N_SUBSAMPLES,
    alpha: float = DEFAULT_ALPHA,
    p_w: float = DEFAULT_P_W,
    rng_seed: int = 0,
    replace: bool = True,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    n_jobs: int = 1,
) -> SelectionProfile:
    """
    Selection frequencies of the randomized Lasso over subsample draws.

    Draw b uses its own stream (seed, SUBSAMPLE, b) for the rows and the weights,
    so the profile does not depend on how draws are scheduled. Rows are drawn
    with replacement unless `replace` is False.

    Raises:
        InvalidConfig: If n < 4, n_subsamples < 1 or the penalties are invalid.
        SubsampleFailure: If the solver fails on any draw.
    """
    _check_randomization(alpha, p_w)
    if ds.n < 4:
        raise InvalidConfig(f"Stability selection needs n >= 4, got {ds.n}")
    if n_subsamples < 1:
        raise InvalidConfig(f"n_subsamples must be positive, got {n_subsamples}")
    values = default_selection_grid(ds) if lambda_values is None else np.asarray(lambda_values, dtype=np.float64)
    if values.ndim != 1 or values.size == 0 or np.any(values <= 0.0) or np.any(np.diff(values) >= 0.0):
        raise InvalidConfig("lambda_values must be a nonempty, strictly decreasing list of positive values")

    results = Parallel(n_jobs=n_jobs)(
        delayed(_subsample_selection)(ds, values, alpha, p_w, rng_seed, draw, replace, tol, max_iters)
        for draw in range(n_subsamples)
    )
    counts = np.zeros((ds.p, values.shape[0]))
    for selected, _ in results:
        counts += selected
    worst = max(kkt for _, kkt in results)
    logger.info("Selection profile from %d subsamples over %d penalties", n_subsamples, values.shape[0])
    return SelectionProfile(values, counts / n_subsamples, n_subsamples, alpha, p_w, worst)


def stable_set(profile: SelectionProfile, pi_thr: float) -> SupportSet:
    "Predictors whose selection frequency reaches pi_thr at some penalty"
    if not 0.5 < pi_thr < 1.0:
        raise InvalidConfig(f"pi_thr must lie in (0.5, 1), got {pi_thr}")
    return SupportSet.from_mask(profile.max_frequency() >= pi_thr)


def sparse_eigenvalue_estimate(
    ds: RegressionDataset,
    k: float,
    n_trials: int = 200,
    rng_seed: int = 0,
    exact: bool = False,
) -> SparseEigenvalues:
    """
    Extreme values of ||X_K a|| / ||a|| over column subsets K of size ceil(k).

    The random search over `n_trials` subsets can only overestimate phi_min and
    underestimate phi_max. `exact` enumerates every subset and is limited to
    p <= 20.
    """
    size = math.ceil(k)
    if not 1 <= size <= ds.p:
        raise InvalidConfig(f"Subset size must lie in [1, {ds.p}], got {size}")
    if exact:
        if ds.p > EXACT_EIGEN_MAX_P:
            raise InvalidConfig(f"Exact enumeration is limited to p <= {EXACT_EIGEN_MAX_P}")
        subsets: Sequence[Sequence[int]] = list(itertools.combinations(range(ds.p), size))
    else:
        if n_trials < 1:
            raise InvalidConfig(f"n_trials must be positive, got {n_trials}")
        rng = rng_stream(rng_seed, Stream.EIGEN_SEARCH)
        subsets = [np.sort(rng.choice(ds.p, size, replace=False)) for _ in range(n_trials)]

    phi_min, phi_max = math.inf, 0.0
    for subset in subsets:
        sigma = np.linalg.svd(ds.X[:, list(subset)], compute_uv=False)
        smallest = 0.0 if size > ds.n else float(sigma[-1])
        phi_min = min(phi_min, smallest)
        phi_max = max(phi_max, float(sigma[0]))
    return SparseEigenvalues(phi_min, phi_max)
