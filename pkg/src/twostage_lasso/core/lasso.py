import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from .model import LassoFit, RegressionDataset
from .utils import (
    CV_TIE_TOL,
    DEFAULT_CV_FOLDS,
    DEFAULT_MAX_ITERS,
    DEFAULT_N_LAMBDA,
    DEFAULT_TOL,
    DegenerateGrid,
    DimensionMismatch,
    InvalidConfig,
    InvalidRatio,
    MaxItersExceeded,
    Stream,
    TooFewSamples,
    readonly,
    rng_stream,
    soft_threshold,
)

logger = logging.getLogger(__name__)

# path stops once the fit explains this fraction of sum(y^2)
SATURATION_DEVIANCE: float = 0.999


class GramCache:
    """
    Columns X^T X_j of one design, computed on first use.

    Fits that share a design (a warm-started path, residual-bootstrap replicates)
    share the cache so every Gram column is formed at most once.
    """

    def __init__(self, X: np.ndarray) -> None:
        self.X = X
        self.col_sq: np.ndarray = np.einsum("ij,ij->j", X, X)
        self._columns: Dict[int, np.ndarray] = {}

    def __repr__(self) -> str:
        return f"<GramCache: {self.X.shape[1]} columns, {len(self._columns)} cached>"

    def column(self, j: int) -> np.ndarray:
        col = self._columns.get(j)
        if col is None:
            col = self.X.T @ self.X[:, j]
            self._columns[j] = col
        return col


@dataclass(frozen=True)
class LambdaGrid:
    values: np.ndarray
    lambda_max: float
    ratio: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", readonly(self.values))

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def truncated(self, length: int) -> "LambdaGrid":
        return LambdaGrid(self.values[:length], self.lambda_max, self.ratio)


@dataclass(frozen=True)
class CvResult:
    grid: LambdaGrid
    cv_mean: np.ndarray
    cv_se: np.ndarray
    lambda_min: float
    lambda_1se: float
    index_min: int
    fold_assignment: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "cv_mean", readonly(self.cv_mean))
        object.__setattr__(self, "cv_se", readonly(self.cv_se))
        folds = np.array(self.fold_assignment, dtype=np.intp, copy=True)
        folds.setflags(write=False)
        object.__setattr__(self, "fold_assignment", folds)


def default_ratio(n: int, p: int) -> float:
    return 1e-3 if p > n else 1e-4


def _violations(
    grad: np.ndarray, beta: np.ndarray, lam: float, weights: np.ndarray | None = None
) -> np.ndarray:
    "Per-coordinate KKT residuals given grad = 2 X^T (y - X beta)"
    penalty = lam if weights is None else lam / weights
    return np.where(
        beta != 0.0,
        np.abs(grad - penalty * np.sign(beta)),
        np.maximum(0.0, np.abs(grad) - penalty),
    )


def kkt_max_violation(
    ds: RegressionDataset, beta: np.ndarray, lam: float, weights: np.ndarray | None = None
) -> float:
    """
    Largest KKT residual of `beta` for min ||y - X beta||^2 + lam * sum_j |beta_j| / w_j.

    With g_j = 2 X_j^T (y - X beta), the residual is |g_j - (lam / w_j) sign(beta_j)|
    for a nonzero coordinate and max(0, |g_j| - lam / w_j) for a zero one.
    """
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (ds.p,):
        raise DimensionMismatch(f"beta has shape {beta.shape}, expected ({ds.p},)")
    grad = 2.0 * (ds.X.T @ (ds.y - ds.X @ beta))
    return float(np.max(_violations(grad, beta, lam, weights)))


def lasso_objective(
    ds: RegressionDataset, beta: np.ndarray, lam: float, weights: np.ndarray | None = None
) -> float:
    resid = ds.y - ds.X @ beta
    penalty = np.abs(beta) if weights is None else np.abs(beta) / weights
    return float(resid @ resid + lam * penalty.sum())


def lambda_grid(ds: RegressionDataset, n_lambda: int = DEFAULT_N_LAMBDA, ratio: float | None = None) -> LambdaGrid:
    """
    Log-equispaced penalties from lambda_max = 2 max_j |X_j^T y| down to ratio * lambda_max.

    Raises:
        InvalidRatio: If ratio is not in (0, 1).
        DegenerateGrid: If X^T y = 0, so every penalty gives the zero solution.
    """
    if ratio is None:
        ratio = default_ratio(ds.n, ds.p)
    if not 0.0 < ratio < 1.0:
        raise InvalidRatio(f"ratio must lie in (0, 1), got {ratio}")
    if n_lambda < 1:
        raise InvalidConfig(f"n_lambda must be positive, got {n_lambda}")
    lambda_max = 2.0 * float(np.max(np.abs(ds.X.T @ ds.y)))
    if not lambda_max > 0.0:
        raise DegenerateGrid("lambda_max is zero: y is orthogonal to every column")
    values = np.geomspace(lambda_max, lambda_max * ratio, n_lambda)
    values[0] = lambda_max
    return LambdaGrid(values, lambda_max, ratio)


def fit_lasso(
    ds: RegressionDataset,
    lam: float,
    init: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    gram: GramCache | None = None,
    callback: Callable[[np.ndarray], None] | None = None,
) -> LassoFit:
    """
    Solve min ||y - X beta||^2 + lam ||beta||_1 by cyclic coordinate descent.

    Sweeps run over the active set until its KKT residuals fall below `tol`, then
    every coordinate is checked and violators join the active set. The gradient
    is recomputed from scratch before a fit is accepted, so the returned
    `kkt_violation` is the exact certificate of `kkt_max_violation`.

    Args:
        ds (RegressionDataset): The data.
        lam (float): The penalty, on the scale of the unnormalized objective.
        init (np.ndarray | None): Warm start.
        tol (float): Required maximum KKT residual.
        max_iters (int): Maximum number of active-set sweeps.
        gram (GramCache | None): Cache for this design, shared between fits.
        callback: Called with a copy of the iterate after every sweep.

    Raises:
        MaxItersExceeded: Carrying the last iterate as `best_fit`.
    """
    if not lam >= 0.0:
        raise InvalidConfig(f"lambda must be nonnegative, got {lam}")
    X, y = ds.X, ds.y
    p = ds.p
    cache = gram if gram is not None and gram.X is X else GramCache(X)
    col_sq = cache.col_sq

    if init is None:
        beta = np.zeros(p)
        corr = X.T @ y
    else:
        beta = np.array(init, dtype=np.float64, copy=True)
        if beta.shape != (p,):
            raise DimensionMismatch(f"init has shape {beta.shape}, expected ({p},)")
        corr = X.T @ (y - X @ beta)

    in_active = beta != 0.0
    active: List[int] = [int(j) for j in np.flatnonzero(in_active)]
    half_lam = 0.5 * lam
    n_iters = 0

    def current_fit() -> LassoFit:
        return LassoFit(
            beta, lam, n_iters, kkt_max_violation(ds, beta, lam), lasso_objective(ds, beta, lam)
        )

    while True:
        viol = _violations(2.0 * corr, beta, lam)
        if viol.max() <= tol:
            corr = X.T @ (y - X @ beta)
            viol = _violations(2.0 * corr, beta, lam)
            if viol.max() <= tol:
                break
        entering = np.flatnonzero((viol > tol) & ~in_active & (col_sq > 0.0))
        if entering.size:
            in_active[entering] = True
            active = sorted(active + [int(j) for j in entering])

        while True:
            if n_iters >= max_iters:
                best = current_fit()
                raise MaxItersExceeded(
                    f"Coordinate descent did not reach tol={tol:g} in {max_iters} sweeps "
                    f"(lam={lam:g}, KKT violation {best.kkt_violation:.3g})",
                    best,
                )
            n_iters += 1
            for j in active:
                b_old = beta[j]
                if col_sq[j] > 0.0:
                    b_new = soft_threshold(corr[j] + col_sq[j] * b_old, half_lam) / col_sq[j]
                else:
                    b_new = 0.0
                if b_new != b_old:
                    beta[j] = b_new
                    corr -= (b_new - b_old) * cache.column(j)
            if callback is not None:
                callback(beta.copy())
            idx = np.asarray(active, dtype=np.intp)
            if idx.size == 0 or _violations(2.0 * corr[idx], beta[idx], lam).max() <= tol:
                break

    fit = LassoFit(beta, lam, n_iters, float(viol.max()), lasso_objective(ds, beta, lam))
    logger.debug("%r", fit)
    return fit


def _saturated(ds: RegressionDataset, fit: LassoFit) -> bool:
    nnz = int(np.count_nonzero(fit.beta))
    if nnz >= ds.n - 1:
        return True
    tss = float(ds.y @ ds.y)
    rss = fit.objective - fit.lam * float(np.abs(fit.beta).sum())
    return tss > 0.0 and rss <= (1.0 - SATURATION_DEVIANCE) * tss


def lasso_path(
    ds: RegressionDataset,
    values: Sequence[float] | np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    gram: GramCache | None = None,
    stop_early: bool = False,
) -> List[LassoFit]:
    """
    Warm-started fits along decreasing penalties.

    With `stop_early` the path ends once the active set reaches n - 1 predictors
    or the fit explains 99.9% of sum(y^2); the returned list is then shorter
    than `values`.
    """
    cache = gram if gram is not None and gram.X is ds.X else GramCache(ds.X)
    fits: List[LassoFit] = []
    beta: np.ndarray | None = None
    for lam in values:
        fit = fit_lasso(ds, float(lam), init=beta, tol=tol, max_iters=max_iters, gram=cache)
        fits.append(fit)
        beta = np.array(fit.beta)
        if stop_early and _saturated(ds, fit):
            logger.debug("Path saturated at lam=%g after %d of %d values", lam, len(fits), len(values))
            break
    return fits


def _fold_errors(
    ds: RegressionDataset,
    test_rows: np.ndarray,
    values: np.ndarray,
    tol: float,
    max_iters: int,
    stop_early: bool,
) -> np.ndarray:
    train_rows = np.setdiff1d(np.arange(ds.n), test_rows)
    train = ds.take_rows(train_rows)
    X_test, y_test = ds.X[test_rows], ds.y[test_rows]
    fits = lasso_path(train, values, tol=tol, max_iters=max_iters, stop_early=stop_early)
    return np.array([np.mean((y_test - X_test @ fit.beta) ** 2) for fit in fits])


def cross_validate(
    ds: RegressionDataset,
    grid: LambdaGrid,
    k: int = DEFAULT_CV_FOLDS,
    rng_seed: int = 0,
    stream_keys: Tuple[int, ...] = (),
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    n_jobs: int = 1,
    stop_early: bool = False,
) -> CvResult:
    """
    K-fold cross-validation of the penalty by held-out mean squared prediction error.

    Folds are a seeded random partition into k near-equal blocks. Each fold fits
    the path over the whole grid on its complement. With `stop_early` fold paths
    end at saturation and the grid is cut to the prefix every fold reached.
    `lambda_min` is the largest penalty within 1e-12 of the minimum mean error.

    Raises:
        InvalidConfig: If k < 2.
        TooFewSamples: If n < k.
    """
    if k < 2:
        raise InvalidConfig(f"Need at least 2 folds, got {k}")
    if ds.n < k:
        raise TooFewSamples(f"Cannot split {ds.n} samples into {k} folds")

    rng = rng_stream(rng_seed, Stream.CV_FOLDS, *stream_keys)
    folds = np.empty(ds.n, dtype=np.intp)
    folds[rng.permutation(ds.n)] = np.arange(ds.n) % k

    errors = Parallel(n_jobs=n_jobs)(
        delayed(_fold_errors)(ds, np.flatnonzero(folds == fold), grid.values, tol, max_iters, stop_early)
        for fold in range(k)
    )
    length = min(len(err) for err in errors)
    if length < len(grid):
        logger.info("CV grid cut from %d to %d values at path saturation", len(grid), length)
        grid = grid.truncated(length)
    table = np.vstack([err[:length] for err in errors])

    cv_mean = table.mean(axis=0)
    cv_se = table.std(axis=0, ddof=1) / np.sqrt(k)
    index_min = int(np.flatnonzero(cv_mean <= cv_mean.min() + CV_TIE_TOL)[0])
    index_1se = int(np.flatnonzero(cv_mean <= cv_mean[index_min] + cv_se[index_min])[0])
    return CvResult(
        grid=grid,
        cv_mean=cv_mean,
        cv_se=cv_se,
        lambda_min=float(grid.values[index_min]),
        lambda_1se=float(grid.values[index_1se]),
        index_min=index_min,
        fold_assignment=folds,
    )


def fit_lasso_cv(
    ds: RegressionDataset,
    n_lambda: int = DEFAULT_N_LAMBDA,
    ratio: float | None = None,
    k: int = DEFAULT_CV_FOLDS,
    rng_seed: int = 0,
    stream_keys: Tuple[int, ...] = (),
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    n_jobs: int = 1,
    gram: GramCache | None = None,
) -> Tuple[CvResult, LassoFit]:
    "Cross-validate the penalty, then fit the full data along the path down to lambda_min."
    grid = lambda_grid(ds, n_lambda, ratio)
    cv = cross_validate(ds, grid, k, rng_seed, stream_keys, tol, max_iters, n_jobs)
    fits = lasso_path(ds, cv.grid.values[: cv.index_min + 1], tol=tol, max_iters=max_iters, gram=gram)
    return cv, fits[-1]
