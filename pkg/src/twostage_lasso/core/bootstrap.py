"""
Residual and paired bootstrap around a two-stage estimate, and basic/percentile
confidence intervals from the resulting ensemble.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse
from joblib import Parallel, delayed

from .lasso import GramCache
from .model import RegressionDataset, TwoStageEstimate
from .pipeline import TwoStagePipeline
from .utils import (
    DEFAULT_B,
    DEFAULT_LEVEL,
    DENSE_REPLICATE_LIMIT,
    MAX_FAILURE_FRACTION,
    BootstrapAborted,
    BootstrapMethod,
    CiKind,
    DimensionMismatch,
    EmptyEnsemble,
    InvalidConfig,
    Stream,
    TwoStageError,
    readonly,
    rng_stream,
)

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.17g"


@dataclass(frozen=True)
class ReplicateFailure:
    index: int
    message: str


@dataclass(frozen=True)
class BootstrapEnsemble:
    """
    Replicate coefficient vectors resampled around `point_estimate`.

    Rows of `replicates` are the successful replicates in replicate order; a
    scipy sparse matrix is used once p exceeds DENSE_REPLICATE_LIMIT.
    """

    point_estimate: TwoStageEstimate
    replicates: np.ndarray | scipy.sparse.csr_array
    B: int
    method: BootstrapMethod
    refit_config: TwoStagePipeline
    n: int
    failures: Tuple[ReplicateFailure, ...] = ()
    max_kkt_violation: float = 0.0

    def __post_init__(self) -> None:
        if self.B < 1:
            raise InvalidConfig(f"B must be positive, got {self.B}")
        if isinstance(self.replicates, np.ndarray):
            object.__setattr__(self, "replicates", readonly(self.replicates))

    def __repr__(self) -> str:
        return f"<BootstrapEnsemble: {self.method}, {self.n_successful}/{self.B} replicates of {self.refit_config}>"

    @property
    def n_successful(self) -> int:
        return int(self.replicates.shape[0])

    def dense_replicates(self) -> np.ndarray:
        if isinstance(self.replicates, np.ndarray):
            return self.replicates
        return np.asarray(self.replicates.toarray())

    def to_frame(self) -> pd.DataFrame:
        p = self.point_estimate.beta.shape[0]
        return pd.DataFrame(self.dense_replicates(), columns=[f"beta_{j}" for j in range(p)])

    def to_csv(self, path: str | Path) -> None:
        self.to_frame().to_csv(path, index_label="replicate", float_format=CSV_FLOAT_FORMAT)


@dataclass(frozen=True)
class IntervalSet:
    lower: np.ndarray
    upper: np.ndarray
    level: float
    kind: CiKind

    def __post_init__(self) -> None:
        object.__setattr__(self, "lower", readonly(self.lower))
        object.__setattr__(self, "upper", readonly(self.upper))
        if np.any(self.lower > self.upper):
            raise InvalidConfig("Interval lower bounds must not exceed upper bounds")

    @property
    def lengths(self) -> np.ndarray:
        return self.upper - self.lower

    def covers(self, beta: np.ndarray) -> np.ndarray:
        beta = np.asarray(beta)
        if beta.shape != self.lower.shape:
            raise DimensionMismatch(f"beta has shape {beta.shape}, expected {self.lower.shape}")
        return (self.lower <= beta) & (beta <= self.upper)

    def to_frame(self, beta_true: np.ndarray | None = None) -> pd.DataFrame:
        frame = pd.DataFrame(
            {"coordinate": np.arange(self.lower.shape[0]), "lower": self.lower, "upper": self.upper}
        )
        if beta_true is not None:
            frame["covered_truth"] = self.covers(beta_true)
        return frame

    def to_csv(self, path: str | Path, beta_true: np.ndarray | None = None) -> None:
        self.to_frame(beta_true).to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)


def centered_residuals(ds: RegressionDataset, estimate: TwoStageEstimate) -> np.ndarray:
    "y - X beta with its mean removed"
    resid = ds.y - ds.X @ estimate.beta
    return resid - resid.mean()


def _replicate_chunk(
    ds: RegressionDataset,
    fitted: np.ndarray,
    resid: np.ndarray,
    refit: TwoStagePipeline,
    method: BootstrapMethod,
    rng_seed: int,
    stream_keys: Tuple[int, ...],
    indices: Sequence[int],
    gram: GramCache | None,
) -> List[Tuple[int, np.ndarray | None, float, str]]:
    cache = gram if gram is not None and gram.X is ds.X else GramCache(ds.X)
    out: List[Tuple[int, np.ndarray | None, float, str]] = []
    for b in indices:
        rng = rng_stream(rng_seed, Stream.BOOTSTRAP, *stream_keys, b)
        try:
            match method:
                case BootstrapMethod.RESIDUAL:
                    y_star = fitted + rng.choice(resid, size=ds.n, replace=True)
                    estimate = refit.fit(ds.with_response(y_star), gram=cache)
                case BootstrapMethod.PAIRED:
                    rows = rng.choice(ds.n, size=ds.n, replace=True)
                    estimate = refit.fit(ds.take_rows(rows))
                case _:
                    raise ValueError(f"Unexpected bootstrap method encountered: {method}")
        except TwoStageError as err:
            out.append((b, None, 0.0, str(err)))
            continue
        out.append((b, np.array(estimate.beta), estimate.selection_kkt, ""))
    return out


def _stack(rows: List[np.ndarray], p: int) -> np.ndarray | scipy.sparse.csr_array:
    if p <= DENSE_REPLICATE_LIMIT:
        return np.vstack(rows) if rows else np.zeros((0, p))
    if not rows:
        return scipy.sparse.csr_array((0, p))
    return scipy.sparse.csr_array(scipy.sparse.vstack([scipy.sparse.csr_array(row[None, :]) for row in rows]))


def bootstrap_ensemble(
    ds: RegressionDataset,
    estimate: TwoStageEstimate,
    pipeline: TwoStagePipeline,
    B: int = DEFAULT_B,
    method: BootstrapMethod = BootstrapMethod.RESIDUAL,
    rng_seed: int = 0,
    stream_keys: Tuple[int, ...] = (),
    reselect_lambda: bool = False,
    gram: GramCache | None = None,
    n_jobs: int = 1,
) -> BootstrapEnsemble:
    """
    Resample and rerun the full pipeline B times.

    Residual method: Y* = X beta + eps* with eps* drawn with replacement from the
    centered residuals. Paired method: rows (x_i, y_i) drawn with replacement.
    The Lasso penalty is fixed at the one used for `estimate` unless
    `reselect_lambda` is set, in which case each replicate reruns the pipeline's
    own penalty selection. Replicate b draws from stream (seed, BOOTSTRAP,
    *stream_keys, b) and the ensemble is assembled in replicate order.

    Raises:
        InvalidConfig: If B < 1.
        BootstrapAborted: If more than 1% of the replicates fail.
    """
    if B < 1:
        raise InvalidConfig(f"B must be positive, got {B}")
    refit = pipeline if reselect_lambda or estimate.lam is None else pipeline.with_lambda(estimate.lam)
    fitted = ds.X @ estimate.beta
    resid = centered_residuals(ds, estimate)

    # chunks share a Gram cache within a worker; chunking never changes the draws
    n_chunks = 1 if n_jobs == 1 else min(B, 4 * n_jobs if n_jobs > 0 else 32)
    chunks = [list(chunk) for chunk in np.array_split(np.arange(B), n_chunks) if chunk.size]
    results = Parallel(n_jobs=n_jobs)(
        delayed(_replicate_chunk)(ds, fitted, resid, refit, method, rng_seed, stream_keys, chunk, gram)
        for chunk in chunks
    )

    rows: List[np.ndarray] = []
    failures: List[ReplicateFailure] = []
    worst = 0.0
    for b, beta, kkt, message in (item for chunk in results for item in chunk):
        if beta is None:
            logger.warning("Bootstrap replicate %d failed: %s", b, message)
            failures.append(ReplicateFailure(b, message))
        else:
            rows.append(beta)
            worst = max(worst, kkt)
    if len(failures) > MAX_FAILURE_FRACTION * B:
        raise BootstrapAborted(
            f"{len(failures)} of {B} bootstrap replicates failed; first: {failures[0].message}"
        )
    return BootstrapEnsemble(
        point_estimate=estimate,
        replicates=_stack(rows, ds.p),
        B=B,
        method=method,
        refit_config=refit,
        n=ds.n,
        failures=tuple(failures),
        max_kkt_violation=worst,
    )


def confidence_intervals(
    ens: BootstrapEnsemble, level: float = DEFAULT_LEVEL, kind: CiKind = CiKind.BASIC
) -> IntervalSet:
    """
    Coordinatewise bootstrap intervals at the given level.

    With t_q the linearly interpolated q-quantile of the replicates (order
    statistic position 1 + (B - 1) q) and alpha = 1 - level, the percentile
    interval is [t_{alpha/2}, t_{1-alpha/2}] and the basic interval is its
    reflection through the point estimate, [2 b - t_{1-alpha/2}, 2 b - t_{alpha/2}].

    Raises:
        InvalidConfig: If level is not in (0, 1).
        EmptyEnsemble: If no replicate succeeded.
    """
    if not 0.0 < level < 1.0:
        raise InvalidConfig(f"level must lie in (0, 1), got {level}")
    if ens.n_successful == 0:
        raise EmptyEnsemble("The ensemble has no successful replicates")
    alpha = 1.0 - level
    replicates = ens.dense_replicates()
    t_low, t_high = np.quantile(replicates, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0, method="linear")
    beta = ens.point_estimate.beta
    match kind:
        case CiKind.PERCENTILE:
            return IntervalSet(t_low, t_high, level, kind)
        case CiKind.BASIC:
            return IntervalSet(2.0 * beta - t_high, 2.0 * beta - t_low, level, kind)
        case _:
            raise ValueError(f"Unexpected interval kind encountered: {kind}")


def wasserstein2_1d(a: np.ndarray, b: np.ndarray) -> float:
    """
    Wasserstein-2 distance between two empirical distributions on the line.

    Both quantile functions are evaluated on the common grid (i - 0.5)/m,
    m = max(len(a), len(b)), and the root-mean-square difference is returned.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise InvalidConfig("Both samples must be nonempty")
    m = max(a.size, b.size)
    levels = (np.arange(m) + 0.5) / m
    qa = np.quantile(a, levels, method="inverted_cdf")
    qb = np.quantile(b, levels, method="inverted_cdf")
    return float(np.sqrt(np.mean((qa - qb) ** 2)))


def mallows_check(
    sampling_draws: np.ndarray,
    ensemble: BootstrapEnsemble,
    j: int,
    beta_true: np.ndarray | None = None,
) -> float:
    """
    Coordinatewise Mallows distance between the sampling and bootstrap distributions.

    Compares sqrt(n)(b_j - beta*_j) over Monte Carlo estimates with
    sqrt(n)(b*_j - b_j) over the ensemble's replicates.

    Args:
        sampling_draws (np.ndarray): Either a matrix of raw estimates, one row per
            Monte Carlo replicate, or the vector of already scaled and centered
            draws of coordinate j returned by `sampling_distribution_draws`.
        j (int): Zero-based coordinate.
        beta_true (np.ndarray | None): Needed only for a matrix of raw estimates.

    Raises:
        DimensionMismatch: If the draws are neither a vector nor a matrix with p columns.
    """
    draws = np.asarray(sampling_draws, dtype=np.float64)
    p = ensemble.point_estimate.beta.shape[0]
    if not 0 <= j < p:
        raise InvalidConfig(f"Coordinate {j} out of range [0, {p})")
    if ensemble.n_successful == 0:
        raise EmptyEnsemble("The ensemble has no successful replicates")
    root_n = math.sqrt(ensemble.n)
    match draws.ndim:
        case 1:
            sampling = draws
        case 2 if draws.shape[1] == p:
            if beta_true is None:
                raise InvalidConfig("beta_true is required for a matrix of raw estimates")
            sampling = root_n * (draws[:, j] - beta_true[j])
        case _:
            raise DimensionMismatch(
                f"sampling_draws has shape {draws.shape}, expected (m,) or (m, {p})"
            )
    bootstrap = root_n * (ensemble.dense_replicates()[:, j] - ensemble.point_estimate.beta[j])
    return wasserstein2_1d(sampling, bootstrap)
