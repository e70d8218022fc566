import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, NamedTuple, Tuple

import numpy as np
import pandas as pd

from .utils import (
    STANDARDIZE_TOL,
    DimensionMismatch,
    EstimatorKind,
    InvalidConfig,
    MalformedCsv,
    NonFinite,
    NonNumericCell,
    SelectorKind,
    ZeroVarianceColumn,
    readonly,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegressionDataset:
    """
    A fixed design X (n samples x p predictors) with response y.

    `beta_true` and `sigma_true` are only known for simulated data. `standardized`
    is set by `validate_dataset`/`standardize` and means every column has mean 0
    and (1/n) sum x_ij^2 = 1. `y_offset` is the response mean removed when an
    intercept was requested.
    """

    X: np.ndarray
    y: np.ndarray
    beta_true: np.ndarray | None = None
    sigma_true: float | None = None
    standardized: bool = False
    y_offset: float = 0.0

    def __post_init__(self) -> None:
        # share an already read-only design instead of copying it
        if not (isinstance(self.X, np.ndarray) and not self.X.flags.writeable and self.X.dtype == np.float64):
            object.__setattr__(self, "X", readonly(self.X))
        object.__setattr__(self, "y", readonly(self.y))
        if self.beta_true is not None:
            object.__setattr__(self, "beta_true", readonly(self.beta_true))

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def p(self) -> int:
        return int(self.X.shape[1]) if self.X.ndim == 2 else 0

    def with_response(self, y: np.ndarray) -> "RegressionDataset":
        "Same design (shared, not copied), new response"
        return replace(self, y=y)

    def take_rows(self, rows: np.ndarray) -> "RegressionDataset":
        "Rows in the given order, duplicates allowed. The result is no longer marked standardized."
        return replace(self, X=self.X[rows], y=self.y[rows], standardized=False)


@dataclass(frozen=True)
class SupportSet:
    indices: Tuple[int, ...]
    p: int

    def __post_init__(self) -> None:
        idx = tuple(int(i) for i in self.indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise InvalidConfig(f"Support indices must be strictly increasing: {idx}")
        if idx and (idx[0] < 0 or idx[-1] >= self.p):
            raise InvalidConfig(f"Support indices must lie in [0, {self.p}): {idx}")
        object.__setattr__(self, "indices", idx)

    def __repr__(self) -> str:
        return f"<SupportSet: {list(self.indices)} of {self.p}>"

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self) -> Iterator[int]:
        return iter(self.indices)

    def __contains__(self, j: object) -> bool:
        return j in self.indices

    @staticmethod
    def from_mask(mask: np.ndarray) -> "SupportSet":
        return SupportSet(tuple(int(j) for j in np.flatnonzero(mask)), int(mask.shape[0]))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.intp)

    def complement(self) -> np.ndarray:
        mask = np.ones(self.p, dtype=bool)
        mask[self.as_array()] = False
        return np.flatnonzero(mask)

    def require_estimable(self, n: int) -> None:
        "A second stage can only be fitted on at most min(n, p) columns."
        if len(self) > min(n, self.p):
            raise InvalidConfig(
                f"Support of size {len(self)} exceeds min(n, p) = {min(n, self.p)}"
            )


@dataclass(frozen=True)
class LassoFit:
    """
    Solution of min ||y - X beta||^2 + lam * sum_j |beta_j| / w_j.

    `weights` is None for the plain Lasso (all w_j = 1); the randomized Lasso
    stores its draw. `kkt_violation` is the maximum KKT residual of `beta`.
    """

    beta: np.ndarray
    lam: float
    n_iters: int
    kkt_violation: float
    objective: float
    weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", readonly(self.beta))
        if self.weights is not None:
            object.__setattr__(self, "weights", readonly(self.weights))

    def __repr__(self) -> str:
        nnz = int(np.count_nonzero(self.beta))
        return f"<LassoFit: lam={self.lam:.6g}, nnz={nnz}, iters={self.n_iters}, kkt={self.kkt_violation:.3g}>"


@dataclass(frozen=True)
class TwoStageEstimate:
    """
    Second-stage coefficients on a selected support, zero elsewhere.

    `lam` is the selection-stage penalty (None after stability selection, which
    records `pi_thr` instead). `tau` is used iff kind is MLS and `mu` iff kind is
    RIDGE.
    """

    support: SupportSet
    beta: np.ndarray
    kind: EstimatorKind
    tau: float = 0.0
    mu: float = 0.0
    kept_rank: int = 0
    lam: float | None = None
    selector: SelectorKind = SelectorKind.LASSO
    pi_thr: float | None = None
    selection_kkt: float = field(default=0.0, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", readonly(self.beta))
        if self.beta.shape != (self.support.p,):
            raise DimensionMismatch(
                f"beta has shape {self.beta.shape}, expected ({self.support.p},)"
            )
        if np.any(self.beta[self.support.complement()] != 0.0):
            raise InvalidConfig("beta must be exactly zero outside the support")
        if self.kept_rank > len(self.support):
            raise InvalidConfig(f"kept_rank {self.kept_rank} exceeds |S| = {len(self.support)}")

    def __repr__(self) -> str:
        return f"<TwoStageEstimate: kind={self.kind}, |S|={len(self.support)}, lam={self.lam}, tau={self.tau}, mu={self.mu}>"


class Standardization(NamedTuple):
    dataset: RegressionDataset
    column_means: np.ndarray
    column_scales: np.ndarray


class CsvData(NamedTuple):
    dataset: RegressionDataset
    predictor_names: Tuple[str, ...]
    response_name: str


def _is_standardized(X: np.ndarray) -> bool:
    if X.shape[0] == 0:
        return False
    means = X.mean(axis=0)
    second_moments = np.mean(X * X, axis=0)
    return bool(
        np.all(np.abs(means) <= STANDARDIZE_TOL)
        and np.all(np.abs(second_moments - 1.0) <= STANDARDIZE_TOL)
    )


def validate_dataset(ds: RegressionDataset) -> RegressionDataset:
    """
    Check shapes and finiteness, and record whether the design is standardized.

    Raises:
        DimensionMismatch: If shapes disagree or n < 2 or p < 1.
        NonFinite: If any entry of X, y or beta_true is NaN or infinite.
    """
    X, y = ds.X, ds.y
    if X.ndim != 2:
        raise DimensionMismatch(f"X must be a matrix, got {X.ndim} dimension(s)")
    n, p = X.shape
    if y.ndim != 1 or y.shape[0] != n:
        raise DimensionMismatch(f"y has shape {y.shape}, expected ({n},)")
    if n < 2 or p < 1:
        raise DimensionMismatch(f"Need n >= 2 and p >= 1, got n={n}, p={p}")
    if ds.beta_true is not None and ds.beta_true.shape != (p,):
        raise DimensionMismatch(f"beta_true has shape {ds.beta_true.shape}, expected ({p},)")
    if not np.all(np.isfinite(X)):
        bad = np.argwhere(~np.isfinite(X))[0]
        raise NonFinite(f"X[{bad[0]}, {bad[1]}] is not finite")
    if not np.all(np.isfinite(y)):
        raise NonFinite(f"y[{int(np.flatnonzero(~np.isfinite(y))[0])}] is not finite")
    if ds.beta_true is not None and not np.all(np.isfinite(ds.beta_true)):
        raise NonFinite("beta_true is not finite")
    if ds.sigma_true is not None and not (np.isfinite(ds.sigma_true) and ds.sigma_true >= 0):
        raise NonFinite(f"sigma_true must be a finite nonnegative number, got {ds.sigma_true}")
    return replace(ds, standardized=_is_standardized(X))


def standardize(ds: RegressionDataset, fit_intercept: bool = False) -> Standardization:
    """
    Center every column and scale it to (1/n) sum x_ij^2 = 1.

    The response is left alone unless `fit_intercept` is set, in which case its
    mean is removed and kept in `y_offset`.

    Returns:
        Standardization: The new dataset and the per-column means and scales, so
        coefficients can be mapped back with `destandardize_coefficients`.

    Raises:
        ZeroVarianceColumn: If a column is constant.
    """
    X = ds.X
    means = X.mean(axis=0)
    centered = X - means
    scales = np.sqrt(np.mean(centered * centered, axis=0))
    for j, scale in enumerate(scales):
        if not scale > 0.0 or scale <= 1e-14 * max(1.0, abs(float(means[j]))):
            raise ZeroVarianceColumn(j)
    if ds.standardized or _is_standardized(X):
        # keep the matrix bit-for-bit; the transform is the identity within tolerance
        X_std = X
        means = np.zeros_like(means)
        scales = np.ones_like(scales)
    else:
        X_std = centered / scales
    y, y_offset = ds.y, ds.y_offset
    if fit_intercept:
        mean_y = float(ds.y.mean())
        y = ds.y - mean_y
        y_offset += mean_y
    beta_true = None if ds.beta_true is None else ds.beta_true * scales
    out = RegressionDataset(X_std, y, beta_true, ds.sigma_true, True, y_offset)
    return Standardization(out, readonly(means), readonly(scales))


def destandardize_coefficients(
    beta: np.ndarray, column_means: np.ndarray, column_scales: np.ndarray, y_offset: float = 0.0
) -> Tuple[np.ndarray, float]:
    """
    Map coefficients fitted on standardized columns back to the original units.

    Returns:
        Tuple[np.ndarray, float]: Coefficients and intercept such that
        X @ beta_orig + intercept equals X_std @ beta + y_offset.
    """
    beta_orig = np.asarray(beta, dtype=np.float64) / column_scales
    intercept = float(y_offset - column_means @ beta_orig)
    return beta_orig, intercept


def read_csv(path: str | Path, response: str | int, header: bool = True) -> CsvData:
    """
    Read a numeric CSV file; one column is the response, all others are predictors.

    Args:
        path (str | Path): The file to read.
        response (str | int): Column name (with a header) or zero-based index.
        header (bool): Whether the first row holds column names.

    Raises:
        NonNumericCell: With the 1-based file row and the column of the first bad cell.
        InvalidConfig: If the response column does not exist.
        MalformedCsv: If pandas cannot parse the file.
    """
    try:
        frame = pd.read_csv(
            path, header=0 if header else None, dtype=str, keep_default_na=False, skipinitialspace=True
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as err:
        raise MalformedCsv(f"Cannot parse {path}: {err}") from err
    frame.columns = [str(col) for col in frame.columns]
    columns = list(frame.columns)
    if isinstance(response, int) or (not header and str(response).isdigit()):
        index = int(response)
        if not 0 <= index < len(columns):
            raise InvalidConfig(f"Response column index {index} out of range [0, {len(columns)})")
        response_name = columns[index]
    else:
        if response not in columns:
            raise InvalidConfig(f"Response column {response!r} not found in {columns}")
        response_name = str(response)

    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().to_numpy()
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise NonNumericCell(int(row) + (2 if header else 1), columns[col], frame.iat[row, col])

    predictors = tuple(col for col in columns if col != response_name)
    X = numeric[list(predictors)].to_numpy(dtype=np.float64)
    y = numeric[response_name].to_numpy(dtype=np.float64)
    logger.info("Read %d rows x %d predictors from %s", X.shape[0], X.shape[1], path)
    return CsvData(validate_dataset(RegressionDataset(X, y)), predictors, response_name)
