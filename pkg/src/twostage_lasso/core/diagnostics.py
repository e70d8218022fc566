import logging
import math
from dataclasses import dataclass, replace
from typing import Any, Dict

import numpy as np
import scipy.linalg
import scipy.stats
from joblib import Parallel, delayed

from .model import RegressionDataset, SupportSet
from .pipeline import LassoSelection, select_lasso
from .utils import (
    DegenerateDraws,
    DimensionMismatch,
    InvalidConfig,
    SingularC11,
    Stream,
    readonly,
    rng_stream,
)

logger = logging.getLogger(__name__)

# margins within this distance of zero are reported as exactly zero
MARGIN_TOL: float = 1e-10
MIN_QQ_DRAWS: int = 20


@dataclass(frozen=True)
class IcReport:
    """
    Irrepresentable condition margins 1 - |C21 C11^-1 signs|, one per predictor
    outside the support. The condition holds iff every margin is positive.
    """

    support: SupportSet
    margins: np.ndarray
    eta_min: float
    holds: bool

    def __post_init__(self) -> None:
        object.__setattr__(self, "margins", readonly(self.margins))

    def __repr__(self) -> str:
        return f"<IcReport: holds={self.holds}, eta_min={self.eta_min:.4g}>"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "support": list(self.support),
            "complement": [int(j) for j in self.support.complement()],
            "margins": [float(m) for m in self.margins],
            "eta_min": self.eta_min,
            "holds": self.holds,
        }


def _c11(ds: RegressionDataset, S: SupportSet) -> np.ndarray:
    X_S = ds.X[:, S.as_array()]
    return (X_S.T @ X_S) / ds.n


def irrepresentable_check(ds: RegressionDataset, S: SupportSet, signs: np.ndarray) -> IcReport:
    """
    Evaluate the Irrepresentable condition for support S with the given signs.

    Pass sign(beta*_S) for simulated data or the signs of an estimate on real data.

    Raises:
        SingularC11: If (1/n) X_S^T X_S is not invertible.
    """
    signs = np.asarray(signs, dtype=np.float64)
    if signs.shape != (len(S),):
        raise DimensionMismatch(f"signs have shape {signs.shape}, expected ({len(S)},)")
    if not np.all(np.abs(signs) == 1.0):
        raise InvalidConfig("signs must be +1 or -1")
    complement = S.complement()
    if len(S) == 0:
        margins = np.ones(complement.shape[0])
    else:
        c11 = _c11(ds, S)
        eigenvalues = scipy.linalg.eigvalsh(c11)
        if eigenvalues[0] <= 1e-12 * max(eigenvalues[-1], np.finfo(float).tiny):
            raise SingularC11(f"C11 is singular on support {list(S)}")
        c21 = (ds.X[:, complement].T @ ds.X[:, S.as_array()]) / ds.n
        direction = scipy.linalg.solve(c11, signs, assume_a="pos")
        margins = 1.0 - np.abs(c21 @ direction)
        margins[np.abs(margins) <= MARGIN_TOL] = 0.0
    eta_min = float(margins.min()) if margins.size else 1.0
    return IcReport(S, margins, eta_min, bool(np.all(margins > 0.0)))


def c11_min_eigenvalue(ds: RegressionDataset, S: SupportSet) -> float:
    "Smallest eigenvalue of (1/n) X_S^T X_S"
    if len(S) < 1:
        raise InvalidConfig("The support must contain at least one predictor")
    return max(0.0, float(scipy.linalg.eigvalsh(_c11(ds, S))[0]))


def design_leverage_statistic(ds: RegressionDataset, S: SupportSet) -> float:
    "max_i sum_{j in S} x_ij^2 / sqrt(n), reported without a verdict"
    if len(S) == 0:
        return 0.0
    X_S = ds.X[:, S.as_array()]
    return float(np.max(np.sum(X_S * X_S, axis=1)) / math.sqrt(ds.n))


def _sign_match(
    ds: RegressionDataset, selection: LassoSelection, rng_seed: int, replicate: int
) -> bool:
    assert ds.beta_true is not None
    sigma = ds.sigma_true or 0.0
    noise = rng_stream(rng_seed, Stream.NOISE, replicate).standard_normal(ds.n)
    y = ds.X @ ds.beta_true + sigma * noise
    lasso = select_lasso(ds.with_response(y), selection)
    return bool(np.array_equal(np.sign(lasso.beta), np.sign(ds.beta_true)))


def sign_consistency_rate(
    ds: RegressionDataset,
    n_reps: int,
    rng_seed: int = 0,
    selection: LassoSelection | None = None,
    n_jobs: int = 1,
) -> float:
    """
    Fraction of fresh-noise replicates where sign(beta_hat) equals sign(beta*) exactly.

    The design and `beta_true`/`sigma_true` of `ds` define the model; replicate r
    draws its noise from stream (seed, NOISE, r). The penalty follows `selection`
    (cross-validated by default, with fold streams keyed by the replicate).
    """
    if ds.beta_true is None:
        raise InvalidConfig("sign_consistency_rate needs a dataset with beta_true")
    if n_reps < 1:
        raise InvalidConfig(f"n_reps must be positive, got {n_reps}")
    selection = selection if selection is not None else LassoSelection(seed=rng_seed)
    matches = Parallel(n_jobs=n_jobs)(
        delayed(_sign_match)(
            ds,
            selection if selection.lam is not None else _keyed(selection, r),
            rng_seed,
            r,
        )
        for r in range(n_reps)
    )
    return float(np.mean(matches))


def _keyed(selection: LassoSelection, replicate: int) -> LassoSelection:
    return replace(selection, stream_keys=(*selection.stream_keys, replicate))


def qq_normality_score(draws: np.ndarray) -> float:
    """
    Correlation of the sorted draws with standard normal quantiles at (i - 0.5)/m.

    Raises:
        InvalidConfig: If there are fewer than 20 draws.
        DegenerateDraws: If all draws are equal.
    """
    values = np.sort(np.asarray(draws, dtype=np.float64).ravel())
    m = values.shape[0]
    if m < MIN_QQ_DRAWS:
        raise InvalidConfig(f"Need at least {MIN_QQ_DRAWS} draws, got {m}")
    if values[0] == values[-1]:
        raise DegenerateDraws("All draws are equal")
    quantiles = scipy.stats.norm.ppf((np.arange(1, m + 1) - 0.5) / m)
    return float(np.corrcoef(values, quantiles)[0, 1])
