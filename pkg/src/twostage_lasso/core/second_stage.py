"""
Second-stage estimators on a selected support: modified least squares through a
hard-thresholded SVD, Ridge after selection, and plain OLS.
"""

import logging
import math
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .model import LassoFit, RegressionDataset, SupportSet, TwoStageEstimate
from .utils import EstimatorKind, InvalidConfig, SingularSystem

logger = logging.getLogger(__name__)

# relative eigenvalue floor below which X_S^T X_S is treated as singular
SINGULAR_RTOL: float = 1e-12


class ThinSvd(NamedTuple):
    "(1/sqrt(n)) X_S = U diag(singular_values) V^T, singular values non-increasing"

    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray
    n: int


def thin_svd(X_S: np.ndarray) -> ThinSvd:
    n = X_S.shape[0]
    U, sigma, Vt = np.linalg.svd(X_S / math.sqrt(n), full_matrices=False)
    return ThinSvd(U, sigma, Vt.T, n)


def default_tau(n: int) -> float:
    return 1.0 / n


def ridge_mu(n: int, rule: str = "inverse_n", c2: float = 0.5) -> float:
    """
    Ridge penalty presets.

    "inverse_n" gives mu = 1/n (the default). "exponential" gives
    mu = exp(-n^c2 / 4), the faster decay that removes the Ridge bias at the
    exponential selection-error rate; c2 is not estimable from data.
    """
    match rule:
        case "inverse_n":
            return 1.0 / n
        case "exponential":
            if not 0.0 < c2 < 1.0:
                raise InvalidConfig(f"c2 must lie in (0, 1), got {c2}")
            return math.exp(-(n**c2) / 4.0)
        case _:
            raise InvalidConfig(f"Unknown ridge penalty rule: {rule}")


def extract_support(fit: LassoFit, zero_tol: float = 0.0) -> SupportSet:
    "Indices j with |beta_j| > zero_tol"
    return SupportSet.from_mask(np.abs(fit.beta) > zero_tol)


def _svd_coefficients(svd: ThinSvd, y: np.ndarray, keep: np.ndarray) -> np.ndarray:
    # beta_S = (1/sqrt(n)) V D^-1 U^T y over the retained singular values
    sigma = svd.singular_values[keep]
    return svd.V[:, keep] @ ((svd.U[:, keep].T @ y) / sigma) / math.sqrt(svd.n)


def fit_mls(ds: RegressionDataset, S: SupportSet, tau: float | None = None) -> TwoStageEstimate:
    """
    Modified least squares on the columns in S.

    Singular values of (1/sqrt(n)) X_S below `tau` are treated as having zero
    inverse; when tau^2 is at most the smallest eigenvalue of (1/n) X_S^T X_S the
    estimate is the OLS fit on S.

    Args:
        ds (RegressionDataset): The data.
        S (SupportSet): The selected columns.
        tau (float | None): Singular value threshold; defaults to 1/n.

    Returns:
        TwoStageEstimate: Zero outside S; the all-zero estimate for an empty S.
    """
    tau = default_tau(ds.n) if tau is None else tau
    if not tau >= 0.0:
        raise InvalidConfig(f"tau must be nonnegative, got {tau}")
    S.require_estimable(ds.n)
    beta = np.zeros(ds.p)
    if len(S) == 0:
        return TwoStageEstimate(S, beta, EstimatorKind.MLS, tau=tau, kept_rank=0)

    svd = thin_svd(ds.X[:, S.as_array()])
    keep = (svd.singular_values >= tau) & (svd.singular_values > 0.0)
    kept_rank = int(np.count_nonzero(keep))
    if kept_rank:
        beta[S.as_array()] = _svd_coefficients(svd, ds.y, keep)
    if kept_rank < len(S):
        logger.debug("mLS dropped %d of %d singular values below tau=%g", len(S) - kept_rank, len(S), tau)
    return TwoStageEstimate(S, beta, EstimatorKind.MLS, tau=tau, kept_rank=kept_rank)


def fit_ridge_after(ds: RegressionDataset, S: SupportSet, mu: float | None = None) -> TwoStageEstimate:
    """
    Ridge on the columns in S: beta_S = (X_S^T X_S + mu I)^-1 X_S^T y.

    Raises:
        SingularSystem: If mu = 0 and X_S^T X_S is numerically singular.
    """
    mu = ridge_mu(ds.n) if mu is None else mu
    if not mu >= 0.0:
        raise InvalidConfig(f"mu must be nonnegative, got {mu}")
    S.require_estimable(ds.n)
    beta = np.zeros(ds.p)
    if len(S) == 0:
        return TwoStageEstimate(S, beta, EstimatorKind.RIDGE, mu=mu, kept_rank=0)

    X_S = ds.X[:, S.as_array()]
    gram = X_S.T @ X_S
    if mu == 0.0:
        eigenvalues = scipy.linalg.eigvalsh(gram)
        if eigenvalues[0] <= SINGULAR_RTOL * max(eigenvalues[-1], np.finfo(float).tiny):
            raise SingularSystem(f"X_S^T X_S is singular on support {list(S)} and mu = 0")
    try:
        coef = scipy.linalg.solve(gram + mu * np.eye(len(S)), X_S.T @ ds.y, assume_a="pos")
    except scipy.linalg.LinAlgError as err:
        raise SingularSystem(f"Ridge system is singular on support {list(S)}") from err
    beta[S.as_array()] = coef
    return TwoStageEstimate(S, beta, EstimatorKind.RIDGE, mu=mu, kept_rank=len(S))


def fit_ols_after(ds: RegressionDataset, S: SupportSet) -> TwoStageEstimate:
    """
    OLS on the columns in S.

    Raises:
        SingularSystem: If X_S does not have full column rank.
    """
    S.require_estimable(ds.n)
    beta = np.zeros(ds.p)
    if len(S) == 0:
        return TwoStageEstimate(S, beta, EstimatorKind.OLS, kept_rank=0)
    svd = thin_svd(ds.X[:, S.as_array()])
    sigma = svd.singular_values
    if sigma[-1] <= math.sqrt(SINGULAR_RTOL) * sigma[0]:
        raise SingularSystem(f"X_S is rank deficient on support {list(S)}")
    beta[S.as_array()] = _svd_coefficients(svd, ds.y, np.ones(len(S), dtype=bool))
    return TwoStageEstimate(S, beta, EstimatorKind.OLS, kept_rank=len(S))


def lasso_estimate(fit: LassoFit, zero_tol: float = 0.0) -> TwoStageEstimate:
    "The selection-stage Lasso itself, packaged as an estimate with no refit"
    S = extract_support(fit, zero_tol)
    beta = np.zeros(fit.beta.shape[0])
    beta[S.as_array()] = fit.beta[S.as_array()]
    return TwoStageEstimate(S, beta, EstimatorKind.LASSO, kept_rank=len(S), lam=fit.lam)
