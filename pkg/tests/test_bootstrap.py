import numpy as np
import pandas as pd
import pytest
import scipy.sparse

from twostage_lasso.core.bootstrap import (
    BootstrapEnsemble,
    bootstrap_ensemble,
    centered_residuals,
    confidence_intervals,
    mallows_check,
    wasserstein2_1d,
)
from twostage_lasso.core.lasso import lambda_grid
from twostage_lasso.core.model import RegressionDataset, SupportSet, TwoStageEstimate, standardize
from twostage_lasso.core.pipeline import LassoSelection, TwoStagePipeline
from twostage_lasso.core.simulation import (
    ExperimentConfig,
    fixed_design,
    replicate_dataset,
    sampling_distribution_draws,
)
from twostage_lasso.core.utils import (
    BootstrapAborted,
    BootstrapMethod,
    CiKind,
    DimensionMismatch,
    EmptyEnsemble,
    EstimatorKind,
    InvalidConfig,
    SingularSystem,
)


def make_ensemble(replicates, beta_hat, n=5):
    replicates = np.asarray(replicates, dtype=np.float64)
    p = replicates.shape[1]
    S = SupportSet(tuple(range(p)), p)
    estimate = TwoStageEstimate(S, np.asarray(beta_hat, dtype=np.float64), EstimatorKind.MLS, kept_rank=p)
    return BootstrapEnsemble(
        point_estimate=estimate,
        replicates=replicates,
        B=max(replicates.shape[0], 1),
        method=BootstrapMethod.RESIDUAL,
        refit_config=TwoStagePipeline.from_str("lasso+mls"),
        n=n,
    )


@pytest.fixture(scope="function")
def noisy_fit():
    rng = np.random.default_rng(17)
    X = rng.standard_normal((60, 15))
    beta = np.zeros(15)
    beta[[0, 4]] = [2.0, -1.5]
    ds = standardize(RegressionDataset(X, X @ beta + rng.standard_normal(60), beta_true=beta)).dataset
    lam = 0.1 * lambda_grid(ds).lambda_max
    pipeline = TwoStagePipeline.from_str("lasso+mls", lasso=LassoSelection(lam=lam))
    yield ds, pipeline, pipeline.fit(ds)


def test_centered_residuals():
    "Test that residuals (1, 2, 3) are centered to (-1, 0, 1)"
    ds = RegressionDataset(np.array([[1.0], [2.0], [3.0]]), np.array([1.0, 2.0, 3.0]))
    estimate = TwoStageEstimate(SupportSet((), 1), np.zeros(1), EstimatorKind.MLS)
    np.testing.assert_array_equal(centered_residuals(ds, estimate), [-1.0, 0.0, 1.0])


def test_noiseless_ensemble():
    "Test that noiseless integer data gives replicates equal to the estimate"
    rng = np.random.default_rng(0)
    X = rng.integers(-3, 4, size=(40, 6)).astype(np.float64)
    beta = np.array([2.0, 0.0, -1.0, 0.0, 0.0, 3.0])
    ds = RegressionDataset(X, X @ beta)
    pipeline = TwoStagePipeline.from_str("lasso+ols", lasso=LassoSelection(lam=1.0))
    estimate = pipeline.fit(ds)
    np.testing.assert_allclose(estimate.beta, beta, atol=1e-8)
    ens = bootstrap_ensemble(ds, estimate, pipeline, B=20)
    assert ens.n_successful == 20
    np.testing.assert_allclose(ens.replicates, np.tile(estimate.beta, (20, 1)), atol=1e-8)
    intervals = confidence_intervals(ens, 0.9)
    assert np.all(intervals.lengths < 1e-7)


@pytest.mark.parametrize("method", [BootstrapMethod.RESIDUAL, BootstrapMethod.PAIRED])
def test_ensemble_deterministic(noisy_fit, method):
    "Test that the ensemble depends on the seed only, not on the workers"
    ds, pipeline, estimate = noisy_fit
    a = bootstrap_ensemble(ds, estimate, pipeline, B=16, method=method, rng_seed=5)
    b = bootstrap_ensemble(ds, estimate, pipeline, B=16, method=method, rng_seed=5, n_jobs=2)
    c = bootstrap_ensemble(ds, estimate, pipeline, B=16, method=method, rng_seed=6)
    np.testing.assert_array_equal(a.replicates, b.replicates)
    assert not np.array_equal(a.replicates, c.replicates)
    assert a.method == method


def test_ensemble_fixes_penalty(noisy_fit):
    "Test that replicates reuse the penalty of the point estimate"
    ds, _, estimate = noisy_fit
    pipeline = TwoStagePipeline.from_str("lasso+mls", lasso=LassoSelection(n_lambda=20))
    ens = bootstrap_ensemble(ds, estimate, pipeline, B=4)
    assert ens.refit_config.selection.lam == estimate.lam
    assert ens.max_kkt_violation <= 1e-7


def test_ensemble_invalid_B(noisy_fit):
    "Test that B must be positive"
    ds, pipeline, estimate = noisy_fit
    with pytest.raises(InvalidConfig):
        bootstrap_ensemble(ds, estimate, pipeline, B=0)


def test_ensemble_tolerates_rare_failures(noisy_fit, monkeypatch):
    "Test that up to 1% failed replicates are recorded and skipped"
    ds, pipeline, estimate = noisy_fit
    original = TwoStagePipeline.fit
    calls = []

    def fail_first(self, *args, **kwargs):
        calls.append(1)
        if len(calls) == 1:
            raise SingularSystem("forced")
        return original(self, *args, **kwargs)

    monkeypatch.setattr(TwoStagePipeline, "fit", fail_first)
    ens = bootstrap_ensemble(ds, estimate, pipeline, B=200)
    assert ens.n_successful == 199
    assert [f.index for f in ens.failures] == [0]
    assert "forced" in ens.failures[0].message


def test_ensemble_aborts(noisy_fit, monkeypatch):
    "Test that too many failed replicates abort the ensemble"

    def always_fail(self, *args, **kwargs):
        raise SingularSystem("forced")

    ds, pipeline, estimate = noisy_fit
    monkeypatch.setattr(TwoStagePipeline, "fit", always_fail)
    with pytest.raises(BootstrapAborted):
        bootstrap_ensemble(ds, estimate, pipeline, B=10)


@pytest.mark.parametrize("kind", [CiKind.BASIC, CiKind.PERCENTILE])
def test_interval_example(kind):
    "Test intervals from replicates 1..5 around 3 at level 0.6"
    ens = make_ensemble(np.arange(1.0, 6.0)[:, None], [3.0])
    intervals = confidence_intervals(ens, 0.6, kind)
    assert intervals.lower[0] == pytest.approx(1.8)
    assert intervals.upper[0] == pytest.approx(4.2)
    assert intervals.kind == kind


def test_basic_reflects_percentile():
    "Test that basic intervals reflect percentile ones through the estimate"
    rng = np.random.default_rng(3)
    ens = make_ensemble(rng.standard_normal((101, 4)) + 1.0, [0.5, 1.0, 0.0, -2.0])
    basic = confidence_intervals(ens, 0.9, CiKind.BASIC)
    percentile = confidence_intervals(ens, 0.9, CiKind.PERCENTILE)
    beta = ens.point_estimate.beta
    np.testing.assert_allclose(basic.lower, 2.0 * beta - percentile.upper)
    np.testing.assert_allclose(basic.upper, 2.0 * beta - percentile.lower)
    np.testing.assert_allclose(basic.lengths, percentile.lengths)


def test_intervals_nested():
    "Test that a higher level gives wider intervals"
    rng = np.random.default_rng(4)
    ens = make_ensemble(rng.standard_normal((200, 3)), [0.1, 0.0, -0.1])
    for kind in (CiKind.BASIC, CiKind.PERCENTILE):
        wide = confidence_intervals(ens, 0.95, kind)
        narrow = confidence_intervals(ens, 0.90, kind)
        assert np.all(wide.lower <= narrow.lower) and np.all(narrow.upper <= wide.upper)


@pytest.mark.parametrize("level", [0.0, 1.0, 1.2])
def test_interval_invalid_level(level):
    "Test that the level must lie in (0, 1)"
    with pytest.raises(InvalidConfig):
        confidence_intervals(make_ensemble(np.ones((3, 1)), [1.0]), level)


def test_interval_empty_ensemble():
    "Test that an ensemble without replicates has no intervals"
    with pytest.raises(EmptyEnsemble):
        confidence_intervals(make_ensemble(np.zeros((0, 2)), [0.0, 0.0]))


def test_interval_covers():
    "Test coverage of a true coefficient vector"
    ens = make_ensemble(np.arange(1.0, 6.0)[:, None] * np.ones((1, 2)), [3.0, 3.0])
    intervals = confidence_intervals(ens, 0.6, CiKind.PERCENTILE)
    np.testing.assert_array_equal(intervals.covers(np.array([2.0, 5.0])), [True, False])


@pytest.mark.parametrize(
    "a,b,expected",
    [
        ((0.0, 0.0), (1.0, 1.0), 1.0),
        ((0.0, 1.0, 2.0), (2.0, 0.0, 1.0), 0.0),
        ((0.0, 1.0), (0.0, 1.0, 1.0, 0.0), 0.0),
    ],
)
def test_wasserstein_examples(a, b, expected):
    "Test the Wasserstein-2 distance on small samples"
    assert wasserstein2_1d(np.array(a), np.array(b)) == pytest.approx(expected)


def test_wasserstein_shifted_normals():
    "Test that N(0, 1) and N(0.5, 1) samples are about 0.5 apart"
    rng = np.random.default_rng(12)
    a = rng.standard_normal(20000)
    b = rng.standard_normal(20000) + 0.5
    assert wasserstein2_1d(a, b) == pytest.approx(0.5, abs=0.05)


def test_wasserstein_empty():
    "Test that empty samples are rejected"
    with pytest.raises(InvalidConfig):
        wasserstein2_1d(np.array([]), np.array([1.0]))


def test_mallows_check():
    "Test the scaled coordinatewise comparison of sampling and bootstrap draws"
    ens = make_ensemble(np.array([[1.0], [3.0]]), [2.0], n=4)
    # sqrt(4) * (draws - 1) = (0, 2) and sqrt(4) * (replicates - 2) = (-2, 2)
    draws = np.array([[1.0], [2.0]])
    assert mallows_check(draws, ens, 0, np.array([1.0])) == pytest.approx(np.sqrt(2.0))
    with pytest.raises(InvalidConfig):
        mallows_check(draws, ens, 1, np.array([1.0]))
    assert mallows_check(np.array([0.0, 2.0]), ens, 0) == pytest.approx(np.sqrt(2.0))
    with pytest.raises(DimensionMismatch):
        mallows_check(np.ones((2, 3)), ens, 0, np.array([1.0]))
    with pytest.raises(InvalidConfig):
        mallows_check(draws, ens, 0)


def test_mallows_check_on_sampling_draws():
    "Test that scaled draws from the simulation bench are compared as they are"
    config = ExperimentConfig.from_example(1, n=60, p=20, n_lambda=20, test_size=50)
    draws = sampling_distribution_draws(config, "lasso+mls", 0, 30)
    ds = replicate_dataset(fixed_design(config), config, 30)
    pipeline = TwoStagePipeline.from_str("lasso+mls")
    estimate = pipeline.fit(ds)
    ens = bootstrap_ensemble(ds, estimate, pipeline, B=30, rng_seed=1)
    bootstrap = np.sqrt(60) * (ens.dense_replicates()[:, 0] - estimate.beta[0])
    distance = mallows_check(draws, ens, 0)
    assert distance == pytest.approx(wasserstein2_1d(draws, bootstrap))
    assert distance < 3.0


def test_ensemble_csv(noisy_fit, tmp_path):
    "Test that the ensemble and its intervals are written as CSV"
    ds, pipeline, estimate = noisy_fit
    ens = bootstrap_ensemble(ds, estimate, pipeline, B=8)
    ens.to_csv(tmp_path / "ensemble.csv")
    frame = pd.read_csv(tmp_path / "ensemble.csv", float_precision="round_trip")
    assert list(frame.columns) == ["replicate"] + [f"beta_{j}" for j in range(15)]
    np.testing.assert_array_equal(frame.iloc[:, 1:].to_numpy(), ens.replicates)

    confidence_intervals(ens).to_csv(tmp_path / "intervals.csv", beta_true=ds.beta_true)
    intervals = pd.read_csv(tmp_path / "intervals.csv")
    assert list(intervals.columns) == ["coordinate", "lower", "upper", "covered_truth"]
    assert len(intervals) == 15


def test_sparse_replicates_for_wide_designs():
    "Test that very wide designs store replicates sparsely"
    rng = np.random.default_rng(6)
    X = rng.standard_normal((20, 5001))
    beta = np.zeros(5001)
    beta[0] = 10.0
    ds = standardize(RegressionDataset(X, X @ beta + 0.1 * rng.standard_normal(20))).dataset
    lam = 0.5 * lambda_grid(ds).lambda_max
    pipeline = TwoStagePipeline.from_str("lasso+mls", lasso=LassoSelection(lam=lam))
    ens = bootstrap_ensemble(ds, pipeline.fit(ds), pipeline, B=3)
    assert scipy.sparse.issparse(ens.replicates)
    assert ens.replicates.shape == (3, 5001)
    assert confidence_intervals(ens).lower.shape == (5001,)
