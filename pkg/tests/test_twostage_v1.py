import numpy as np
import pytest

from twostage_lasso import twostage_v1


@pytest.fixture(scope="function")
def example_dataset():
    config = twostage_v1.ExperimentConfig.from_example(1, p=40, n=80)
    X = twostage_v1.generate_fixed_design(config)
    beta = twostage_v1.true_beta(config.beta_case, config.p, config.s)
    noise = 0.5 * np.random.default_rng(1).standard_normal(config.n)
    yield twostage_v1.RegressionDataset(X, X @ beta + noise, beta, 0.5, standardized=True)


def test_public_api_complete():
    "Test that every exported name resolves"
    for name in twostage_v1.__all__:
        assert getattr(twostage_v1, name) is not None


def test_fit_and_bootstrap(example_dataset):
    "Test the fit, bootstrap and interval workflow through the public module"
    pipeline = twostage_v1.TwoStagePipeline.from_str("lasso+mls")
    estimate = pipeline.fit(example_dataset)
    assert set(range(10)) <= set(estimate.support)
    ensemble = twostage_v1.bootstrap_ensemble(example_dataset, estimate, pipeline, B=30, rng_seed=2)
    intervals = twostage_v1.confidence_intervals(ensemble, level=0.9)
    assert np.all(intervals.lower <= intervals.upper)
    assert np.all(intervals.lower[:5] > 0.0)


@pytest.mark.parametrize("spec", ["lasso+ridge", "lasso+ols", "ss+mls"])
def test_other_estimators(example_dataset, spec):
    "Test that the other estimators recover the large coefficients"
    stability = twostage_v1.StabilitySelection(n_subsamples=20)
    estimate = twostage_v1.TwoStagePipeline.from_str(spec, stability=stability).fit(example_dataset)
    np.testing.assert_allclose(estimate.beta[:5], 1.5, atol=0.3)
