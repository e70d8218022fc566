import json

import numpy as np
import pandas as pd
import pytest

from twostage_lasso.core.simulation import (
    EXAMPLE_SETTINGS,
    ExperimentConfig,
    MetricRecord,
    MetricsReport,
    fixed_design,
    generate_fixed_design,
    replicate_dataset,
    run_consistency_experiment,
    run_coverage_experiment,
    run_estimation_experiment,
    sampling_distribution_draws,
    toeplitz_covariance,
    true_beta,
    worker_budget,
)
from twostage_lasso.core.utils import DegenerateGrid, InvalidConfig


def small_config(example_id=1, **overrides):
    settings = {"n": 60, "p": 20, "n_reps": 4, "B": 20, "n_lambda": 20, "test_size": 50}
    settings.update(overrides)
    return ExperimentConfig.from_example(example_id, **settings)


def test_toeplitz_covariance():
    "Test the AR(1) covariance rho^|i - j|"
    np.testing.assert_allclose(
        toeplitz_covariance(3, 0.5), [[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]]
    )
    np.testing.assert_array_equal(toeplitz_covariance(4, 0.0), np.eye(4))


@pytest.mark.parametrize("p,rho", [(3, 1.0), (3, -1.0), (0, 0.5)])
def test_toeplitz_covariance_invalid(p, rho):
    "Test that |rho| must be below 1 and p positive"
    with pytest.raises(InvalidConfig):
        toeplitz_covariance(p, rho)


@pytest.mark.parametrize(
    "case,p,s,expected",
    [
        (1, 12, 10, [1.5] * 5 + [0.75] * 5 + [0.0] * 2),
        (2, 10, 10, [1.5, 1.5, -1.5, -1.5, 1.5, 0.75, -0.75, 0.75, -0.75, -0.75]),
        (1, 4, 3, [1.5, 1.5, 0.75, 0.0]),
        (1, 3, 0, [0.0, 0.0, 0.0]),
    ],
)
def test_true_beta(case, p, s, expected):
    "Test the coefficient patterns of the two beta cases"
    np.testing.assert_array_equal(true_beta(case, p, s), expected)


def test_true_beta_magnitudes():
    "Test that explicit magnitudes replace the default values"
    np.testing.assert_array_equal(true_beta(1, 4, 2, magnitudes=[3.0, 0.5]), [3.0, 0.5, 0.0, 0.0])


@pytest.mark.parametrize("case,p,s", [(2, 20, 4), (3, 20, 10), (1, 5, 6)])
def test_true_beta_invalid(case, p, s):
    "Test that unsupported cases and sizes are rejected"
    with pytest.raises(InvalidConfig):
        true_beta(case, p, s)


def test_example_settings():
    "Test the eight example settings"
    assert len(EXAMPLE_SETTINGS) == 8
    config = ExperimentConfig.from_example(7)
    assert (config.n, config.rho, config.beta_case, config.p, config.s, config.sigma) == (200, 0.5, 2, 500, 10, 1.0)
    assert ExperimentConfig.from_example(4, n_reps=3).n_reps == 3


@pytest.mark.parametrize(
    "example_id,overrides",
    [
        (9, {}),
        (1, {"rho": 1.0}),
        (1, {"beta_case": 3}),
        (1, {"s": 600}),
        (1, {"sigma": -1.0}),
        (1, {"B": 0}),
        (1, {"level": 1.0}),
    ],
)
def test_experiment_config_invalid(example_id, overrides):
    "Test that invalid settings are rejected when the config is built"
    with pytest.raises(InvalidConfig):
        ExperimentConfig.from_example(example_id, **overrides)


def test_fixed_design_deterministic():
    "Test that a configuration always yields the same standardized design"
    config = small_config(rho=0.5)
    X = generate_fixed_design(config)
    np.testing.assert_array_equal(X, generate_fixed_design(config))
    assert not np.array_equal(X, generate_fixed_design(config, rng_seed=1))
    assert not np.array_equal(X, generate_fixed_design(small_config(example_id=3, rho=0.5)))
    np.testing.assert_allclose(X.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(np.mean(X**2, axis=0), 1.0, atol=1e-10)


def test_fixed_design_contents():
    "Test the noiseless dataset and the held-out test set"
    config = small_config(sigma=0.0)
    design = fixed_design(config)
    ds = design.dataset
    assert ds.standardized
    np.testing.assert_array_equal(ds.beta_true, true_beta(1, 20, 10))
    np.testing.assert_allclose(ds.y, ds.X @ ds.beta_true)
    assert design.X_test.shape == (50, 20)
    np.testing.assert_allclose(design.y_test, design.X_test @ ds.beta_true)
    assert len(design.design_hash) == 16
    assert design.design_hash == fixed_design(config).design_hash


def test_replicate_dataset():
    "Test that replicates share the design and draw their own noise"
    config = small_config()
    design = fixed_design(config)
    a = replicate_dataset(design, config, 0)
    b = replicate_dataset(design, config, 1)
    assert a.X is design.dataset.X and b.X is design.dataset.X
    assert not np.array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.y, replicate_dataset(design, config, 0).y)


def test_estimation_experiment_deterministic():
    "Test that estimation metrics depend on the seed only, not on the workers"
    config = small_config()
    a = run_estimation_experiment(config)
    b = run_estimation_experiment(config, n_jobs=2)
    assert a.records == b.records
    assert a.design_hash == b.design_hash
    assert {r.method for r in a.records} == {"Lasso", "Lasso+mLS", "Lasso+Ridge"}
    assert a.max_kkt_violation <= 1e-7
    assert list(a.raw.columns) == ["method", "replicate", "mse", "pmse"]
    assert len(a.raw) == 3 * config.n_reps


def test_estimation_experiment_noiseless():
    "Test that refitting removes the Lasso bias on noiseless data"
    config = small_config(sigma=0.0, n_reps=2)
    report = run_estimation_experiment(config, methods=("Lasso", "Lasso+mLS", "Lasso+OLS"))
    assert report.value("Lasso+mLS", "mse_mean") < 1e-8
    assert report.value("Lasso+OLS", "mse_mean") < 1e-8
    assert report.value("Lasso+mLS", "pmse_mean") < 1e-8
    assert report.value("Lasso", "mse_mean") > report.value("Lasso+mLS", "mse_mean")
    assert report.value("Lasso", "bias_sq") <= report.value("Lasso", "mse_mean") + 1e-12


def test_estimation_experiment_unknown_method():
    "Test that unknown method names are rejected"
    with pytest.raises(InvalidConfig):
        run_estimation_experiment(small_config(), methods=("Lasso+LARS",))


def test_coverage_experiment():
    "Test the shape and ranges of the coverage metrics"
    config = small_config(n_reps=2)
    report = run_coverage_experiment(config)
    for method in ("RBL", "RBLmLS", "PBL"):
        for group in ("nonzero", "zero"):
            assert 0.0 <= report.value(method, "coverage_mean", group) <= 1.0
            assert report.value(method, "length_mean", group) >= 0.0
            assert 0.0 <= report.value(method, "percentile_coverage_mean", group) <= 1.0
        for j in range(config.p):
            assert report.value(method, "length", str(j)) >= 0.0
    # basic and percentile intervals have the same lengths
    assert report.value("RBLmLS", "length_mean", "nonzero") == pytest.approx(
        report.value("RBLmLS", "percentile_length_mean", "nonzero")
    )


def test_coverage_experiment_deterministic():
    "Test that coverage metrics depend on the seed only, not on the workers"
    config = small_config(n_reps=2, B=10)
    a = run_coverage_experiment(config, methods=("RBLmLS", "PBL"))
    b = run_coverage_experiment(config, n_jobs=2, methods=("RBLmLS", "PBL"))
    assert a.records == b.records


def test_coverage_experiment_noiseless():
    "Test that noiseless data gives zero-length intervals after refitting"
    config = small_config(sigma=0.0, n_reps=2, B=10)
    report = run_coverage_experiment(config, methods=("RBLmLS",))
    assert report.value("RBLmLS", "length_mean", "nonzero") < 1e-6
    assert report.value("RBLmLS", "length_mean", "zero") < 1e-6


def test_coverage_experiment_unknown_method():
    "Test that unknown method names are rejected"
    with pytest.raises(InvalidConfig):
        run_coverage_experiment(small_config(), methods=("RBLOLS",))


@pytest.mark.parametrize(
    "test_input,expected",
    [
        ((8, 100), (8, 1)),
        ((8, 2), (2, 4)),
        ((1, 5), (1, 1)),
        ((3, 3), (3, 1)),
    ],
)
def test_worker_budget(test_input, expected):
    "Test the split of workers between replicates and bootstrap draws"
    assert worker_budget(*test_input) == expected


def test_worker_budget_invalid():
    "Test that the worker budget must be positive"
    with pytest.raises(InvalidConfig):
        worker_budget(0, 10)


def test_sampling_distribution_draws():
    "Test the scaled sampling draws of one coordinate"
    config = small_config(sigma=0.0)
    draws = sampling_distribution_draws(config, "lasso+mls", 0, 3)
    assert draws.shape == (3,)
    np.testing.assert_allclose(draws, 0.0, atol=1e-6)
    np.testing.assert_array_equal(draws, sampling_distribution_draws(config, "lasso+mls", 0, 3, n_jobs=2))
    with pytest.raises(InvalidConfig):
        sampling_distribution_draws(config, "lasso+mls", 20, 3)
    with pytest.raises(InvalidConfig):
        sampling_distribution_draws(config, "ridge", 0, 3)


def test_consistency_experiment():
    "Test that one Mallows distance is reported per sample size"
    config = small_config(p=15, s=4)
    report = run_consistency_experiment(config, n_values=(40, 80), n_draws=20, B=20)
    assert report.experiment == "consistency"
    assert len(report.design_hash.split(",")) == 2
    for n in (40, 80):
        assert report.value("lasso+mls", "mallows_median", str(n)) >= 0.0


def test_metrics_report_exports(tmp_path):
    "Test the long-format CSV and nested JSON views of a report"
    records = (
        MetricRecord("Lasso", "mse_mean", "all", 0.125),
        MetricRecord("Lasso+mLS", "mse_mean", "all", 1.0 / 3.0),
    )
    report = MetricsReport("estimation", small_config(), "abc", records)
    report.to_csv(tmp_path / "metrics.csv")
    frame = pd.read_csv(tmp_path / "metrics.csv", float_precision="round_trip")
    assert list(frame.columns) == ["method", "example", "metric", "group", "value"]
    assert frame["value"].iloc[1] == 1.0 / 3.0
    payload = json.loads(report.to_json())
    assert payload["metrics"]["Lasso"]["mse_mean"]["all"] == 0.125
    assert payload["config"]["n"] == 60
    assert report.value("Lasso", "mse_mean") == 0.125
    with pytest.raises(KeyError):
        report.value("Lasso", "pmse_mean")


@pytest.mark.parametrize("experiment", [run_estimation_experiment, run_coverage_experiment])
def test_replicate_errors_name_the_replicate(monkeypatch, experiment):
    "Test that a failure inside a replicate carries the replicate and example"

    def failing_selection(*args, **kwargs):
        raise DegenerateGrid("lambda_max is zero")

    monkeypatch.setattr("twostage_lasso.core.simulation.select_lasso", failing_selection)
    with pytest.raises(DegenerateGrid) as info:
        experiment(small_config(example_id=2), n_jobs=1)
    assert "in replicate 0 of example 2" in info.value.__notes__
