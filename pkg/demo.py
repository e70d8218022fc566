import numpy as np

from twostage_lasso import twostage_v1

config = twostage_v1.ExperimentConfig.from_example(1, n_reps=1, B=100)
X = twostage_v1.generate_fixed_design(config)
beta_true = twostage_v1.true_beta(config.beta_case, config.p, config.s)
noise = config.sigma * np.random.default_rng(0).standard_normal(config.n)
ds = twostage_v1.RegressionDataset(X, X @ beta_true + noise, beta_true, config.sigma, standardized=True)

pipeline = twostage_v1.TwoStagePipeline.from_str("lasso+mls")
assert pipeline is not None
estimate = pipeline.fit(ds)
print(estimate)
print("selected:", list(estimate.support))

ensemble = twostage_v1.bootstrap_ensemble(ds, estimate, pipeline, B=config.B)
intervals = twostage_v1.confidence_intervals(ensemble, level=0.9)
for j in estimate.support:
    print(f"beta_{j}: {estimate.beta[j]:+.3f}  [{intervals.lower[j]:+.3f}, {intervals.upper[j]:+.3f}]")
