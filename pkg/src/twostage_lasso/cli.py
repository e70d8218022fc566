"""
Command-line front end.

    twostage fit --input data.csv --response y --estimator lasso+mls --intercept
    twostage bootstrap --input data.csv --B 500 --level 0.9 --ci basic
    twostage simulate --example 1 --reps 10 --seed 7
    twostage coverage --example 1 --reps 50 --B 300
    twostage diagnose --input data.csv | --example 7
    twostage generate --example 1 --out data/

Every run writes its fully resolved configuration to run_config.json in the
output directory; `--config run_config.json` reruns it. Exit status is 0 on
success, 2 for configuration or input errors and 1 for runtime failures.
"""

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Sequence

import numpy as np
import pandas as pd

from .core.bootstrap import CSV_FLOAT_FORMAT, IntervalSet, bootstrap_ensemble, confidence_intervals
from .core.diagnostics import (
    c11_min_eigenvalue,
    design_leverage_statistic,
    irrepresentable_check,
    sign_consistency_rate,
)
from .core.lasso import GramCache
from .core.model import (
    RegressionDataset,
    SupportSet,
    TwoStageEstimate,
    destandardize_coefficients,
    read_csv,
    standardize,
)
from .core.pipeline import LassoSelection, TwoStagePipeline, select_lasso
from .core.second_stage import extract_support
from .core.simulation import (
    ExperimentConfig,
    MetricsReport,
    fixed_design,
    replicate_dataset,
    run_coverage_experiment,
    run_estimation_experiment,
)
from .core.stability import sparse_eigenvalue_estimate
from .core.utils import (
    DEFAULT_B,
    DEFAULT_LEVEL,
    BootstrapMethod,
    CiKind,
    InvalidConfig,
    SingularC11,
    TwoStageError,
)

logger = logging.getLogger(__name__)

SEED_ENV = "TWOSTAGE_SEED"
RUN_CONFIG_FILE = "run_config.json"
COMMANDS = ("fit", "bootstrap", "simulate", "coverage", "diagnose", "generate")

# RunConfig field -> flag, for error messages and config file keys
FLAGS: Dict[str, str] = {
    "input": "--input",
    "response": "--response",
    "header": "--no-header",
    "intercept": "--intercept",
    "estimator": "--estimator",
    "tau": "--tau",
    "mu": "--mu",
    "lam": "--lambda",
    "B": "--B",
    "level": "--level",
    "ci": "--ci",
    "method": "--method",
    "example": "--example",
    "reps": "--reps",
    "seed": "--seed",
    "workers": "--workers",
    "out": "--out",
    "raw": "--raw",
}
FILE_KEYS: Dict[str, str] = {"lambda": "lam", "no_header": "header"}


@dataclass(frozen=True)
class RunConfig:
    "Resolved settings of one CLI run. `lam` is None when the penalty is cross-validated."

    command: str
    input: str | None = None
    response: str = "y"
    header: bool = True
    intercept: bool = False
    estimator: str = "lasso+mls"
    tau: float | None = None
    mu: float | None = None
    lam: float | None = None
    B: int = DEFAULT_B
    level: float = DEFAULT_LEVEL
    ci: str = "basic"
    method: str = "residual"
    example: int | None = None
    reps: int = 100
    seed: int = 0
    workers: int = 1
    out: str = "."
    raw: bool = False

    def __post_init__(self) -> None:
        def fail(name: str, message: str) -> None:
            raise InvalidConfig(f"{FLAGS[name]}: {message}")

        if self.command not in COMMANDS:
            raise InvalidConfig(f"Unknown command {self.command!r}")
        if self.pipeline() is None:
            fail("estimator", f"invalid estimator {self.estimator!r}")
        if self.tau is not None and not self.tau >= 0.0:
            fail("tau", f"must be nonnegative, got {self.tau}")
        if self.mu is not None and not self.mu >= 0.0:
            fail("mu", f"must be nonnegative, got {self.mu}")
        if self.lam is not None and not self.lam >= 0.0:
            fail("lam", f"must be 'cv' or a nonnegative number, got {self.lam}")
        if self.B < 1:
            fail("B", f"must be positive, got {self.B}")
        if not 0.0 < self.level < 1.0:
            fail("level", f"must lie in (0, 1), got {self.level}")
        for name, parse in (("ci", CiKind.from_str), ("method", BootstrapMethod.from_str)):
            try:
                parse(getattr(self, name))
            except ValueError as err:
                fail(name, str(err))
        if self.reps < 1:
            fail("reps", f"must be positive, got {self.reps}")
        if self.seed < 0:
            fail("seed", f"must be nonnegative, got {self.seed}")
        if self.workers < 1:
            fail("workers", f"must be positive, got {self.workers}")
        match self.command:
            case "fit" | "bootstrap":
                if self.input is None:
                    fail("input", "is required")
            case "simulate" | "coverage" | "generate":
                if self.example is None:
                    fail("example", "is required")
            case "diagnose":
                if (self.input is None) == (self.example is None):
                    raise InvalidConfig("diagnose needs exactly one of --input and --example")
        if self.input is not None and not Path(self.input).is_file():
            fail("input", f"file not found: {self.input}")

    def pipeline(self) -> TwoStagePipeline | None:
        lasso = LassoSelection(lam=self.lam, seed=self.seed)
        return TwoStagePipeline.from_str(self.estimator, lasso=lasso, tau=self.tau, mu=self.mu)

    def experiment(self) -> ExperimentConfig:
        assert self.example is not None
        try:
            return ExperimentConfig.from_example(
                self.example, n_reps=self.reps, B=self.B, level=self.level, seed=self.seed, lam=self.lam
            )
        except InvalidConfig as err:
            raise InvalidConfig(f"--example: {err}") from err

    def to_dict(self) -> Dict[str, Any]:
        settings = asdict(self)
        settings["lambda"] = "cv" if self.lam is None else self.lam
        del settings["lam"]
        return settings


def _lambda(value: str) -> float | str:
    "'cv' or a number"
    if value.strip().lower() == "cv":
        return "cv"
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'cv' or a number, got {value!r}") from None


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help=f"Random seed (falls back to ${SEED_ENV}, then 0)")
    common.add_argument("--workers", type=int, help="Worker budget (default 1)")
    common.add_argument("--out", help="Output directory (default .)")
    common.add_argument("--config", help="Flat JSON file of settings; flags override it")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--input", help="CSV file with one response column and numeric predictors")
    data.add_argument("--response", help="Response column name, or index with --no-header (default y)")
    data.add_argument("--no-header", dest="header", action="store_const", const=False, help="The CSV has no header row")
    data.add_argument(
        "--intercept", action="store_const", const=True, help="Center the response and report an intercept"
    )

    penalty = argparse.ArgumentParser(add_help=False)
    penalty.add_argument("--lambda", dest="lam", type=_lambda, help="'cv' (default) or a fixed Lasso penalty")

    estimator = argparse.ArgumentParser(add_help=False)
    estimator.add_argument("--estimator", help="lasso, lasso+mls (default), lasso+ridge, lasso+ols, ss+mls, ss+ridge, ss+ols")
    estimator.add_argument("--tau", type=float, help="mLS singular value threshold (default 1/n)")
    estimator.add_argument("--mu", type=float, help="Ridge penalty (default 1/n)")

    boot = argparse.ArgumentParser(add_help=False)
    boot.add_argument("--B", type=int, help=f"Bootstrap replicates (default {DEFAULT_B})")
    boot.add_argument("--level", type=float, help=f"Confidence level (default {DEFAULT_LEVEL})")
    boot.add_argument("--ci", help="basic (default) or percentile")
    boot.add_argument("--method", help="residual (default) or paired")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--example", type=int, help="Simulation example 1..8")
    sim.add_argument("--reps", type=int, help="Monte Carlo replicates (default 100)")
    sim.add_argument("--raw", action="store_const", const=True, help="Also write per-replicate records")

    parser = argparse.ArgumentParser(prog="twostage", description="Two-stage sparse regression and bootstrap inference")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("fit", parents=[common, data, penalty, estimator], help="Fit an estimator to a CSV file")
    commands.add_parser("bootstrap", parents=[common, data, penalty, estimator, boot], help="Bootstrap confidence intervals")
    commands.add_parser("simulate", parents=[common, sim, penalty], help="Bias^2, MSE and PMSE on a simulation example")
    commands.add_parser("coverage", parents=[common, sim, penalty, boot], help="Bootstrap interval coverage on a simulation example")
    commands.add_parser("diagnose", parents=[common, data, sim, penalty], help="Irrepresentable condition and eigenvalue checks")
    commands.add_parser("generate", parents=[common, sim], help="Write a simulation example's data to CSV")
    return parser


def _read_config_file(path: str, command: str) -> Dict[str, Any]:
    try:
        settings = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise InvalidConfig(f"--config: cannot read {path}: {err}") from err
    if not isinstance(settings, dict):
        raise InvalidConfig(f"--config: {path} must hold one JSON object")
    out: Dict[str, Any] = {}
    names = {f.name for f in fields(RunConfig)}
    for key, value in settings.items():
        name = FILE_KEYS.get(key, key)
        if name == "command":
            if value != command:
                raise InvalidConfig(f"--config: file is for {value!r}, not {command!r}")
            continue
        if name not in names:
            raise InvalidConfig(f"--config: unknown setting {key!r}")
        if key == "no_header":
            value = not value
        if name == "lam" and isinstance(value, str):
            try:
                value = _lambda(value)
            except argparse.ArgumentTypeError as err:
                raise InvalidConfig(f"--config: lambda: {err}") from None
        out[name] = value
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    "Precedence: flag > config file > $TWOSTAGE_SEED (seed only) > default"
    settings: Dict[str, Any] = {}
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            settings["seed"] = int(env_seed)
        except ValueError:
            raise InvalidConfig(f"${SEED_ENV}: expected an integer, got {env_seed!r}") from None
    if args.config is not None:
        settings.update(_read_config_file(args.config, args.command))
    for name in FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            settings[name] = value
    if settings.get("lam") == "cv":
        settings["lam"] = None
    return RunConfig(command=args.command, **settings)


def _write_json(path: Path, payload: Any) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n")


def _load(config: RunConfig) -> tuple[RegressionDataset, List[str], np.ndarray, np.ndarray]:
    assert config.input is not None
    response: str | int = int(config.response) if not config.header and config.response.isdigit() else config.response
    csv = read_csv(config.input, response, header=config.header)
    scaled = standardize(csv.dataset, fit_intercept=config.intercept)
    return scaled.dataset, list(csv.predictor_names), scaled.column_means, scaled.column_scales


def _fit_payload(
    config: RunConfig,
    ds: RegressionDataset,
    names: Sequence[str],
    means: np.ndarray,
    scales: np.ndarray,
    estimate: TwoStageEstimate,
) -> Dict[str, Any]:
    beta, intercept = destandardize_coefficients(estimate.beta, means, scales, ds.y_offset)
    return {
        "estimator": config.estimator,
        "lambda": estimate.lam,
        "pi_thr": estimate.pi_thr,
        "tau": estimate.tau,
        "mu": estimate.mu,
        "kept_rank": estimate.kept_rank,
        "support": [names[j] for j in estimate.support],
        "intercept": intercept,
        "coefficients": {name: float(b) for name, b in zip(names, beta)},
        "standardized_coefficients": {name: float(b) for name, b in zip(names, estimate.beta)},
        "max_kkt_violation": estimate.selection_kkt,
    }


def _fit(config: RunConfig, staging: Path) -> None:
    ds, names, means, scales = _load(config)
    pipeline = config.pipeline()
    assert pipeline is not None
    estimate = pipeline.fit(ds, n_jobs=config.workers)
    _write_json(staging / "coefficients.json", _fit_payload(config, ds, names, means, scales, estimate))


def _bootstrap(config: RunConfig, staging: Path) -> None:
    ds, names, means, scales = _load(config)
    pipeline = config.pipeline()
    assert pipeline is not None
    gram = GramCache(ds.X)
    estimate = pipeline.fit(ds, gram=gram, n_jobs=config.workers)
    ensemble = bootstrap_ensemble(
        ds,
        estimate,
        pipeline,
        B=config.B,
        method=BootstrapMethod.from_str(config.method),
        rng_seed=config.seed,
        gram=gram,
        n_jobs=config.workers,
    )
    intervals = confidence_intervals(ensemble, config.level, CiKind.from_str(config.ci))
    # coefficients per original unit of each predictor
    original = IntervalSet(intervals.lower / scales, intervals.upper / scales, intervals.level, intervals.kind)
    frame = original.to_frame()
    frame.insert(1, "predictor", names)
    frame.insert(2, "estimate", estimate.beta / scales)
    frame.to_csv(staging / "intervals.csv", index=False, float_format=CSV_FLOAT_FORMAT)
    replicates = pd.DataFrame(ensemble.dense_replicates() / scales, columns=names)
    replicates.to_csv(staging / "ensemble.csv", index_label="replicate", float_format=CSV_FLOAT_FORMAT)
    payload = _fit_payload(config, ds, names, means, scales, estimate)
    payload["bootstrap"] = {
        "B": ensemble.B,
        "successful": ensemble.n_successful,
        "failed_replicates": [failure.index for failure in ensemble.failures],
        "max_kkt_violation": ensemble.max_kkt_violation,
    }
    _write_json(staging / "coefficients.json", payload)


def _write_report(report: MetricsReport, config: RunConfig, staging: Path) -> None:
    (staging / "metrics.json").write_text(report.to_json() + "\n")
    report.to_csv(staging / "metrics.csv")
    if config.raw and report.raw is not None:
        report.raw.to_csv(staging / "replicates.csv", index=False, float_format=CSV_FLOAT_FORMAT)


def _simulate(config: RunConfig, staging: Path) -> None:
    _write_report(run_estimation_experiment(config.experiment(), n_jobs=config.workers), config, staging)


def _coverage(config: RunConfig, staging: Path) -> None:
    _write_report(run_coverage_experiment(config.experiment(), n_jobs=config.workers), config, staging)


def _diagnose(config: RunConfig, staging: Path) -> None:
    payload: Dict[str, Any] = {}
    if config.example is not None:
        experiment = config.experiment()
        design = fixed_design(experiment)
        ds = design.dataset
        assert ds.beta_true is not None
        S = SupportSet.from_mask(ds.beta_true != 0.0)
        signs = np.sign(ds.beta_true[S.as_array()])
        payload["source"] = f"example {config.example}"
        payload["design_hash"] = design.design_hash
        payload["sign_consistency_rate"] = sign_consistency_rate(
            ds,
            config.reps,
            rng_seed=config.seed,
            selection=LassoSelection(lam=config.lam, seed=config.seed),
            n_jobs=config.workers,
        )
    else:
        ds, _, _, _ = _load(config)
        lasso = select_lasso(ds, LassoSelection(lam=config.lam, seed=config.seed), n_jobs=config.workers)
        S = extract_support(lasso)
        signs = np.sign(lasso.beta[S.as_array()])
        payload["source"] = config.input
        payload["lambda"] = lasso.lam

    try:
        payload["irrepresentable"] = irrepresentable_check(ds, S, signs).to_dict()
    except SingularC11 as err:
        payload["irrepresentable"] = {"error": str(err)}
    payload["c11_min_eigenvalue"] = c11_min_eigenvalue(ds, S) if len(S) else None
    payload["design_leverage"] = design_leverage_statistic(ds, S)
    k = max(len(S), 1)
    eigen = sparse_eigenvalue_estimate(ds, k, rng_seed=config.seed)
    payload["sparse_eigenvalues"] = {"k": k, "phi_min": eigen.phi_min, "phi_max": eigen.phi_max}
    _write_json(staging / "diagnostics.json", payload)


def _generate(config: RunConfig, staging: Path) -> None:
    experiment = config.experiment()
    design = fixed_design(experiment)
    ds = replicate_dataset(design, experiment, 0)
    assert ds.beta_true is not None
    frame = pd.DataFrame(ds.X, columns=[f"x{j}" for j in range(ds.p)])
    frame["y"] = ds.y
    frame.to_csv(staging / "data.csv", index=False, float_format=CSV_FLOAT_FORMAT)
    _write_json(
        staging / "truth.json",
        {
            "example": config.example,
            "beta_true": [float(b) for b in ds.beta_true],
            "sigma": experiment.sigma,
            "design_hash": design.design_hash,
        },
    )


HANDLERS: Dict[str, Callable[[RunConfig, Path], None]] = {
    "fit": _fit,
    "bootstrap": _bootstrap,
    "simulate": _simulate,
    "coverage": _coverage,
    "diagnose": _diagnose,
    "generate": _generate,
}


def execute(config: RunConfig) -> None:
    """
    Run one command. Outputs are written to a staging directory inside `out` and
    moved into place only when the command succeeds.
    """
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    try:
        _write_json(staging / RUN_CONFIG_FILE, config.to_dict())
        HANDLERS[config.command](config, staging)
        for path in sorted(staging.iterdir()):
            os.replace(path, out / path.name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)


def run(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parser().parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)

    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s: %(message)s")

    try:
        config = resolve_config(args)
        execute(config)
    except TwoStageError as err:
        print(f"twostage {args.command}: error: {err}", file=sys.stderr)
        for note in getattr(err, "__notes__", []):
            print(f"  {note}", file=sys.stderr)
        return 2 if isinstance(err, ValueError) else 1
    except OSError as err:
        print(f"twostage {args.command}: error: {err}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())
