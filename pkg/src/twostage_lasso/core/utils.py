from enum import IntEnum
from typing import Any

import numpy as np

DEFAULT_N_LAMBDA: int = 100
DEFAULT_TOL: float = 1e-7
DEFAULT_MAX_ITERS: int = 100_000
DEFAULT_CV_FOLDS: int = 5
DEFAULT_B: int = 500
DEFAULT_LEVEL: float = 0.90
DEFAULT_ALPHA: float = 0.5
DEFAULT_P_W: float = 0.5
DEFAULT_N_SUBSAMPLES: int = 100
DEFAULT_PI_THR: float = 0.6
DEFAULT_SS_N_LAMBDA: int = 20
DEFAULT_SS_RATIO: float = 0.05
DENSE_REPLICATE_LIMIT: int = 5000
MAX_FAILURE_FRACTION: float = 0.01
STANDARDIZE_TOL: float = 1e-10
CV_TIE_TOL: float = 1e-12


class TwoStageError(Exception):
    "Base class for every error raised by twostage_lasso"


class DimensionMismatch(TwoStageError, ValueError):
    pass


class NonFinite(TwoStageError, ValueError):
    pass


class ZeroVarianceColumn(TwoStageError, ValueError):
    def __init__(self, column: int) -> None:
        super().__init__(f"Column {column} has zero variance and cannot be standardized")
        self.column = column

    def __reduce__(self) -> Any:
        return (type(self), (self.column,), self.__dict__)


class NonNumericCell(TwoStageError, ValueError):
    def __init__(self, row: int, column: str, value: str) -> None:
        super().__init__(f"Non-numeric cell {value!r} at row {row}, column {column!r}")
        self.row = row
        self.column = column
        self.value = value

    def __reduce__(self) -> Any:
        return (type(self), (self.row, self.column, self.value), self.__dict__)


class MalformedCsv(TwoStageError, ValueError):
    pass


class InvalidConfig(TwoStageError, ValueError):
    pass


class InvalidRatio(InvalidConfig):
    pass


class DegenerateGrid(TwoStageError, ValueError):
    pass


class TooFewSamples(TwoStageError, ValueError):
    pass


class MaxItersExceeded(TwoStageError, RuntimeError):
    "Raised with the best iterate found so far; see `best_fit`."

    def __init__(self, message: str, best_fit: Any) -> None:
        super().__init__(message)
        self.best_fit = best_fit

    def __reduce__(self) -> Any:
        return (type(self), (self.args[0], self.best_fit), self.__dict__)


class SingularSystem(TwoStageError, RuntimeError):
    pass


class SingularC11(TwoStageError, RuntimeError):
    pass


class FactorizationFailure(TwoStageError, RuntimeError):
    pass


class EmptyEnsemble(TwoStageError, ValueError):
    pass


class BootstrapAborted(TwoStageError, RuntimeError):
    pass


class DegenerateDraws(TwoStageError, ValueError):
    pass


class SubsampleFailure(TwoStageError, RuntimeError):
    def __init__(self, draw_index: int, message: str) -> None:
        super().__init__(f"Subsample {draw_index} failed: {message}")
        self.draw_index = draw_index
        self.message = message

    def __reduce__(self) -> Any:
        return (type(self), (self.draw_index, self.message), self.__dict__)


class EstimatorKind(IntEnum):
    "Second-stage estimator applied to the selected support"

    def __str__(self) -> str:
        return _KIND_NAMES[self]

    @staticmethod
    def from_str(kind_str: str) -> "EstimatorKind":
        for kind, name in _KIND_NAMES.items():
            if name == kind_str.lower():
                return kind
        raise ValueError(f"Invalid estimator kind: {kind_str}")

    LASSO = 0  # no refit, the selection-stage coefficients are kept
    MLS = 1
    RIDGE = 2
    OLS = 3


_KIND_NAMES = {
    EstimatorKind.LASSO: "lasso",
    EstimatorKind.MLS: "mls",
    EstimatorKind.RIDGE: "ridge",
    EstimatorKind.OLS: "ols",
}


class SelectorKind(IntEnum):
    def __str__(self) -> str:
        return "lasso" if self == SelectorKind.LASSO else "ss"

    @staticmethod
    def from_str(selector_str: str) -> "SelectorKind":
        match selector_str.lower():
            case "lasso":
                return SelectorKind.LASSO
            case "ss":
                return SelectorKind.STABILITY
            case _:
                raise ValueError(f"Invalid selector: {selector_str}")

    LASSO = 0
    STABILITY = 1


class CiKind(IntEnum):
    def __str__(self) -> str:
        return self.name.lower()

    @staticmethod
    def from_str(kind_str: str) -> "CiKind":
        try:
            return CiKind[kind_str.upper()]
        except KeyError:
            raise ValueError(f"Invalid interval kind: {kind_str}")

    BASIC = 0
    PERCENTILE = 1


class BootstrapMethod(IntEnum):
    def __str__(self) -> str:
        return self.name.lower()

    @staticmethod
    def from_str(method_str: str) -> "BootstrapMethod":
        try:
            return BootstrapMethod[method_str.upper()]
        except KeyError:
            raise ValueError(f"Invalid bootstrap method: {method_str}")

    RESIDUAL = 0
    PAIRED = 1


class Stream(IntEnum):
    "Named random streams; every draw in the package is keyed by (seed, stream, *keys)"

    DESIGN = 0
    TEST_SET = 1
    NOISE = 2
    CV_FOLDS = 3
    BOOTSTRAP = 4
    SUBSAMPLE = 5
    EIGEN_SEARCH = 6


def rng_stream(seed: int, stream: Stream, *keys: int) -> np.random.Generator:
    """
    Return an independent counter-based generator for one named stream.

    Args:
        seed (int): The run seed.
        stream (Stream): Which stream the draws belong to.
        *keys (int): Further indices, e.g. replicate or fold number.

    Returns:
        np.random.Generator: A Philox generator keyed on (seed, stream, *keys).
    """
    if seed < 0 or any(key < 0 for key in keys):
        raise InvalidConfig(f"Seeds and stream keys must be nonnegative: {seed}, {keys}")
    entropy = [int(seed), int(stream), *(int(key) for key in keys)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def soft_threshold(value: float, threshold: float) -> float:
    if value > threshold:
        return value - threshold
    elif value < -threshold:
        return value + threshold
    else:
        return 0.0


def readonly(array: np.ndarray) -> np.ndarray:
    "Return a read-only float64 copy of `array`"
    out = np.array(array, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out
