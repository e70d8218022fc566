import numpy as np
import pytest

from twostage_lasso.core.model import (
    RegressionDataset,
    SupportSet,
    TwoStageEstimate,
    destandardize_coefficients,
    read_csv,
    standardize,
    validate_dataset,
)
from twostage_lasso.core.utils import (
    DimensionMismatch,
    EstimatorKind,
    InvalidConfig,
    MalformedCsv,
    NonFinite,
    NonNumericCell,
    ZeroVarianceColumn,
)


@pytest.fixture(scope="function")
def random_dataset():
    rng = np.random.default_rng(0)
    X = rng.normal(2.0, 3.0, size=(30, 4))
    y = rng.standard_normal(30)
    yield RegressionDataset(X, y)


def test_validate_accepts_well_formed():
    "Test that a finite 3x2 design with a matching response is accepted"
    ds = validate_dataset(RegressionDataset(np.arange(6.0).reshape(3, 2), np.ones(3)))
    assert (ds.n, ds.p) == (3, 2)
    assert not ds.standardized


@pytest.mark.parametrize(
    "X,y,error",
    [
        (np.ones((3, 2)), np.ones(4), DimensionMismatch),
        (np.array([[1.0, np.nan], [2.0, 3.0], [4.0, 5.0]]), np.ones(3), NonFinite),
        (np.ones((3, 2)), np.array([1.0, np.inf, 0.0]), NonFinite),
        (np.ones((1, 2)), np.ones(1), DimensionMismatch),
        (np.ones(3), np.ones(3), DimensionMismatch),
    ],
)
def test_validate_rejects(X, y, error):
    "Test that malformed datasets are rejected with the matching error"
    with pytest.raises(error):
        validate_dataset(RegressionDataset(X, y))


def test_dataset_is_immutable(random_dataset):
    "Test that the arrays of a dataset cannot be written"
    with pytest.raises(ValueError):
        random_dataset.X[0, 0] = 1.0
    with pytest.raises(ValueError):
        random_dataset.y[0] = 1.0


def test_with_response_shares_design(random_dataset):
    "Test that replacing the response keeps the same design array"
    other = random_dataset.with_response(np.zeros(30))
    assert other.X is random_dataset.X
    assert np.all(other.y == 0.0)


def test_standardize_column():
    "Test that the column (1, 2, 3) gets mean 0 and unit mean square"
    ds = RegressionDataset(np.array([[1.0], [2.0], [3.0]]), np.zeros(3))
    out, means, scales = standardize(ds)
    X = out.X
    assert abs(X.mean()) < 1e-10
    assert abs(np.mean(X**2) - 1.0) < 1e-10
    assert means[0] == 2.0
    assert scales[0] == pytest.approx(np.sqrt(2.0 / 3.0))
    assert out.standardized


def test_standardize_constant_column():
    "Test that a constant column is reported by index"
    X = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
    with pytest.raises(ZeroVarianceColumn) as info:
        standardize(RegressionDataset(X, np.zeros(3)))
    assert info.value.column == 1


def test_standardize_idempotent(random_dataset):
    "Test that standardizing twice returns the first result unchanged"
    once = standardize(random_dataset).dataset
    twice, means, scales = standardize(once)
    np.testing.assert_array_equal(twice.X, once.X)
    assert np.all(means == 0.0) and np.all(scales == 1.0)


def test_standardize_scales_truth(random_dataset):
    "Test that beta_true is rescaled so X beta* is unchanged up to the column means"
    beta = np.array([1.0, -2.0, 0.0, 0.5])
    ds = RegressionDataset(random_dataset.X, random_dataset.y, beta_true=beta)
    out, means, scales = standardize(ds)
    np.testing.assert_allclose(out.X @ out.beta_true, ds.X @ beta - means @ beta, atol=1e-10)


def test_destandardize_round_trip(random_dataset):
    "Test that coefficients mapped back reproduce the standardized predictions"
    out, means, scales = standardize(random_dataset, fit_intercept=True)
    beta = np.array([0.3, -1.2, 0.0, 2.0])
    beta_orig, intercept = destandardize_coefficients(beta, means, scales, out.y_offset)
    np.testing.assert_allclose(
        random_dataset.X @ beta_orig + intercept, out.X @ beta + out.y_offset, atol=1e-10
    )


def test_fit_intercept_centers_response(random_dataset):
    "Test that the intercept option removes and records the response mean"
    out = standardize(random_dataset, fit_intercept=True).dataset
    assert abs(out.y.mean()) < 1e-12
    assert out.y_offset == pytest.approx(random_dataset.y.mean())
    assert standardize(random_dataset).dataset.y_offset == 0.0


@pytest.mark.parametrize(
    "test_input,expected",
    [
        ([False, True, False, True, False], (1, 3)),
        ([False] * 5, ()),
        ([True, False, False, False, True], (0, 4)),
    ],
)
def test_support_from_mask(test_input, expected):
    "Test that a support lists the set positions of a mask in order"
    S = SupportSet.from_mask(np.array(test_input))
    assert S.indices == expected and S.p == 5


@pytest.mark.parametrize("indices", [(2, 1), (1, 1), (0, 5), (-1,)])
def test_support_invalid(indices):
    "Test that unsorted, repeated or out-of-range indices are rejected"
    with pytest.raises(InvalidConfig):
        SupportSet(indices, 5)


def test_support_complement():
    "Test the complement and membership of a support"
    S = SupportSet((1, 3), 5)
    np.testing.assert_array_equal(S.complement(), [0, 2, 4])
    assert 3 in S and 2 not in S
    assert len(S) == 2


def test_support_require_estimable():
    "Test that a support larger than n cannot be refitted"
    SupportSet((0, 1), 5).require_estimable(2)
    with pytest.raises(InvalidConfig):
        SupportSet((0, 1, 2), 5).require_estimable(2)


def test_estimate_zero_off_support():
    "Test that an estimate must vanish outside its support"
    S = SupportSet((0,), 3)
    TwoStageEstimate(S, np.array([1.0, 0.0, 0.0]), EstimatorKind.MLS, kept_rank=1)
    with pytest.raises(InvalidConfig):
        TwoStageEstimate(S, np.array([1.0, 0.5, 0.0]), EstimatorKind.MLS, kept_rank=1)
    with pytest.raises(InvalidConfig):
        TwoStageEstimate(S, np.array([1.0, 0.0, 0.0]), EstimatorKind.MLS, kept_rank=2)


def test_read_csv(tmp_path):
    "Test that a CSV file is split into predictors and response"
    path = tmp_path / "data.csv"
    path.write_text("x1,y,x2\n1,2,3\n4,5,6.5\n7,8,9\n")
    csv = read_csv(path, "y")
    assert csv.predictor_names == ("x1", "x2")
    np.testing.assert_array_equal(csv.dataset.X, [[1, 3], [4, 6.5], [7, 9]])
    np.testing.assert_array_equal(csv.dataset.y, [2, 5, 8])


def test_read_csv_no_header(tmp_path):
    "Test that without a header the response is chosen by index"
    path = tmp_path / "data.csv"
    path.write_text("1,2,3\n4,5,6\n7,8,10\n")
    csv = read_csv(path, 0, header=False)
    np.testing.assert_array_equal(csv.dataset.y, [1, 4, 7])
    assert csv.dataset.p == 2


@pytest.mark.parametrize(
    "header,content,row,column",
    [
        (True, "x1,y\n1,2\n3,abc\n", 3, "y"),
        (True, "x1,y\n,2\n3,4\n", 2, "x1"),
        (False, "1,2\n3,4\nfoo,6\n", 3, "0"),
    ],
)
def test_read_csv_non_numeric(tmp_path, header, content, row, column):
    "Test that a non-numeric cell is reported with its file row and column"
    path = tmp_path / "data.csv"
    path.write_text(content)
    with pytest.raises(NonNumericCell) as info:
        read_csv(path, "y" if header else 1, header=header)
    assert info.value.row == row
    assert info.value.column == column


def test_read_csv_missing_response(tmp_path):
    "Test that an unknown response column is a configuration error"
    path = tmp_path / "data.csv"
    path.write_text("a,b\n1,2\n3,4\n")
    with pytest.raises(InvalidConfig):
        read_csv(path, "y")


@pytest.mark.parametrize("content", ["", "a,y\n1,2\n3,4,5\n"])
def test_read_csv_malformed(tmp_path, content):
    "Test that files pandas cannot parse raise an input error"
    path = tmp_path / "data.csv"
    path.write_text(content)
    with pytest.raises(MalformedCsv):
        read_csv(path, "y")
