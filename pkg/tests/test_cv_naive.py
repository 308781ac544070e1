import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core.cv_naive import (
    CovarianceComponents,
    CvResult,
    arcsine_root_bounds,
    cross_validate,
    cross_validate_folds,
    default_interval,
    estimate_covariance_components,
    naive_interval,
    normal_quantile,
    replicate_errors,
    var_mean_from_components,
    vst_interval,
)
from core.dataset import Dataset, ErrorVector, IntervalScale, LossKind, TaskKind
from core.errors import InvalidConfigurationError
from core.fitters import FitterKind, FitterSpec
from core.folds import FoldAssignment, assign_folds
from core.seeding import SeedSpec

OLS = FitterSpec(kind=FitterKind.OLS)


def _result(errors, loss=LossKind.SQUARED_ERROR, K=2) -> CvResult:
    errors = np.asarray(errors, dtype=float)
    n = errors.shape[0]
    folds = FoldAssignment(n=n, K=K, fold_of=np.arange(n) % K + 1)
    return CvResult.from_errors(ErrorVector(errors=errors, loss=loss), folds)


class TestCrossValidate:
    @pytest.fixture
    def data(self):
        """Six observations with a single feature"""
        rng = np.random.default_rng(21)
        x = rng.standard_normal((6, 1))
        return Dataset(features=x, response=2.0 * x[:, 0] + rng.standard_normal(6))

    def test_matches_scripted_folds(self, data):
        """Test each held-out loss comes from the slope fit on the other two folds"""
        seed = SeedSpec(master_seed=4)
        result = cross_validate(data, OLS, LossKind.SQUARED_ERROR, 3, seed)
        folds = assign_folds(6, 3, seed, tag="folds")
        x, y = data.features[:, 0], data.response
        expected = np.empty(6)
        for k in range(1, 4):
            train = folds.fold_of != k
            slope = x[train] @ y[train] / (x[train] @ x[train])
            test = ~train
            expected[test] = (y[test] - slope * x[test]) ** 2
        np.testing.assert_allclose(result.errors.errors, expected, rtol=1e-10)
        assert result.point == pytest.approx(expected.mean(), rel=1e-12)
        assert result.naive_se == pytest.approx(np.std(expected, ddof=1) / np.sqrt(6), rel=1e-12)

    def test_fold_assignment_is_kept(self, data):
        """Test the result carries the fold assignment it was computed on"""
        seed = SeedSpec(master_seed=4)
        result = cross_validate(data, OLS, LossKind.SQUARED_ERROR, 3, seed)
        np.testing.assert_array_equal(result.folds.fold_of, assign_folds(6, 3, seed).fold_of)

    def test_invariant_to_linear_shift(self):
        """Test adding X kappa to the response leaves OLS held-out losses unchanged"""
        rng = np.random.default_rng(2)
        features = rng.standard_normal((30, 3))
        data = Dataset(features=features, response=rng.standard_normal(30))
        shifted = data.with_response(data.response + features @ np.array([1.5, -2.0, 0.25]))
        seed = SeedSpec(master_seed=9)
        base = cross_validate(data, OLS, LossKind.SQUARED_ERROR, 5, seed)
        moved = cross_validate(shifted, OLS, LossKind.SQUARED_ERROR, 5, seed)
        np.testing.assert_allclose(moved.errors.errors, base.errors.errors, rtol=1e-8, atol=1e-12)

    def test_noiseless_response(self):
        """Test an exactly linear response gives zero error and zero standard error"""
        rng = np.random.default_rng(5)
        features = rng.standard_normal((20, 2))
        data = Dataset(features=features, response=features @ np.array([1.0, -1.0]))
        result = cross_validate(data, OLS, LossKind.SQUARED_ERROR, 4, SeedSpec(master_seed=1))
        assert result.point == pytest.approx(0.0, abs=1e-20)
        assert result.naive_se == pytest.approx(0.0, abs=1e-20)

    def test_fold_relabelling_keeps_point(self):
        """Test permuting the fold labels leaves the CV estimate unchanged"""
        rng = np.random.default_rng(6)
        features = rng.standard_normal((40, 3))
        data = Dataset(features=features, response=features @ np.ones(3) + rng.standard_normal(40))
        folds = assign_folds(40, 5, SeedSpec(master_seed=2))
        relabel = np.array([0, 3, 5, 1, 2, 4])
        permuted = FoldAssignment(n=40, K=5, fold_of=relabel[folds.fold_of])
        base = cross_validate_folds(data, OLS, LossKind.SQUARED_ERROR, folds)
        moved = cross_validate_folds(data, OLS, LossKind.SQUARED_ERROR, permuted)
        assert moved.point == pytest.approx(base.point, rel=1e-12)
        np.testing.assert_allclose(moved.errors.errors, base.errors.errors, rtol=1e-10)

    def test_fold_seed_noise_is_small(self):
        """Test the spread of the estimate over 100 fold seeds is far below the naive SE"""
        rng = np.random.default_rng(7)
        features = rng.standard_normal((100, 5))
        data = Dataset(features=features, response=features @ np.ones(5) + rng.standard_normal(100))
        results = [cross_validate(data, OLS, LossKind.SQUARED_ERROR, 10, SeedSpec(master_seed=s))
                   for s in range(100)]
        points = np.array([r.point for r in results])
        assert points.std() > 0
        assert points.std(ddof=1) / np.sqrt(points.size) < 0.1 * results[0].naive_se

    def test_rejects_mismatched_folds(self, data):
        """Test a fold assignment for a different n is refused"""
        folds = FoldAssignment(n=4, K=2, fold_of=[1, 2, 1, 2])
        with pytest.raises(InvalidConfigurationError):
            cross_validate_folds(data, OLS, LossKind.SQUARED_ERROR, folds)

    def test_rejects_zero_one_on_regression(self, data):
        """Test the loss must suit the task"""
        with pytest.raises(InvalidConfigurationError):
            cross_validate(data, OLS, LossKind.ZERO_ONE, 3, SeedSpec(master_seed=0))


class TestIntervals:
    def test_naive_interval_at_ten_percent(self):
        """Test point 0.5 with se 0.1 gives (0.3355, 0.6645) at alpha 0.1"""
        result = CvResult(errors=ErrorVector(errors=[0.4, 0.6, 0.5, 0.5], loss=LossKind.SQUARED_ERROR),
                          point=0.5, naive_se=0.1, folds=FoldAssignment(n=4, K=2, fold_of=[1, 2, 1, 2]))
        interval = naive_interval(result, 0.1)
        assert interval.lo == pytest.approx(0.3355, abs=1e-4)
        assert interval.hi == pytest.approx(0.6645, abs=1e-4)
        assert interval.scale == IntervalScale.RAW

    def test_one_sigma_quantile(self):
        """Test alpha 0.32 gives a half-width of about one standard error"""
        assert normal_quantile(0.32) == pytest.approx(0.9945, abs=1e-4)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1])
    def test_rejects_bad_alpha(self, alpha):
        """Test alpha outside (0, 1) is a configuration error"""
        with pytest.raises(InvalidConfigurationError):
            normal_quantile(alpha)

    def test_arcsine_root_interval(self):
        """Test a 25% error rate over 100 points gives (0.1825, 0.3243)"""
        result = _result([1.0] * 25 + [0.0] * 75, loss=LossKind.ZERO_ONE)
        interval = vst_interval(result, 0.1)
        assert interval.se == pytest.approx(0.05)
        assert interval.lo == pytest.approx(0.1825, abs=1e-4)
        assert interval.hi == pytest.approx(0.3243, abs=1e-4)
        assert interval.scale == IntervalScale.ARCSINE_SQRT

    def test_arcsine_root_at_zero_rate(self):
        """Test a zero error rate keeps the lower bound at 0 with a positive upper bound"""
        interval = vst_interval(_result([0.0] * 40, loss=LossKind.ZERO_ONE), 0.1)
        assert interval.lo == 0.0
        assert 0.0 < interval.hi < 0.1

    @given(rate=st.floats(min_value=0.0, max_value=1.0), half_width=st.floats(min_value=0.0, max_value=2.0))
    @settings(max_examples=100, deadline=None)
    def test_arcsine_root_bounds_bracket_rate(self, rate, half_width):
        """Test the back-transformed bounds stay in [0, 1] around the rate"""
        lo, hi = arcsine_root_bounds(rate, half_width)
        assert 0.0 <= lo <= rate <= hi <= 1.0

    def test_arcsine_root_needs_zero_one(self):
        """Test the transformed interval is refused for squared error"""
        with pytest.raises(InvalidConfigurationError):
            vst_interval(_result([0.1, 0.2, 0.3, 0.4]), 0.1)

    def test_default_interval_switches_on_loss(self):
        """Test zero-one losses get the arcsine-root interval unless it is switched off"""
        zero_one = _result([1.0, 0.0, 0.0, 1.0, 0.0, 0.0], loss=LossKind.ZERO_ONE)
        assert default_interval(zero_one, 0.1).scale == IntervalScale.ARCSINE_SQRT
        assert default_interval(zero_one, 0.1, use_vst=False).scale == IntervalScale.RAW
        assert default_interval(_result([0.1, 0.2, 0.3, 0.4]), 0.1).scale == IntervalScale.RAW


class TestCovarianceComponents:
    @staticmethod
    def _folds(R, n, K, master_seed=0):
        seed = SeedSpec(master_seed=master_seed)
        return [assign_folds(n, K, seed.for_replicate(r)) for r in range(R)]

    def test_independent_losses(self):
        """Test iid losses give a1 near the variance and a2, a3 near zero"""
        rng = np.random.default_rng(0)
        R, n, K = 400, 20, 4
        errors = [ErrorVector(errors=rng.standard_normal(n) ** 2, loss=LossKind.SQUARED_ERROR)
                  for _ in range(R)]
        components = estimate_covariance_components(errors, self._folds(R, n, K))
        assert components.a1 == pytest.approx(2.0, rel=0.15)
        assert abs(components.a2) < 0.15
        assert abs(components.a3) < 0.15

    def test_shared_shift_gives_equal_components(self):
        """Test a replicate-level shift common to every slot makes a1, a2 and a3 equal"""
        rng = np.random.default_rng(1)
        R, n, K = 30, 12, 3
        shifts = rng.random(R)
        errors = [ErrorVector(errors=np.full(n, s), loss=LossKind.SQUARED_ERROR) for s in shifts]
        components = estimate_covariance_components(errors, self._folds(R, n, K))
        assert components.a2 == pytest.approx(components.a1, rel=1e-10)
        assert components.a3 == pytest.approx(components.a1, rel=1e-10)
        assert components.a1 == pytest.approx(np.var(shifts, ddof=1), rel=1e-10)

    def test_needs_two_replicates(self):
        """Test a single replicate cannot estimate covariances"""
        errors = [ErrorVector(errors=np.ones(4), loss=LossKind.SQUARED_ERROR)]
        with pytest.raises(InvalidConfigurationError):
            estimate_covariance_components(errors, self._folds(1, 4, 2))

    def test_replicate_errors_unzips(self):
        """Test results split into parallel error and fold lists"""
        results = [_result([0.1, 0.2, 0.3, 0.4]), _result([0.5, 0.6, 0.7, 0.8])]
        errors, folds = replicate_errors(results)
        assert len(errors) == len(folds) == 2
        assert errors[1].errors[0] == 0.5

    def test_variance_formula(self):
        """Test the implied variance of the CV mean for n=10, K=5"""
        components = CovarianceComponents(a1=1.0, a2=0.5, a3=0.2)
        assert var_mean_from_components(components, 10, 5) == pytest.approx(0.31)

    def test_variance_formula_limits(self):
        """Test uncorrelated losses give a1 / n and equal components give their common value"""
        assert var_mean_from_components(CovarianceComponents(a1=2.0, a2=0.0, a3=0.0), 40, 10) == pytest.approx(0.05)
        assert var_mean_from_components(CovarianceComponents(a1=0.3, a2=0.3, a3=0.3), 40, 10) == pytest.approx(0.3)


class TestClassificationCv:
    def test_zero_one_losses_are_binary(self):
        """Test logistic CV under zero-one loss yields only 0s and 1s"""
        rng = np.random.default_rng(12)
        features = rng.standard_normal((40, 2))
        response = (features[:, 0] + rng.standard_normal(40) > 0).astype(float)
        data = Dataset(features=features, response=response, task=TaskKind.BINARY_CLASSIFICATION)
        result = cross_validate(data, FitterSpec(kind=FitterKind.LOGISTIC), LossKind.ZERO_ONE, 5,
                                SeedSpec(master_seed=2))
        assert set(np.unique(result.errors.errors)) <= {0.0, 1.0}
        assert 0.0 <= result.point <= 1.0
