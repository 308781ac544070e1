import numpy as np
import pytest
from pydantic import ValidationError

from core.cv_naive import cross_validate
from core.dataset import Dataset, IntervalEstimate, IntervalScale, LossKind
from core.errors import InvalidConfigurationError
from core.fitters import FitterKind, FitterSpec
from core.nested_cv import (
    NcvConfig,
    NcvResult,
    corrected_se,
    ncv_bias,
    ncv_interval,
    nested_cross_validate,
    repetition_folds,
    running_mse_trajectory,
)
from core.seeding import SeedSpec

OLS = FitterSpec(kind=FitterKind.OLS)


def _regression(n: int, p: int, seed: int, noise: float = 1.0) -> Dataset:
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n, p))
    response = features @ np.linspace(1.0, -1.0, p) + noise * rng.standard_normal(n)
    return Dataset(features=features, response=response)


def _slope_loss(x, y, train, test):
    slope = x[train] @ y[train] / (x[train] @ x[train])
    return (y[test] - slope * x[test]) ** 2


def _stub_result(err_ncv=0.3, bias_hat=0.01, mse_hat=0.0, loss=LossKind.SQUARED_ERROR, n=100, K=10):
    interval = IntervalEstimate(point=err_ncv, lo=err_ncv, hi=err_ncv, se=0.0, alpha=0.1)
    a_list = np.full((1, K), max(mse_hat, 0.0))
    b_list = np.full((1, K), max(-mse_hat, 0.0))
    return NcvResult(err_ncv=err_ncv, mse_hat=mse_hat, bias_hat=bias_hat, a_mean=float(a_list.mean()),
                     b_mean=float(b_list.mean()), interval=interval, cv_point=err_ncv, naive_se=0.0,
                     loss=loss, n=n, K=K, a_list=a_list, b_list=b_list)


class TestNestedCrossValidate:
    @pytest.fixture
    def data(self):
        """Twelve observations with one feature"""
        return _regression(12, 1, seed=31)

    def test_matches_scripted_repetition(self, data):
        """Test one repetition against inner and outer losses computed fold by fold"""
        seed = SeedSpec(master_seed=17)
        config = NcvConfig(K=3, R=1, use_vst=False)
        result = nested_cross_validate(data, OLS, LossKind.SQUARED_ERROR, config, seed)

        folds = repetition_folds(12, 3, seed, 0)
        x, y, labels = data.features[:, 0], data.response, folds.fold_of
        a, b, inner_all = [], [], []
        for k in range(1, 4):
            inner = np.concatenate([
                _slope_loss(x, y, (labels != k) & (labels != j), labels == j)
                for j in range(1, 4) if j != k
            ])
            outer = _slope_loss(x, y, labels != k, labels == k)
            a.append((inner.mean() - outer.mean()) ** 2)
            b.append(np.var(outer, ddof=1) / outer.shape[0])
            inner_all.append(inner)

        np.testing.assert_allclose(result.a_list[0], a, rtol=1e-9)
        np.testing.assert_allclose(result.b_list[0], b, rtol=1e-9)
        err_ncv = np.concatenate(inner_all).mean()
        assert result.err_ncv == pytest.approx(err_ncv, rel=1e-10)
        assert result.mse_hat == pytest.approx(np.mean(a) - np.mean(b), rel=1e-9, abs=1e-14)

        cv = cross_validate(data, OLS, LossKind.SQUARED_ERROR, 3, seed)
        assert result.cv_point == pytest.approx(cv.point, rel=1e-12)
        assert result.bias_hat == pytest.approx((1.0 + 1.0 / 3.0) * (err_ncv - cv.point), rel=1e-9)

    def test_interval_centered_on_corrected_point(self):
        """Test the raw interval is centered at err_ncv minus the bias estimate"""
        data = _regression(40, 2, seed=3)
        config = NcvConfig(K=4, R=3, use_vst=False)
        result = nested_cross_validate(data, OLS, LossKind.SQUARED_ERROR, config, SeedSpec(master_seed=2))
        interval = result.interval
        assert interval.point == pytest.approx(result.err_ncv - result.bias_hat)
        assert interval.hi - interval.point == pytest.approx(interval.point - interval.lo)
        assert interval.se >= result.naive_se * (1 - 1e-12)
        assert interval.se <= np.sqrt(4) * result.naive_se * (1 + 1e-12)
        assert result.R == 3
        assert result.a_list.shape == (3, 4)

    def test_noiseless_response(self):
        """Test an exactly linear response gives zero error, zero MSE and a zero-width interval"""
        data = _regression(20, 2, seed=8, noise=0.0)
        config = NcvConfig(K=4, R=2, use_vst=False)
        result = nested_cross_validate(data, OLS, LossKind.SQUARED_ERROR, config, SeedSpec(master_seed=0))
        assert result.err_ncv == pytest.approx(0.0, abs=1e-20)
        assert result.mse_hat == pytest.approx(0.0, abs=1e-30)
        assert result.interval.width == pytest.approx(0.0, abs=1e-12)

    def test_worker_count_does_not_change_results(self):
        """Test repetitions give identical output for one or two workers"""
        data = _regression(30, 2, seed=4)
        seed = SeedSpec(master_seed=99)
        serial = nested_cross_validate(data, OLS, LossKind.SQUARED_ERROR,
                                       NcvConfig(K=3, R=4, use_vst=False, n_jobs=1), seed)
        parallel = nested_cross_validate(data, OLS, LossKind.SQUARED_ERROR,
                                         NcvConfig(K=3, R=4, use_vst=False, n_jobs=2), seed)
        np.testing.assert_array_equal(serial.a_list, parallel.a_list)
        np.testing.assert_array_equal(serial.b_list, parallel.b_list)
        assert serial.err_ncv == parallel.err_ncv

    def test_needs_two_rows_per_fold(self):
        """Test n below 2K is refused"""
        with pytest.raises(InvalidConfigurationError):
            nested_cross_validate(_regression(10, 1, seed=0), OLS, LossKind.SQUARED_ERROR,
                                  NcvConfig(K=6, R=1), SeedSpec(master_seed=0))

    def test_rejects_two_folds(self):
        """Test the inner loop needs at least three outer folds"""
        with pytest.raises(ValidationError):
            NcvConfig(K=2)

    def test_arcsine_root_needs_zero_one(self):
        """Test forcing the transformed interval on squared error fails"""
        with pytest.raises(InvalidConfigurationError):
            nested_cross_validate(_regression(20, 1, seed=0), OLS, LossKind.SQUARED_ERROR,
                                  NcvConfig(K=3, R=1, use_vst=True), SeedSpec(master_seed=0))

    def test_running_trajectory_ends_at_estimate(self):
        """Test the running MSE estimate has one entry per repetition and ends at mse_hat"""
        data = _regression(24, 1, seed=6)
        result = nested_cross_validate(data, OLS, LossKind.SQUARED_ERROR,
                                       NcvConfig(K=3, R=5, use_vst=False), SeedSpec(master_seed=1))
        trajectory = running_mse_trajectory(result)
        assert trajectory.shape == (5,)
        assert trajectory[-1] == pytest.approx(result.mse_hat, rel=1e-10, abs=1e-14)

    def test_unscaled_variance_terms(self):
        """Test the unscaled b terms are the default ones times the outer fold size"""
        data = _regression(20, 1, seed=10)
        seed = SeedSpec(master_seed=3)
        default = nested_cross_validate(data, OLS, LossKind.SQUARED_ERROR,
                                        NcvConfig(K=4, R=2, use_vst=False), seed)
        unscaled = nested_cross_validate(data, OLS, LossKind.SQUARED_ERROR,
                                         NcvConfig(K=4, R=2, use_vst=False, unscaled_b=True), seed)
        np.testing.assert_allclose(unscaled.b_list, 5.0 * default.b_list, rtol=1e-12)
        np.testing.assert_array_equal(unscaled.a_list, default.a_list)

    def test_arrays_are_read_only(self):
        """Test the per-fold arrays are frozen"""
        result = nested_cross_validate(_regression(12, 1, seed=2), OLS, LossKind.SQUARED_ERROR,
                                       NcvConfig(K=3, R=1, use_vst=False), SeedSpec(master_seed=0))
        with pytest.raises(ValueError):
            result.a_list[0, 0] = 1.0


class TestBiasAndStandardError:
    def test_bias_examples(self):
        """Test the extrapolated bias for two gaps"""
        assert ncv_bias(0.25, 0.24, 10) == pytest.approx(0.018)
        assert ncv_bias(0.40, 0.42, 4) == pytest.approx(-0.03)

    def test_bias_rejects_small_k(self):
        """Test bias extrapolation needs K of at least 3"""
        with pytest.raises(InvalidConfigurationError):
            ncv_bias(0.3, 0.3, 2)

    def test_se_floor(self):
        """Test a non-positive MSE estimate falls back to the naive standard error"""
        assert corrected_se(-0.01, 0.05, 10) == pytest.approx(0.05)
        assert corrected_se(0.0, 0.05, 10) == pytest.approx(0.05)

    def test_se_ceiling(self):
        """Test a huge MSE estimate is capped at sqrt(K) naive standard errors"""
        assert corrected_se(100.0, 0.05, 10) == pytest.approx(np.sqrt(10) * 0.05)

    def test_se_inside_bounds(self):
        """Test an MSE estimate within the bounds is only rescaled by sqrt((K-1)/K)"""
        assert corrected_se(0.01, 0.05, 10) == pytest.approx(np.sqrt(0.9) * 0.1)

    def test_se_unclamped(self):
        """Test switching the clamp off keeps the raw rescaled value"""
        assert corrected_se(100.0, 0.05, 10, clamp=False) == pytest.approx(np.sqrt(0.9) * 10.0)
        assert corrected_se(-1.0, 0.05, 10, clamp=False) == 0.0

    def test_mse_must_match_components(self):
        """Test a result whose mse_hat is not a_mean - b_mean is refused"""
        with pytest.raises(ValidationError):
            NcvResult(**{**_stub_result().model_dump(), "mse_hat": 0.5})


class TestNcvInterval:
    def test_floor_width(self):
        """Test the floored interval is the corrected point plus or minus z naive standard errors"""
        result = _stub_result(err_ncv=0.3, bias_hat=0.01, mse_hat=0.0)
        interval = ncv_interval(result, 0.02, 100, NcvConfig(alpha=0.1, use_vst=False))
        assert interval.point == pytest.approx(0.29)
        assert interval.width == pytest.approx(2 * 1.644854 * 0.02, rel=1e-6)

    def test_arcsine_root_scaling(self):
        """Test the transformed interval inflates sqrt(1/(4n)) by the clamped ratio"""
        result = _stub_result(err_ncv=0.3, bias_hat=0.0, mse_hat=100.0, loss=LossKind.ZERO_ONE)
        interval = ncv_interval(result, 0.05, 100, NcvConfig(K=10, alpha=0.1))
        assert interval.scale == IntervalScale.ARCSINE_SQRT
        assert interval.se == pytest.approx(np.sqrt(10) * 0.05)
        assert interval.lo < 0.3 < interval.hi

    def test_arcsine_root_clips_point(self):
        """Test a corrected rate below zero is clipped to zero"""
        result = _stub_result(err_ncv=0.01, bias_hat=0.05, mse_hat=0.0, loss=LossKind.ZERO_ONE)
        interval = ncv_interval(result, 0.01, 100, NcvConfig(K=10, alpha=0.1))
        assert interval.point == 0.0
        assert interval.lo == 0.0

    def test_rejects_negative_naive_se(self):
        """Test a negative naive standard error is refused"""
        with pytest.raises(InvalidConfigurationError):
            ncv_interval(_stub_result(), -0.1, 100, NcvConfig())
