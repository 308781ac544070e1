import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core.alt_estimators import (
    DOT632_WEIGHT,
    bootstrap_error,
    cp_from_rss,
    draw_resamples,
    err_in_linear,
    err_x_linear,
    holdout_size,
    mallows_cp,
    rcp,
    rcp_from_rss,
    split_estimate,
    split_interval,
    var_err_xy_given_x,
)
from core.dataset import Dataset, IntervalScale, LossKind, TaskKind
from core.dgp import DgpSpec, ThetaSpec, expected_ols_error, generate_dataset
from core.errors import DegenerateResamplingError, InvalidConfigurationError, SingularDesignError
from core.fitters import FitterKind, FitterSpec, fit
from core.seeding import SeedSpec

OLS = FitterSpec(kind=FitterKind.OLS)


def _regression(n: int, p: int, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n, p))
    return Dataset(features=features, response=features @ np.ones(p) + rng.standard_normal(n))


class TestCovariancePenalties:
    def test_cp_arithmetic(self):
        """Test Cp adds 2 p sigma^2 / n to the training error"""
        # rss / (n - p) = 1
        assert cp_from_rss(80.0, 100, 20) == pytest.approx(0.8 + 0.4)

    def test_rcp_arithmetic(self):
        """Test RCp adds the random-feature penalty on top of Cp's"""
        penalty = 0.2 * (2.0 + 21.0 / 79.0)
        assert penalty == pytest.approx(0.45316, abs=1e-5)
        assert rcp_from_rss(80.0, 100, 20) == pytest.approx(0.8 + penalty)

    def test_rcp_exceeds_cp(self):
        """Test RCp is always the larger of the two"""
        data = _regression(50, 5, seed=1)
        assert rcp(data) > mallows_cp(data)

    @given(rss=st.floats(min_value=1e-6, max_value=1e6), n=st.integers(min_value=3, max_value=500),
           data=st.data())
    @settings(max_examples=80, deadline=None)
    def test_rcp_never_below_cp(self, rss, n, data):
        """Test the RCp penalty dominates Cp whenever both are defined"""
        p = data.draw(st.integers(min_value=1, max_value=n - 2))
        assert rcp_from_rss(rss, n, p) >= cp_from_rss(rss, n, p)

    def test_matches_full_fit(self):
        """Test Cp uses the residual sum of squares of the full OLS fit"""
        data = _regression(40, 3, seed=2)
        residual = data.response - fit(data, OLS).linear_predictor(data.features)
        assert mallows_cp(data) == pytest.approx(cp_from_rss(float(residual @ residual), 40, 3))

    def test_intercept_counts_as_parameter(self):
        """Test an intercept adds one to p"""
        data = _regression(40, 3, seed=2)
        spec = FitterSpec(kind=FitterKind.OLS, include_intercept=True)
        residual = data.response - fit(data, spec).linear_predictor(data.features)
        assert mallows_cp(data, include_intercept=True) == pytest.approx(
            cp_from_rss(float(residual @ residual), 40, 4))

    def test_invariant_to_linear_shift(self):
        """Test Cp and RCp are unchanged by adding X kappa to the response"""
        data = _regression(60, 4, seed=3)
        shifted = data.with_response(data.response + data.features @ np.array([5.0, -2.0, 0.5, 7.0]))
        assert mallows_cp(shifted) == pytest.approx(mallows_cp(data), rel=1e-9)
        assert rcp(shifted) == pytest.approx(rcp(data), rel=1e-9)

    def test_rcp_needs_room(self):
        """Test RCp is undefined once n <= p + 1"""
        with pytest.raises(InvalidConfigurationError):
            rcp(_regression(6, 5, seed=0))
        with pytest.raises(InvalidConfigurationError):
            rcp_from_rss(1.0, 6, 5)


class TestAnalyticEstimands:
    def test_err_x_equals_in_sample_error(self):
        """Test Err_X with Sigma set to the sample covariance reduces to sigma^2 (1 + p / n)"""
        rng = np.random.default_rng(4)
        X = rng.standard_normal((30, 4))
        value = err_x_linear(X, X.T @ X / 30, sigma2=2.0)
        assert value == pytest.approx(err_in_linear(30, 4, 2.0))
        assert value == pytest.approx(2.0 * (1 + 4 / 30))

    def test_err_x_exceeds_in_sample_on_average(self):
        """Test Err_X under the true identity covariance is above sigma^2 (1 + p / n) on average"""
        rng = np.random.default_rng(5)
        values = [err_x_linear(rng.standard_normal((40, 5)), np.eye(5), 1.0) for _ in range(200)]
        assert np.mean(values) > err_in_linear(40, 5, 1.0)

    def test_conditional_variance_identity(self):
        """Test var(Err_XY | X) is 2 sigma^4 p when Sigma equals the Gram matrix"""
        rng = np.random.default_rng(6)
        X = rng.standard_normal((25, 3))
        assert var_err_xy_given_x(X, X.T @ X, 0.5) == pytest.approx(2.0 * 0.25 * 3)

    def test_conditional_variance_matches_simulation(self):
        """Test the closed-form conditional variance against noise redraws at a fixed design"""
        rng = np.random.default_rng(7)
        n, p, sigma2 = 30, 3, 1.0
        X = rng.standard_normal((n, p))
        hat = np.linalg.solve(X.T @ X, X.T)
        deviation = rng.standard_normal((50000, n)) @ hat.T
        err_xy = sigma2 + np.sum(deviation ** 2, axis=1)
        assert err_xy.var() == pytest.approx(var_err_xy_given_x(X, np.eye(p), sigma2), rel=0.05)

    def test_singular_designs(self):
        """Test n <= p is refused by every closed form"""
        X = np.ones((3, 3))
        with pytest.raises(SingularDesignError):
            err_x_linear(X, np.eye(3), 1.0)
        with pytest.raises(SingularDesignError):
            var_err_xy_given_x(X, np.eye(3), 1.0)
        with pytest.raises(InvalidConfigurationError):
            err_in_linear(3, 3, 1.0)


class TestDataSplitting:
    @pytest.fixture
    def data(self):
        """Fifty regression rows with two features"""
        return _regression(50, 2, seed=11)

    @pytest.mark.parametrize("n,fraction,expected", [(100, 0.8, 20), (25, 0.9, 3), (50, 0.5, 25), (11, 0.8, 2)])
    def test_holdout_size(self, n, fraction, expected):
        """Test the holdout is n (1 - fraction) rounded half up"""
        assert holdout_size(n, fraction) == expected

    def test_partition_and_losses(self, data):
        """Test rows split into disjoint sets and the estimate is the holdout mean loss"""
        result = split_estimate(data, OLS, LossKind.SQUARED_ERROR, 0.8, seed=SeedSpec(master_seed=3))
        assert result.holdout_rows.shape[0] == 10
        assert np.intersect1d(result.holdout_rows, result.train_rows).size == 0
        assert np.union1d(result.holdout_rows, result.train_rows).tolist() == list(range(50))
        holdout = data.subset(result.holdout_rows)
        residual = holdout.response - result.train_model.linear_predictor(holdout.features)
        assert result.err_split == pytest.approx(np.mean(residual ** 2))
        assert result.se_split == pytest.approx(np.std(residual ** 2, ddof=1) / np.sqrt(10))

    def test_refit_uses_all_rows(self, data):
        """Test the refit model is the full-data fit"""
        result = split_estimate(data, OLS, LossKind.SQUARED_ERROR, 0.8, seed=SeedSpec(master_seed=3))
        np.testing.assert_allclose(result.refit_model.coefficients, fit(data, OLS).coefficients)
        assert split_estimate(data, OLS, LossKind.SQUARED_ERROR, refit=False).refit_model is None

    def test_invariant_to_linear_shift(self, data):
        """Test adding X kappa to the response leaves the split estimate unchanged"""
        shifted = data.with_response(data.response + data.features @ np.array([3.0, -1.0]))
        seed = SeedSpec(master_seed=8)
        base = split_estimate(data, OLS, LossKind.SQUARED_ERROR, seed=seed)
        moved = split_estimate(shifted, OLS, LossKind.SQUARED_ERROR, seed=seed)
        assert moved.err_split == pytest.approx(base.err_split, rel=1e-8)

    def test_refit_standard_error_too_small(self):
        """Test the holdout SE understates the deviation from the full-data Err when p is a fixed share of n"""
        dgp = DgpSpec(n=200, p=100, theta=ThetaSpec(k=4))
        err = expected_ols_error(200, 100, 1.0)
        squared_se, deviation = [], []
        for r in range(400):
            seed = SeedSpec(master_seed=9).for_replicate(r)
            data, _ = generate_dataset(dgp, seed)
            result = split_estimate(data, OLS, LossKind.SQUARED_ERROR, 0.8, refit=True, seed=seed)
            squared_se.append(result.se_split ** 2)
            deviation.append((result.err_split - err) ** 2)
        gap = np.array(deviation) - np.array(squared_se)
        assert gap.mean() > 3 * gap.std(ddof=1) / np.sqrt(gap.size)

    def test_literal_standard_error(self, data):
        """Test the literal option drops the division by sqrt(holdout size)"""
        seed = SeedSpec(master_seed=3)
        usual = split_estimate(data, OLS, LossKind.SQUARED_ERROR, seed=seed)
        literal = split_estimate(data, OLS, LossKind.SQUARED_ERROR, seed=seed, literal_se=True)
        assert literal.se_split == pytest.approx(usual.se_split * np.sqrt(10))

    def test_rejects_tiny_holdout(self):
        """Test a holdout of fewer than two rows is refused"""
        with pytest.raises(InvalidConfigurationError):
            split_estimate(_regression(7, 1, seed=0), OLS, LossKind.SQUARED_ERROR, 0.8)

    def test_interval_scales(self, data):
        """Test the split interval is raw for squared error and refuses the arcsine root"""
        result = split_estimate(data, OLS, LossKind.SQUARED_ERROR, seed=SeedSpec(master_seed=1))
        interval = split_interval(result, 0.1)
        assert interval.scale == IntervalScale.RAW
        assert interval.width == pytest.approx(2 * 1.644854 * result.se_split, rel=1e-6)
        with pytest.raises(InvalidConfigurationError):
            split_interval(result, 0.1, use_vst=True)

    def test_zero_one_interval_uses_holdout_size(self):
        """Test zero-one holdouts get the sqrt(1/(4m)) standard error"""
        rng = np.random.default_rng(13)
        features = rng.standard_normal((60, 2))
        response = (features[:, 0] + rng.standard_normal(60) > 0).astype(float)
        data = Dataset(features=features, response=response, task=TaskKind.BINARY_CLASSIFICATION)
        result = split_estimate(data, FitterSpec(kind=FitterKind.LOGISTIC), LossKind.ZERO_ONE, 0.8,
                                seed=SeedSpec(master_seed=2))
        interval = split_interval(result, 0.1)
        assert interval.scale == IntervalScale.ARCSINE_SQRT
        assert interval.se == pytest.approx(np.sqrt(1.0 / 48.0))


class TestBootstrap:
    @pytest.fixture
    def data(self):
        """Fifteen regression rows with one feature"""
        return _regression(15, 1, seed=14)

    def test_matches_scripted_resamples(self, data):
        """Test two resamples against an out-of-bag average computed by hand"""
        seed = SeedSpec(master_seed=5)
        result = bootstrap_error(data, OLS, LossKind.SQUARED_ERROR, B=2, seed=seed)

        loss_sum, counts = np.zeros(15), np.zeros(15)
        x, y = data.features[:, 0], data.response
        for b in range(2):
            rows = next(draw_resamples(15, seed, b))
            slope = x[rows] @ y[rows] / (x[rows] @ x[rows])
            out = np.setdiff1d(np.arange(15), rows)
            loss_sum[out] += (y[out] - slope * x[out]) ** 2
            counts[out] += 1
        seen = counts > 0
        oob = np.mean(loss_sum[seen] / counts[seen])
        slope = x @ y / (x @ x)
        apparent = np.mean((y - slope * x) ** 2)

        assert result.oob == pytest.approx(oob, rel=1e-10)
        assert result.apparent == pytest.approx(apparent, rel=1e-10)
        assert result.dot632 == pytest.approx((1 - DOT632_WEIGHT) * apparent + DOT632_WEIGHT * oob)
        assert result.never_out_of_bag == int((~seen).sum())
        assert result.redraws == 0

    def test_invariant_to_linear_shift(self, data):
        """Test OOB and .632 errors are unchanged by adding X kappa to the response"""
        shifted = data.with_response(data.response + 4.0 * data.features[:, 0])
        seed = SeedSpec(master_seed=6)
        base = bootstrap_error(data, OLS, LossKind.SQUARED_ERROR, B=20, seed=seed)
        moved = bootstrap_error(shifted, OLS, LossKind.SQUARED_ERROR, B=20, seed=seed)
        assert moved.oob == pytest.approx(base.oob, rel=1e-8)
        assert moved.dot632 == pytest.approx(base.dot632, rel=1e-8)

    def test_worker_count_does_not_change_results(self, data):
        """Test bootstrap output is the same for one or two workers"""
        seed = SeedSpec(master_seed=7)
        serial = bootstrap_error(data, OLS, LossKind.SQUARED_ERROR, B=10, seed=seed, n_jobs=1)
        parallel = bootstrap_error(data, OLS, LossKind.SQUARED_ERROR, B=10, seed=seed, n_jobs=2)
        assert serial == parallel

    def test_out_of_bag_above_dot632_above_apparent(self):
        """Test oob >= .632 >= apparent, with both gaps positive on average"""
        dgp = DgpSpec(n=100, p=20, theta=ThetaSpec(k=4))
        results = []
        for r in range(40):
            seed = SeedSpec(master_seed=10).for_replicate(r)
            data, _ = generate_dataset(dgp, seed)
            results.append(bootstrap_error(data, OLS, LossKind.SQUARED_ERROR, B=25, seed=seed))
        oob = np.array([r.oob for r in results])
        dot632 = np.array([r.dot632 for r in results])
        apparent = np.array([r.apparent for r in results])
        assert np.all(oob >= dot632) and np.all(dot632 >= apparent)
        assert (oob - dot632).mean() > 0 and (dot632 - apparent).mean() > 0

    def test_gives_up_when_every_fit_fails(self):
        """Test a fitter that can never succeed exhausts the redraw cap"""
        rng = np.random.default_rng(0)
        data = Dataset(features=rng.standard_normal((5, 6)), response=rng.standard_normal(5))
        with pytest.raises(DegenerateResamplingError):
            bootstrap_error(data, OLS, LossKind.SQUARED_ERROR, B=2, seed=SeedSpec(master_seed=0))

    def test_needs_positive_b(self, data):
        """Test B below 1 is refused"""
        with pytest.raises(InvalidConfigurationError):
            bootstrap_error(data, OLS, LossKind.SQUARED_ERROR, B=0)
