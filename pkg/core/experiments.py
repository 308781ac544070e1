"""
Monte Carlo experiment drivers: interval coverage, estimand separation,
rate scaling, nested-CV unbiasedness and subsample-and-holdout on real data.

Every driver splits its work into per-replicate units that derive their own
random streams from the master SeedSpec, so reports are identical for any
worker count.
"""

import logging
from enum import Enum
from functools import partial
from typing import Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .alt_estimators import err_x_linear, split_estimate, split_interval, var_err_xy_given_x
from .cv_naive import cross_validate, default_interval, naive_interval
from .dataset import Dataset, IntervalEstimate, IntervalScale, LossKind, default_loss
from .dgp import (
    DgpFamily,
    DgpSpec,
    ThetaKind,
    ThetaSpec,
    bayes_error,
    build_theta,
    covariance_matrix,
    expected_ols_error,
    generate_dataset,
    generate_design,
    generate_response,
    holdout_error,
    oracle_error,
    true_err_xy_linear,
)
from .errors import FIT_FAILURES, InvalidConfigurationError
from .fitters import PENALIZED, FitterKind, FitterSpec, fit, penalty_grid, select_penalty_by_cv
from .nested_cv import NcvConfig, nested_cross_validate
from .parallel import run_units
from .seeding import SeedSpec

logger = logging.getLogger(__name__)

MIN_RATE_POINTS = 4
SUBSAMPLE_RESERVE = 1_000


class Method(str, Enum):
    CV = "cv"
    NCV = "ncv"
    DS = "ds"


class Target(str, Enum):
    ERR = "err"
    ERR_XY = "err_xy"


class CoverageSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    K: int = Field(default=10, ge=3, description="Fold count for CV and nested CV")
    R: int = Field(default=200, ge=1, description="Nested CV repetitions")
    train_fraction: float = Field(default=0.8, gt=0.0, lt=1.0, description="Data-splitting training share")
    clamp: bool = Field(default=True)
    use_vst: Optional[bool] = Field(default=None, description="None means on for zero-one loss")
    unscaled_b: bool = Field(default=False)
    literal_split_se: bool = Field(default=False)
    loss: Optional[LossKind] = Field(default=None, description="None means the task default")
    n_jobs: int = Field(default=1, ge=1, description="Worker count over replicates")


class ReplicateRecord(BaseModel):
    """Intervals of one replicate and the error of the model fit on all of its rows"""

    replicate: int
    err_xy: float
    intervals: Dict[str, IntervalEstimate]


class CoverageRow(BaseModel):
    method: str
    target: Target
    width_ratio_mean: float = Field(..., description="Mean width relative to the naive CV interval")
    point_mean: float
    err_mean: float = Field(..., description="Mean of the target quantity")
    hi_miscoverage: float = Field(..., ge=0.0, le=1.0, description="Share of intervals above the target")
    lo_miscoverage: float = Field(..., ge=0.0, le=1.0, description="Share of intervals below the target")
    mc_se: float = Field(..., ge=0.0, description="Monte Carlo SE of the total miscoverage")

    @property
    def miscoverage(self) -> float:
        return self.hi_miscoverage + self.lo_miscoverage


class CoverageReport(BaseModel):
    rows: List[CoverageRow]
    err: float = Field(..., description="Mean of the per-replicate Err_XY oracles")
    err_mc_se: float = Field(..., ge=0.0)
    bayes_error: Optional[float] = None
    replicates: int = Field(..., ge=0, description="Replicates kept")
    failures: int = Field(default=0, ge=0, description="Replicates dropped after a fit failure")
    alpha: float
    scales: Dict[str, IntervalScale] = Field(default_factory=dict)
    n: Optional[int] = Field(default=None, description="Training size, for series presets")
    penalty: Optional[float] = Field(default=None, description="Frozen penalty, when one was calibrated")

    def row(self, method: str, target: Target) -> CoverageRow:
        for row in self.rows:
            if row.method == method and row.target == target:
                return row
        raise KeyError((method, target))


def _binomial_se(rate: float, count: int) -> float:
    return float(np.sqrt(rate * (1.0 - rate) / count)) if count else 0.0


def tabulate_coverage(records: Sequence[ReplicateRecord], alpha: float, failures: int = 0,
                      bayes: Optional[float] = None, reference: str = Method.CV.value) -> CoverageReport:
    """
    Hi/Lo miscoverage of every method against Err_XY and against Err = mean Err_XY.

    Args:
        records: Surviving replicates, all carrying the same methods.
        alpha: Nominal miscoverage the intervals were built at.
        failures: Replicates dropped before tabulation; reported, not used.
        bayes: Bayes error of the DGP, when known.
        reference: Method whose width is the denominator of width_ratio_mean.

    Returns:
        CoverageReport with one row per (method, target), methods in record
        order and Err before Err_XY.

    Raises:
        InvalidConfigurationError: no record survived.
    """
    if not records:
        raise InvalidConfigurationError("no replicate survived; nothing to tabulate")
    count = len(records)
    err_xy = np.array([r.err_xy for r in records])
    err = float(err_xy.mean())
    err_mc_se = float(err_xy.std(ddof=1) / np.sqrt(count)) if count > 1 else 0.0

    methods = list(records[0].intervals)
    rows: List[CoverageRow] = []
    scales: Dict[str, IntervalScale] = {}
    for method in methods:
        intervals = [r.intervals[method] for r in records]
        scales[method] = intervals[0].scale
        lo = np.array([i.lo for i in intervals])
        hi = np.array([i.hi for i in intervals])
        points = np.array([i.point for i in intervals])
        if method == reference or reference not in records[0].intervals:
            ratio = 1.0
        else:
            widths = hi - lo
            reference_widths = np.array([r.intervals[reference].width for r in records])
            usable = reference_widths > 0
            ratio = float(np.mean(widths[usable] / reference_widths[usable])) if usable.any() else float("nan")

        for target, values in ((Target.ERR, np.full(count, err)), (Target.ERR_XY, err_xy)):
            above = float(np.mean(lo > values))
            below = float(np.mean(hi < values))
            rows.append(CoverageRow(
                method=method, target=target, width_ratio_mean=ratio, point_mean=float(points.mean()),
                err_mean=float(values.mean()), hi_miscoverage=above, lo_miscoverage=below,
                mc_se=_binomial_se(above + below, count),
            ))

    return CoverageReport(rows=rows, err=err, err_mc_se=err_mc_se, bayes_error=bayes, replicates=count,
                          failures=failures, alpha=alpha, scales=scales)


def _method_intervals(data: Dataset, fitter: FitterSpec, loss: LossKind, methods: Set[Method],
                      alpha: float, settings: CoverageSettings, seed: SeedSpec) -> Dict[str, IntervalEstimate]:
    use_vst = settings.use_vst if settings.use_vst is not None else loss == LossKind.ZERO_ONE
    cv = cross_validate(data, fitter, loss, settings.K, seed)
    intervals = {Method.CV.value: default_interval(cv, alpha, use_vst=use_vst)}
    if Method.NCV in methods:
        config = NcvConfig(K=settings.K, R=settings.R, alpha=alpha, clamp=settings.clamp,
                           use_vst=use_vst, unscaled_b=settings.unscaled_b)
        intervals[Method.NCV.value] = nested_cross_validate(data, fitter, loss, config, seed).interval
    if Method.DS in methods:
        split = split_estimate(data, fitter, loss, settings.train_fraction, refit=True, seed=seed,
                               literal_se=settings.literal_split_se)
        intervals[Method.DS.value] = split_interval(split, alpha, use_vst=use_vst)
    return intervals


def _ordered_methods(methods: Set[Method]) -> List[str]:
    return [m.value for m in Method if m in methods or m == Method.CV]


def calibrate_penalty(dgp: DgpSpec, fitter: FitterSpec, K: int, seed: SeedSpec,
                      loss: Optional[LossKind] = None) -> FitterSpec:
    """Freeze the penalty chosen by CV on one independent draw of the DGP"""
    if fitter.kind not in PENALIZED or fitter.penalty is not None:
        return fitter
    data, _ = generate_dataset(dgp, seed, tag="calibration")
    grid = penalty_grid(data, fitter)
    penalty = select_penalty_by_cv(data, fitter, grid, K, seed, loss=loss)
    logger.info("Calibrated %s penalty %.4g on an independent draw", fitter.kind.value, penalty)
    return fitter.with_penalty(penalty)


def _coverage_unit(dgp: DgpSpec, fitter: FitterSpec, loss: LossKind, methods: Set[Method], alpha: float,
                   settings: CoverageSettings, seed: SeedSpec, replicate: int) -> Optional[ReplicateRecord]:
    replicate_seed = seed.for_replicate(replicate)
    data, theta = generate_dataset(dgp, replicate_seed)
    try:
        model = fit(data, fitter)
        target = oracle_error(model, dgp, theta, loss, replicate_seed)
        intervals = _method_intervals(data, fitter, loss, methods, alpha, settings, replicate_seed)
    except FIT_FAILURES as exc:
        logger.warning("Dropping replicate %d: %s", replicate, exc)
        return None
    return ReplicateRecord(replicate=replicate, err_xy=target,
                           intervals={m: intervals[m] for m in _ordered_methods(methods)})


def _kept_records(records: Sequence[Optional[ReplicateRecord]], n: int) -> Tuple[List[ReplicateRecord], int]:
    kept = [r for r in records if r is not None]
    failures = len(records) - len(kept)
    if failures:
        logger.warning("n=%d: %d of %d replicates dropped after fit failures", n, failures, len(records))
    return kept, failures


def _check_replicates(replicates: int) -> None:
    if replicates < 1:
        raise InvalidConfigurationError("replicates must be at least 1")
    if replicates < 100:
        logger.warning("Coverage estimates from %d replicates are very noisy", replicates)


def run_coverage_experiment(dgp: DgpSpec, methods: Set[Method], fitter: FitterSpec, replicates: int,
                            alpha: float, seed: SeedSpec,
                            settings: Optional[CoverageSettings] = None) -> CoverageReport:
    """
    Monte Carlo coverage of CV, NCV and DS intervals on fresh draws of a DGP.

    A penalized fitter without a penalty gets one frozen by CV on an
    independent draw first. Replicates whose fits fail are dropped and counted.

    Args:
        dgp: Data-generating process; its n is the training size.
        methods: Interval methods; naive CV is always included as the reference.
        fitter: Model-fitting algorithm.
        replicates: Number of datasets drawn.
        alpha: Nominal miscoverage.
        seed: Master seed; replicate r uses ``seed.for_replicate(r)``.
        settings: Folds, repetitions and interval options.

    Returns:
        CoverageReport with n, the frozen penalty and the failure count set.
    """
    _check_replicates(replicates)
    settings = settings or CoverageSettings()
    methods = {Method(m) for m in methods}
    loss = settings.loss or default_loss(dgp.task)
    fitter = calibrate_penalty(dgp, fitter, settings.K, seed, loss)

    unit = partial(_coverage_unit, dgp, fitter, loss, methods, alpha, settings, seed)
    records = run_units(unit, list(range(replicates)), n_jobs=settings.n_jobs)
    kept, failures = _kept_records(records, dgp.n)
    report = tabulate_coverage(kept, alpha, failures=failures, bayes=bayes_error(dgp))
    return report.model_copy(update={"n": dgp.n, "penalty": fitter.penalty})


# --- estimand separation ---------------------------------------------------------------

class EstimandRow(BaseModel):
    target: str
    mse: float = Field(..., ge=0.0, description="Mean squared deviation of the CV estimate")
    mse_mc_se: float = Field(..., ge=0.0)
    hi_miscoverage: float
    lo_miscoverage: float
    mc_se: float


class EstimandReport(BaseModel):
    n: int
    p: int
    fixed_x: bool
    replicates: int
    err: float
    rows: List[EstimandRow]
    mean_conditional_var: float = Field(..., description="Mean over replicates of var(Err_XY | X)")
    correlation: float = Field(..., description="Correlation of the CV estimate with Err_XY")
    correlation_se: float
    scatter: List[List[float]] = Field(default_factory=list, description="(Err_XY, CV estimate) pairs")

    def row(self, target: str) -> EstimandRow:
        return next(r for r in self.rows if r.target == target)


def _correlation(a: np.ndarray, b: np.ndarray) -> float:
    if np.std(a) == 0 or np.std(b) == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def _estimand_unit(dgp: DgpSpec, K: int, alpha: float, design: Optional[np.ndarray], seed: SeedSpec,
                   replicate: int) -> np.ndarray:
    replicate_seed = seed.for_replicate(replicate)
    theta = build_theta(dgp)
    if design is None:
        data, _ = generate_dataset(dgp, replicate_seed)
    else:
        data = generate_response(dgp, design, theta, replicate_seed)
    sigma = covariance_matrix(dgp.p, dgp.covariance)
    spec = FitterSpec(kind=FitterKind.OLS)

    cv = cross_validate(data, spec, LossKind.SQUARED_ERROR, K, replicate_seed)
    interval = naive_interval(cv, alpha)
    err_xy = true_err_xy_linear(fit(data, spec), theta, sigma, dgp.sigma2)
    err_x = err_x_linear(data.features, sigma, dgp.sigma2)
    conditional_var = var_err_xy_given_x(data.features, sigma, dgp.sigma2)
    return np.array([cv.point, interval.lo, interval.hi, err_x, err_xy, conditional_var])


def run_estimand_experiment(n: int, p: int, replicates: int, fixed_x: bool, seed: SeedSpec,
                            sigma2: float = 1.0, K: int = 10, alpha: float = 0.1,
                            n_jobs: int = 1) -> EstimandReport:
    """
    Mean squared deviation of the OLS CV estimate from Err, Err_X and Err_XY.

    Returns:
        EstimandReport with one row per target, the correlation of the CV
        estimate with Err_XY and the (Err_XY, CV) scatter. With ``fixed_x``
        one design is drawn and only the noise is redrawn per replicate.
    """
    if replicates < 2:
        raise InvalidConfigurationError("the estimand experiment needs at least 2 replicates")
    dgp = DgpSpec(family=DgpFamily.LINEAR_GAUSSIAN, n=n, p=p, noise_sd=float(np.sqrt(sigma2)),
                  theta=ThetaSpec(kind=ThetaKind.K_SPARSE, k=min(p, 4)))
    design = generate_design(dgp, seed) if fixed_x else None

    unit = partial(_estimand_unit, dgp, K, alpha, design, seed)
    table = np.vstack(run_units(unit, list(range(replicates)), n_jobs=n_jobs))
    point, lo, hi, err_x, err_xy, conditional_var = table.T
    err = expected_ols_error(n, p, sigma2)

    rows = []
    for name, values in (("err", np.full(replicates, err)), ("err_x", err_x), ("err_xy", err_xy)):
        squared = (point - values) ** 2
        above = float(np.mean(lo > values))
        below = float(np.mean(hi < values))
        rows.append(EstimandRow(target=name, mse=float(squared.mean()),
                                mse_mc_se=float(squared.std(ddof=1) / np.sqrt(replicates)),
                                hi_miscoverage=above, lo_miscoverage=below,
                                mc_se=_binomial_se(above + below, replicates)))

    correlation = _correlation(point, err_xy)
    return EstimandReport(
        n=n, p=p, fixed_x=fixed_x, replicates=replicates, err=err, rows=rows,
        mean_conditional_var=float(conditional_var.mean()),
        correlation=correlation,
        correlation_se=float((1.0 - correlation ** 2) / np.sqrt(replicates - 1)),
        scatter=np.column_stack([err_xy, point]).tolist(),
    )


# --- rate scan ---------------------------------------------------------------------------------

class Proportional(BaseModel):
    model_config = ConfigDict(frozen=True)

    lambda_: float = Field(..., gt=1.0, description="Aspect ratio n / p")

    def p_for(self, n: int) -> int:
        return int(round(n / self.lambda_))

    def describe(self) -> str:
        return f"proportional(lambda={self.lambda_:g})"


class FixedP(BaseModel):
    model_config = ConfigDict(frozen=True)

    p: int = Field(..., ge=1)

    def p_for(self, n: int) -> int:
        return self.p

    def describe(self) -> str:
        return f"fixed_p(p={self.p})"


Regime = Union[Proportional, FixedP]

RATE_QUANTITIES = ("excess_err", "rms_cv_deviation", "sd_err_xy_given_x", "sd_err_x")


class RatePoint(BaseModel):
    n: int
    p: int
    excess_err: float = Field(..., ge=0.0, description="Err - sigma^2")
    rms_cv_deviation: float = Field(..., ge=0.0, description="RMS of the CV estimate minus Err")
    sd_err_xy_given_x: float = Field(..., ge=0.0, description="sqrt of mean var(Err_XY | X)")
    sd_err_x: float = Field(..., ge=0.0, description="sd of Err_X over X draws")
    var_err_xy: float = Field(..., ge=0.0, description="var(Err_XY) over every (X, Y) draw")
    mean_conditional_var: float = Field(..., ge=0.0)
    var_err_x: float = Field(..., ge=0.0)
    var_decomposition_se: float = Field(default=0.0, ge=0.0,
                                        description="MC SE of var(Err_XY) minus its decomposition")
    cor_cv_err_xy: float
    cor_err_x_err_xy: float


class RateScanResult(BaseModel):
    regime: str
    rows: List[RatePoint]
    slopes: Dict[str, float]


def _rate_cv_unit(n: int, p: int, sigma2: float, K: int, seed: SeedSpec, replicate: int) -> np.ndarray:
    dgp = DgpSpec(n=n, p=p, noise_sd=float(np.sqrt(sigma2)), theta=ThetaSpec(kind=ThetaKind.ZERO))
    replicate_seed = seed.for_replicate(replicate)
    data, theta = generate_dataset(dgp, replicate_seed)
    spec = FitterSpec(kind=FitterKind.OLS)
    sigma = np.eye(p)
    cv = cross_validate(data, spec, LossKind.SQUARED_ERROR, K, replicate_seed)
    err_xy = true_err_xy_linear(fit(data, spec), theta, sigma, sigma2)
    err_x = err_x_linear(data.features, sigma, sigma2)
    return np.array([cv.point, err_xy, err_x])


def _rate_nested_unit(n: int, p: int, sigma2: float, inner: int, seed: SeedSpec, outer: int) -> np.ndarray:
    """Err_XY for `inner` noise draws at one design; OLS error is theta_hat - theta = (X'X)^-1 X' eps"""
    rng = seed.for_replicate(outer).rng("design")
    X = rng.standard_normal((n, p))
    hat = np.linalg.solve(X.T @ X, X.T)
    noise = np.sqrt(sigma2) * rng.standard_normal((inner, n))
    deviation = noise @ hat.T
    err_xy = sigma2 + np.sum(deviation ** 2, axis=1)
    return np.concatenate([[err_x_linear(X, np.eye(p), sigma2)], err_xy])


def _log_slope(n_grid: Sequence[int], values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=float)
    if np.any(values <= 0):
        return float("nan")
    return float(np.polyfit(np.log(n_grid), np.log(values), 1)[0])


def run_rate_scan(regime: Regime, n_grid: Sequence[int], replicates: int, seed: SeedSpec,
                  sigma2: float = 1.0, K: int = 10, outer: int = 200, inner: int = 200,
                  n_jobs: int = 1) -> RateScanResult:
    """
    Scaling in n of the excess error and of the CV, Err_XY and Err_X fluctuations.

    Args:
        regime: How p follows n.
        n_grid: At least four training sizes.
        replicates: CV replicates per grid point.
        outer: Designs drawn for the Err_X and conditional-variance terms.
        inner: Noise draws per design.
    """
    n_grid = sorted(int(n) for n in n_grid)
    if len(n_grid) < MIN_RATE_POINTS:
        raise InvalidConfigurationError(f"slope fitting needs at least {MIN_RATE_POINTS} grid points")
    if replicates < 2 or outer < 2 or inner < 2:
        raise InvalidConfigurationError("rate scan needs at least 2 replicates, outer and inner draws")

    rows = []
    for index, n in enumerate(n_grid):
        p = regime.p_for(n)
        if p < 1 or n <= p + 1:
            raise InvalidConfigurationError(f"grid point n={n} gives p={p}; need 1 <= p < n - 1")
        offset = index * (replicates + outer)
        err = expected_ols_error(n, p, sigma2)

        cv_unit = partial(_rate_cv_unit, n, p, sigma2, K, seed)
        cv_ids = list(range(offset, offset + replicates))
        cv_table = np.vstack(run_units(cv_unit, cv_ids, n_jobs=n_jobs))
        cv_point, cv_err_xy, cv_err_x = cv_table.T

        nested_unit = partial(_rate_nested_unit, n, p, sigma2, inner, seed)
        nested_ids = list(range(offset + replicates, offset + replicates + outer))
        nested = np.vstack(run_units(nested_unit, nested_ids, n_jobs=n_jobs))
        err_x, err_xy = nested[:, 0], nested[:, 1:]
        conditional_var = err_xy.var(axis=1, ddof=1)
        var_err_xy = float(err_xy.var(ddof=1))
        # per-design contributions to var(Err_XY) and to its decomposition
        total_part = np.mean((err_xy - err_xy.mean()) ** 2, axis=1)
        split_part = conditional_var + (err_x - err_x.mean()) ** 2
        decomposition_se = float((total_part - split_part).std(ddof=1) / np.sqrt(outer))

        rows.append(RatePoint(
            n=n, p=p,
            excess_err=err - sigma2,
            rms_cv_deviation=float(np.sqrt(np.mean((cv_point - err) ** 2))),
            sd_err_xy_given_x=float(np.sqrt(conditional_var.mean())),
            sd_err_x=float(err_x.std(ddof=1)),
            var_err_xy=var_err_xy,
            mean_conditional_var=float(conditional_var.mean()),
            var_err_x=float(err_x.var(ddof=1)),
            var_decomposition_se=decomposition_se,
            cor_cv_err_xy=_correlation(cv_point, cv_err_xy),
            cor_err_x_err_xy=_correlation(cv_err_x, cv_err_xy),
        ))
        logger.info("Rate scan n=%d p=%d done", n, p)

    slopes = {name: _log_slope(n_grid, [getattr(r, name) for r in rows]) for name in RATE_QUANTITIES}
    return RateScanResult(regime=regime.describe(), rows=rows, slopes=slopes)


# --- nested CV unbiasedness -------------------------------------------------------------

class UnbiasednessReport(BaseModel):
    n: int
    p: int
    K: int
    R: int
    n_prime: int = Field(..., description="Outer training size n (K-1) / K")
    replicates: int
    mse_ncv_mean: float
    mse_ncv_mc_se: float
    mse_brute: float
    mse_brute_mc_se: float
    relative_error: float


def _ncv_unit(dgp: DgpSpec, config: NcvConfig, seed: SeedSpec, replicate: int) -> float:
    data, _ = generate_dataset(dgp, seed.for_replicate(replicate))
    return nested_cross_validate(data, FitterSpec(kind=FitterKind.OLS), LossKind.SQUARED_ERROR, config,
                                 seed.for_replicate(replicate)).mse_hat


def _brute_unit(dgp: DgpSpec, K: int, seed: SeedSpec, replicate: int) -> float:
    replicate_seed = seed.for_replicate(replicate)
    data, theta = generate_dataset(dgp, replicate_seed)
    spec = FitterSpec(kind=FitterKind.OLS)
    cv = cross_validate(data, spec, LossKind.SQUARED_ERROR, K - 1, replicate_seed)
    err_xy = true_err_xy_linear(fit(data, spec), theta, covariance_matrix(dgp.p, dgp.covariance), dgp.sigma2)
    return (cv.point - err_xy) ** 2


def run_ncv_unbiasedness_check(n: int, p: int, K: int, replicates: int, seed: SeedSpec,
                               sigma2: float = 1.0, R: int = 20, n_jobs: int = 1) -> UnbiasednessReport:
    """Mean nested-CV mse_hat against a brute-force MSE of (K-1)-fold CV at size n (K-1) / K"""
    if replicates < 2:
        raise InvalidConfigurationError("the unbiasedness check needs at least 2 replicates")
    n_prime = int(round(n * (K - 1) / K))
    theta = ThetaSpec(kind=ThetaKind.K_SPARSE, k=min(p, 4))
    noise = float(np.sqrt(sigma2))
    dgp = DgpSpec(n=n, p=p, noise_sd=noise, theta=theta)
    brute_dgp = DgpSpec(n=n_prime, p=p, noise_sd=noise, theta=theta)
    config = NcvConfig(K=K, R=R)

    mse_hat = np.array(run_units(partial(_ncv_unit, dgp, config, seed), list(range(replicates)), n_jobs))
    brute_ids = list(range(replicates, 2 * replicates))
    brute = np.array(run_units(partial(_brute_unit, brute_dgp, K, seed), brute_ids, n_jobs))

    lhs, rhs = float(mse_hat.mean()), float(brute.mean())
    if lhs == 0.0 and rhs == 0.0:
        relative = 0.0
    else:
        relative = abs(lhs - rhs) / abs(rhs) if rhs != 0 else float("inf")
    return UnbiasednessReport(
        n=n, p=p, K=K, R=R, n_prime=n_prime, replicates=replicates,
        mse_ncv_mean=lhs, mse_ncv_mc_se=float(mse_hat.std(ddof=1) / np.sqrt(replicates)),
        mse_brute=rhs, mse_brute_mc_se=float(brute.std(ddof=1) / np.sqrt(replicates)),
        relative_error=relative,
    )


# --- subsample and holdout ------------------------------------------------------------------

def _subsample_unit(data: Dataset, n_sub: int, fitter: FitterSpec, loss: LossKind, methods: Set[Method],
                    alpha: float, settings: CoverageSettings, seed: SeedSpec,
                    replicate: int) -> Optional[ReplicateRecord]:
    replicate_seed = seed.for_replicate(replicate)
    chosen = replicate_seed.rng("subsample").choice(data.n, size=n_sub, replace=False)
    mask = np.zeros(data.n, dtype=bool)
    mask[chosen] = True
    sample, rest = data.subset(np.flatnonzero(mask)), data.subset(np.flatnonzero(~mask))
    try:
        target = holdout_error(fit(sample, fitter), rest, loss)
        intervals = _method_intervals(sample, fitter, loss, methods, alpha, settings, replicate_seed)
    except FIT_FAILURES as exc:
        logger.warning("Dropping subsample replicate %d: %s", replicate, exc)
        return None
    return ReplicateRecord(replicate=replicate, err_xy=target,
                           intervals={m: intervals[m] for m in _ordered_methods(methods)})


def run_subsample_experiment(data: Dataset, n_sub: int, methods: Set[Method], fitter: FitterSpec,
                             replicates: int, alpha: float, seed: SeedSpec,
                             settings: Optional[CoverageSettings] = None) -> CoverageReport:
    """Coverage on small subsamples of a large dataset, scored on the rows left out.

    Raises:
        InvalidConfigurationError: fewer than n_sub + SUBSAMPLE_RESERVE rows, or a
            penalized fitter without a fixed penalty.
    """
    if n_sub + SUBSAMPLE_RESERVE > data.n:
        raise InvalidConfigurationError(
            f"subsample of {n_sub} needs a dataset with at least {n_sub + SUBSAMPLE_RESERVE} rows, got {data.n}"
        )
    _check_replicates(replicates)
    settings = settings or CoverageSettings()
    methods = {Method(m) for m in methods}
    loss = settings.loss or default_loss(data.task)
    if fitter.kind in PENALIZED and fitter.penalty is None:
        raise InvalidConfigurationError("subsample experiments need a fixed penalty")

    unit = partial(_subsample_unit, data, n_sub, fitter, loss, methods, alpha, settings, seed)
    records = run_units(unit, list(range(replicates)), n_jobs=settings.n_jobs)
    kept, failures = _kept_records(records, n_sub)
    report = tabulate_coverage(kept, alpha, failures=failures)
    return report.model_copy(update={"n": n_sub})
