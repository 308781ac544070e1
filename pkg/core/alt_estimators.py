import logging
from functools import partial
from typing import Iterator, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import linalg

from .cv_naive import arcsine_root_bounds, naive_standard_error, normal_quantile
from .dataset import Dataset, ErrorVector, FittedModel, IntervalEstimate, IntervalScale, LossKind
from .errors import (
    FIT_ERRORS,
    DegenerateResamplingError,
    InvalidConfigurationError,
    SingularDesignError,
)
from .fitters import FitterKind, FitterSpec, fit, fit_or_raise
from .losses import check_loss, evaluate_losses, pointwise_loss
from .parallel import run_units
from .seeding import SeedSpec

logger = logging.getLogger(__name__)

DOT632_WEIGHT = 0.632


# --- data splitting ----------------------------------------------------------------

class SplitResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    err_split: float = Field(..., description="Mean holdout loss")
    se_split: float = Field(..., ge=0.0, description="Standard error of the holdout mean")
    train_model: FittedModel
    refit_model: Optional[FittedModel] = Field(default=None, description="Model refit on all rows")
    train_rows: np.ndarray
    holdout_rows: np.ndarray
    holdout_errors: ErrorVector


def holdout_size(n: int, train_fraction: float) -> int:
    """Round-half-up of n * (1 - train_fraction)"""
    return int(np.floor(n * (1.0 - train_fraction) + 0.5 + 1e-9))


def split_estimate(data: Dataset, spec: FitterSpec, loss: LossKind, train_fraction: float = 0.8,
                   refit: bool = True, seed: Optional[SeedSpec] = None,
                   literal_se: bool = False) -> SplitResult:
    check_loss(loss, data.task)
    if not 0.0 < train_fraction < 1.0:
        raise InvalidConfigurationError(f"train_fraction={train_fraction} must lie in (0, 1)")
    m = holdout_size(data.n, train_fraction)
    if m < 2 or m >= data.n:
        raise InvalidConfigurationError(
            f"a split of n={data.n} at train_fraction={train_fraction} leaves {m} holdout rows"
        )

    seed = seed or SeedSpec(master_seed=0)
    order = seed.rng("split").permutation(data.n)
    holdout_rows, train_rows = np.sort(order[:m]), np.sort(order[m:])

    train_model = fit_or_raise(data.subset(train_rows), spec, split="train")
    holdout = data.subset(holdout_rows)
    errors = evaluate_losses(train_model, holdout, loss)
    se = float(np.std(errors.errors, ddof=1)) if literal_se else naive_standard_error(errors.errors)
    refit_model = fit_or_raise(data, spec, split="refit") if refit else None

    return SplitResult(err_split=errors.mean, se_split=se, train_model=train_model,
                       refit_model=refit_model, train_rows=train_rows, holdout_rows=holdout_rows,
                       holdout_errors=errors)


def split_interval(result: SplitResult, alpha: float, use_vst: Optional[bool] = None) -> IntervalEstimate:
    z = normal_quantile(alpha)
    zero_one = result.holdout_errors.loss == LossKind.ZERO_ONE
    if use_vst is None:
        use_vst = zero_one
    if use_vst:
        if not zero_one:
            raise InvalidConfigurationError("the arcsine-root interval needs zero-one losses")
        se = float(np.sqrt(1.0 / (4.0 * result.holdout_errors.n)))
        lo, hi = arcsine_root_bounds(result.err_split, z * se)
        return IntervalEstimate(point=result.err_split, lo=lo, hi=hi, se=se, alpha=alpha,
                                scale=IntervalScale.ARCSINE_SQRT)
    half = z * result.se_split
    return IntervalEstimate(point=result.err_split, lo=result.err_split - half,
                            hi=result.err_split + half, se=result.se_split, alpha=alpha)


# --- covariance penalties ---------------------------------------------------------------

def cp_from_rss(rss: float, n: int, p: int) -> float:
    sigma2 = rss / (n - p)
    return rss / n + 2.0 * p * sigma2 / n


def rcp_from_rss(rss: float, n: int, p: int) -> float:
    if n <= p + 1:
        raise InvalidConfigurationError(f"RCp needs n > p + 1, got n={n}, p={p}")
    sigma2 = rss / (n - p)
    return rss / n + (p * sigma2 / n) * (2.0 + (p + 1.0) / (n - p - 1.0))


def _ols_rss(data: Dataset, include_intercept: bool) -> Tuple[float, int]:
    spec = FitterSpec(kind=FitterKind.OLS, include_intercept=include_intercept)
    model = fit(data, spec)
    residual = data.response - model.linear_predictor(data.features)
    return float(residual @ residual), data.p + int(include_intercept)


def mallows_cp(data: Dataset, include_intercept: bool = False) -> float:
    """Training error plus the 2 p sigma^2 / n covariance penalty of the full OLS fit"""
    rss, p = _ols_rss(data, include_intercept)
    return cp_from_rss(rss, data.n, p)


def rcp(data: Dataset, include_intercept: bool = False) -> float:
    """Cp with the extra penalty for random features"""
    p = data.p + int(include_intercept)
    if data.n <= p + 1:
        raise InvalidConfigurationError(f"RCp needs n > p + 1, got n={data.n}, p={p}")
    rss, p = _ols_rss(data, include_intercept)
    return rcp_from_rss(rss, data.n, p)


# --- bootstrap ---------------------------------------------------------------------------

class BootstrapResult(BaseModel):
    oob: float = Field(..., description="Out-of-bag error")
    dot632: float = Field(..., description="0.368 apparent + 0.632 out-of-bag")
    apparent: float = Field(..., description="Training error of the full-data fit")
    never_out_of_bag: int = Field(default=0, ge=0, description="Rows left out of the OOB average")
    redraws: int = Field(default=0, ge=0, description="Resamples redrawn after a failed fit")
    B: int = Field(..., ge=1)


def draw_resamples(n: int, seed: SeedSpec, b: int) -> Iterator[np.ndarray]:
    """Successive with-replacement resamples for bootstrap index b; later ones are redraws"""
    rng = seed.for_repetition(b).rng("bootstrap")
    while True:
        yield rng.integers(0, n, size=n)


def _bootstrap_unit(data: Dataset, spec: FitterSpec, loss: LossKind, seed: SeedSpec, cap: int,
                    b: int) -> Tuple[np.ndarray, np.ndarray, int]:
    loss_sum = np.zeros(data.n)
    counts = np.zeros(data.n)
    stream = draw_resamples(data.n, seed, b)
    redraws = 0
    while True:
        rows = next(stream)
        try:
            model = fit(data.subset(rows), spec)
            break
        except FIT_ERRORS as exc:
            redraws += 1
            logger.debug("Bootstrap resample %d redrawn: %s", b, exc)
            if redraws > cap:
                return loss_sum, counts, redraws

    out_of_bag = np.setdiff1d(np.arange(data.n), rows, assume_unique=False)
    if out_of_bag.size:
        loss_sum[out_of_bag] = pointwise_loss(model.predict_mean(data.features[out_of_bag]),
                                              data.response[out_of_bag], loss)
        counts[out_of_bag] = 1.0
    return loss_sum, counts, redraws


def bootstrap_error(data: Dataset, spec: FitterSpec, loss: LossKind, B: int = 200,
                    seed: Optional[SeedSpec] = None, n_jobs: int = 1) -> BootstrapResult:
    check_loss(loss, data.task)
    if B < 1:
        raise InvalidConfigurationError("bootstrap needs B >= 1")
    seed = seed or SeedSpec(master_seed=0)
    cap = 10 * B

    unit = partial(_bootstrap_unit, data, spec, loss, seed, cap)
    outputs = run_units(unit, list(range(B)), n_jobs=n_jobs)
    redraws = sum(o[2] for o in outputs)
    if redraws > cap:
        raise DegenerateResamplingError(f"{redraws} bootstrap resamples had to be redrawn (cap {cap})")

    loss_sum = np.sum([o[0] for o in outputs], axis=0)
    counts = np.sum([o[1] for o in outputs], axis=0)
    seen = counts > 0
    if not seen.any():
        raise DegenerateResamplingError("no observation was ever out of bag")
    oob = float(np.mean(loss_sum[seen] / counts[seen]))

    full_model = fit_or_raise(data, spec, resample="full")
    apparent = evaluate_losses(full_model, data, loss).mean
    dot632 = (1.0 - DOT632_WEIGHT) * apparent + DOT632_WEIGHT * oob
    if redraws:
        logger.info("Bootstrap redrew %d of %d resamples", redraws, B)
    return BootstrapResult(oob=oob, dot632=dot632, apparent=apparent,
                           never_out_of_bag=int((~seen).sum()), redraws=redraws, B=B)


# --- analytic OLS estimands ------------------------------------------------------------

def err_x_linear(X: np.ndarray, Sigma: np.ndarray, sigma2: float) -> float:
    """OLS error averaged over responses with the feature matrix held fixed"""
    n, p = X.shape
    if n <= p:
        raise SingularDesignError(f"Err_X needs n > p, got n={n}, p={p}")
    sample_cov = X.T @ X / n
    try:
        solved = linalg.solve(sample_cov, Sigma, assume_a="pos")
    except linalg.LinAlgError as exc:
        raise SingularDesignError(f"sample covariance is singular: {exc}") from exc
    return sigma2 + sigma2 / n * float(np.trace(solved))


def err_in_linear(n: int, p: int, sigma2: float) -> float:
    if n <= p:
        raise InvalidConfigurationError(f"in-sample error needs n > p, got n={n}, p={p}")
    return sigma2 * (1.0 + p / n)


def var_err_xy_given_x(X: np.ndarray, Sigma: np.ndarray, sigma2: float) -> float:
    """Variance of the OLS Err_XY over Gaussian noise with X fixed: 2 sigma^4 tr((G^-1 Sigma)^2)"""
    n, p = X.shape
    if n <= p:
        raise SingularDesignError(f"conditional variance needs n > p, got n={n}, p={p}")
    try:
        solved = linalg.solve(X.T @ X, Sigma, assume_a="pos")
    except linalg.LinAlgError as exc:
        raise SingularDesignError(f"Gram matrix is singular: {exc}") from exc
    return 2.0 * sigma2 ** 2 * float(np.sum(solved * solved.T))
