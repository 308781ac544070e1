"""
Nested cross-validation.

Each repetition draws a fresh fold assignment. For every outer fold k the
remaining K-1 folds are cross-validated among themselves (inner errors) and
the model fit on all folds but k is scored on fold k (outer errors). The
squared gap between inner and outer means, less the sampling variance of the
outer mean, estimates the mean squared error of the CV point estimate.
"""

import logging
from functools import partial
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .cv_naive import arcsine_root_bounds, cross_validate, normal_quantile
from .dataset import Dataset, IntervalEstimate, IntervalScale, LossKind
from .errors import InvalidConfigurationError
from .fitters import FitterSpec, fit_or_raise
from .folds import FoldAssignment, assign_folds
from .losses import check_loss, pointwise_loss
from .parallel import run_units
from .seeding import SeedSpec

logger = logging.getLogger(__name__)


class NcvConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    K: int = Field(default=10, ge=3, description="Fold count; the inner loop needs K-1 >= 2 folds")
    R: int = Field(default=200, ge=1, description="Number of random fold assignments")
    alpha: float = Field(default=0.1, gt=0.0, lt=1.0, description="Miscoverage level")
    clamp: bool = Field(default=True, description="Keep the standard error within [se, sqrt(K) se]")
    use_vst: Optional[bool] = Field(default=None,
                                    description="Arcsine-root interval; None means on for zero-one loss")
    unscaled_b: bool = Field(default=False,
                              description="Use the unscaled outer-error variance for the b terms")
    n_jobs: int = Field(default=1, ge=1, description="Worker count over repetitions")

    def vst_for(self, loss: LossKind) -> bool:
        if self.use_vst is None:
            return loss == LossKind.ZERO_ONE
        return self.use_vst


class NcvResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    err_ncv: float = Field(..., description="Mean of every inner held-out loss")
    mse_hat: float = Field(..., description="Estimated MSE of the CV point estimate; may be negative")
    bias_hat: float
    a_mean: float
    b_mean: float
    interval: IntervalEstimate
    cv_point: float = Field(..., description="Companion K-fold CV estimate")
    naive_se: float = Field(..., ge=0.0)
    loss: LossKind
    n: int
    K: int
    a_list: np.ndarray = Field(..., description="R x K squared inner/outer gaps")
    b_list: np.ndarray = Field(..., description="R x K outer-mean variance terms")

    @model_validator(mode="after")
    def _mse_is_difference(self):
        if not np.isclose(self.mse_hat, self.a_mean - self.b_mean, rtol=1e-12, atol=1e-15):
            raise ValueError("mse_hat must equal a_mean - b_mean")
        return self

    @property
    def R(self) -> int:
        return self.a_list.shape[0]


def ncv_bias(err_ncv: float, cv_point: float, K: int) -> float:
    """Extrapolate the inner-versus-standard CV gap to the full training size"""
    if K < 3:
        raise InvalidConfigurationError(f"nested CV needs K >= 3, got {K}")
    return (1.0 + (K - 2.0) / K) * (err_ncv - cv_point)


def repetition_folds(n: int, K: int, seed: SeedSpec, repetition: int) -> FoldAssignment:
    return assign_folds(n, K, seed.for_repetition(repetition), tag="ncv-folds")


def _run_repetition(data: Dataset, spec: FitterSpec, loss: LossKind, config: NcvConfig,
                    seed: SeedSpec, repetition: int) -> Tuple[np.ndarray, np.ndarray, float, int]:
    folds = repetition_folds(data.n, config.K, seed, repetition)
    a_row = np.empty(config.K)
    b_row = np.empty(config.K)
    inner_sum, inner_count = 0.0, 0

    for k in range(1, config.K + 1):
        inner_errors = []
        for j in range(1, config.K + 1):
            if j == k:
                continue
            train_rows = np.flatnonzero((folds.fold_of != k) & (folds.fold_of != j))
            test_rows = folds.members(j)
            model = fit_or_raise(data.subset(train_rows), spec,
                                 repetition=repetition, fold=k, inner_fold=j)
            inner_errors.append(pointwise_loss(model.predict_mean(data.features[test_rows]),
                                               data.response[test_rows], loss))
        inner = np.concatenate(inner_errors)

        test_rows = folds.members(k)
        model = fit_or_raise(data.subset(folds.complement(k)), spec, repetition=repetition, fold=k)
        outer = pointwise_loss(model.predict_mean(data.features[test_rows]), data.response[test_rows], loss)

        a_row[k - 1] = (inner.mean() - outer.mean()) ** 2
        outer_variance = float(np.var(outer, ddof=1))
        b_row[k - 1] = outer_variance if config.unscaled_b else outer_variance / outer.shape[0]
        inner_sum += float(inner.sum())
        inner_count += inner.shape[0]

    return a_row, b_row, inner_sum, inner_count


def nested_cross_validate(data: Dataset, spec: FitterSpec, loss: LossKind, config: NcvConfig,
                          seed: SeedSpec) -> NcvResult:
    check_loss(loss, data.task)
    if data.n < 2 * config.K:
        raise InvalidConfigurationError(
            f"nested CV with K={config.K} needs at least {2 * config.K} rows, got {data.n}"
        )
    if config.vst_for(loss) and loss != LossKind.ZERO_ONE:
        raise InvalidConfigurationError("the arcsine-root interval needs zero-one losses")

    unit = partial(_run_repetition, data, spec, loss, config, seed)
    outputs = run_units(unit, list(range(config.R)), n_jobs=config.n_jobs)

    a_list = np.vstack([o[0] for o in outputs])
    b_list = np.vstack([o[1] for o in outputs])
    err_ncv = sum(o[2] for o in outputs) / sum(o[3] for o in outputs)
    a_mean, b_mean = float(a_list.mean()), float(b_list.mean())
    mse_hat = a_mean - b_mean

    cv = cross_validate(data, spec, loss, config.K, seed, tag="folds")
    bias_hat = ncv_bias(err_ncv, cv.point, config.K)
    interval = _corrected_interval(err_ncv, bias_hat, mse_hat, cv.naive_se, data.n, loss, config)
    logger.debug("NCV replicate %d: err=%.4g mse=%.4g bias=%.4g", seed.replicate, err_ncv, mse_hat, bias_hat)

    a_list.setflags(write=False)
    b_list.setflags(write=False)
    return NcvResult(
        err_ncv=err_ncv, mse_hat=mse_hat, bias_hat=bias_hat, a_mean=a_mean, b_mean=b_mean,
        interval=interval, cv_point=cv.point, naive_se=cv.naive_se, loss=loss,
        n=data.n, K=config.K, a_list=a_list, b_list=b_list,
    )


def corrected_se(mse_hat: float, naive_se: float, K: int, clamp: bool = True) -> float:
    """Standard error of the NCV interval, before any arcsine-root rescaling"""
    se = np.sqrt((K - 1.0) / K) * np.sqrt(max(mse_hat, 0.0))
    if clamp:
        se = np.clip(se, naive_se, np.sqrt(K) * naive_se)
    return float(se)


def _corrected_interval(err_ncv: float, bias_hat: float, mse_hat: float, naive_se: float,
                        n: int, loss: LossKind, config: NcvConfig) -> IntervalEstimate:
    z = normal_quantile(config.alpha)
    center = err_ncv - bias_hat
    se = corrected_se(mse_hat, naive_se, config.K, config.clamp)

    if config.vst_for(loss):
        ratio = se / naive_se if naive_se > 0 else 1.0
        vst_se = ratio * np.sqrt(1.0 / (4.0 * n))
        point = float(np.clip(center, 0.0, 1.0))
        lo, hi = arcsine_root_bounds(point, z * vst_se)
        return IntervalEstimate(point=point, lo=lo, hi=hi, se=float(vst_se), alpha=config.alpha,
                                scale=IntervalScale.ARCSINE_SQRT)

    return IntervalEstimate(point=center, lo=center - z * se, hi=center + z * se, se=se,
                            alpha=config.alpha, scale=IntervalScale.RAW)


def ncv_interval(result: NcvResult, naive_se: float, n: int, config: NcvConfig) -> IntervalEstimate:
    if naive_se < 0:
        raise InvalidConfigurationError("naive_se must be nonnegative")
    return _corrected_interval(result.err_ncv, result.bias_hat, result.mse_hat, naive_se, n,
                               result.loss, config)


def running_mse_trajectory(result: NcvResult) -> np.ndarray:
    """mse_hat after the first 1, 2, ..., R repetitions"""
    per_repetition = result.a_list.mean(axis=1) - result.b_list.mean(axis=1)
    return np.cumsum(per_repetition) / np.arange(1, result.R + 1)
