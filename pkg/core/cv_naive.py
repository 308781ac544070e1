import logging
from typing import List, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.stats import norm

from .dataset import Dataset, ErrorVector, IntervalEstimate, IntervalScale, LossKind
from .errors import InvalidConfigurationError
from .fitters import FitterSpec, fit_or_raise
from .folds import FoldAssignment, assign_folds
from .losses import check_loss, pointwise_loss
from .seeding import SeedSpec

logger = logging.getLogger(__name__)


class CvResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    errors: ErrorVector = Field(..., description="Held-out losses in observation order")
    point: float = Field(..., description="Mean held-out loss")
    naive_se: float = Field(..., ge=0.0, description="Sample sd of the losses over sqrt(n)")
    folds: FoldAssignment

    @classmethod
    def from_errors(cls, errors: ErrorVector, folds: FoldAssignment) -> "CvResult":
        return cls(errors=errors, point=errors.mean, naive_se=naive_standard_error(errors.errors),
                   folds=folds)


class CovarianceComponents(BaseModel):
    a1: float = Field(..., ge=0.0, description="Variance of a single held-out loss")
    a2: float = Field(..., description="Covariance of two losses from the same fold")
    a3: float = Field(..., description="Covariance of two losses from different folds")


def naive_standard_error(errors: np.ndarray) -> float:
    return float(np.std(errors, ddof=1) / np.sqrt(errors.shape[0]))


def held_out_errors(data: Dataset, spec: FitterSpec, loss: LossKind, folds: FoldAssignment,
                    **coordinates) -> np.ndarray:
    """Losses of each fold under the model fit on the other folds, in observation order"""
    errors = np.empty(data.n)
    for k in range(1, folds.K + 1):
        test_rows = folds.members(k)
        model = fit_or_raise(data.subset(folds.complement(k)), spec, **coordinates, fold=k)
        errors[test_rows] = pointwise_loss(
            model.predict_mean(data.features[test_rows]), data.response[test_rows], loss
        )
    return errors


def cross_validate(data: Dataset, spec: FitterSpec, loss: LossKind, K: int, seed: SeedSpec,
                   tag: str = "folds") -> CvResult:
    check_loss(loss, data.task)
    folds = assign_folds(data.n, K, seed, tag=tag)
    return cross_validate_folds(data, spec, loss, folds)


def cross_validate_folds(data: Dataset, spec: FitterSpec, loss: LossKind,
                         folds: FoldAssignment) -> CvResult:
    """Cross-validation on a given fold assignment"""
    check_loss(loss, data.task)
    if folds.n != data.n:
        raise InvalidConfigurationError(f"fold assignment covers {folds.n} rows, data has {data.n}")
    errors = held_out_errors(data, spec, loss, folds)
    return CvResult.from_errors(ErrorVector(errors=errors, loss=loss), folds)


def normal_quantile(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise InvalidConfigurationError(f"alpha={alpha} must lie in (0, 1)")
    return float(norm.ppf(1.0 - alpha / 2.0))


def naive_interval(result: CvResult, alpha: float) -> IntervalEstimate:
    z = normal_quantile(alpha)
    half = z * result.naive_se
    return IntervalEstimate(point=result.point, lo=result.point - half, hi=result.point + half,
                            se=result.naive_se, alpha=alpha, scale=IntervalScale.RAW)


def arcsine_root_bounds(rate: float, half_width: float):
    """Back-transform asin(sqrt(rate)) +/- half_width through sin^2, clipped to [0, 1]"""
    angle = np.arcsin(np.sqrt(np.clip(rate, 0.0, 1.0)))
    lo = np.sin(np.clip(angle - half_width, 0.0, np.pi / 2)) ** 2
    hi = np.sin(np.clip(angle + half_width, 0.0, np.pi / 2)) ** 2
    return float(min(lo, rate)), float(max(hi, rate))


def vst_interval(result: CvResult, alpha: float) -> IntervalEstimate:
    if result.errors.loss != LossKind.ZERO_ONE:
        raise InvalidConfigurationError("the arcsine-root interval needs zero-one losses")
    z = normal_quantile(alpha)
    se = float(np.sqrt(1.0 / (4.0 * result.errors.n)))
    lo, hi = arcsine_root_bounds(result.point, z * se)
    return IntervalEstimate(point=result.point, lo=lo, hi=hi, se=se, alpha=alpha,
                            scale=IntervalScale.ARCSINE_SQRT)


def default_interval(result: CvResult, alpha: float, use_vst: bool = True) -> IntervalEstimate:
    if use_vst and result.errors.loss == LossKind.ZERO_ONE:
        return vst_interval(result, alpha)
    return naive_interval(result, alpha)


def estimate_covariance_components(replicated_errors: Sequence[ErrorVector],
                                   folds: Sequence[FoldAssignment]) -> CovarianceComponents:
    """
    Pool a1, a2, a3 over Monte Carlo replicates of one CV design.

    Each slot i is centered by its mean across replicates; products are then
    paired within each replicate by whether the two slots shared a fold.
    """
    R = len(replicated_errors)
    if R < 2 or len(folds) != R:
        raise InvalidConfigurationError("need at least 2 replicates and one fold assignment each")
    n, K = folds[0].n, folds[0].K
    if any(e.n != n for e in replicated_errors) or any(f.n != n or f.K != K for f in folds):
        raise InvalidConfigurationError("replicates must share n and K")

    centered = np.vstack([e.errors for e in replicated_errors])
    centered = centered - centered.mean(axis=0)
    correction = R / (R - 1.0)

    squares = same_sum = total_sum = 0.0
    same_count = total_count = 0
    for row, assignment in zip(centered, folds):
        fold_sums = np.bincount(assignment.fold_of, weights=row, minlength=K + 1)[1:]
        fold_squares = np.bincount(assignment.fold_of, weights=row ** 2, minlength=K + 1)[1:]
        sizes = assignment.sizes
        squares += fold_squares.sum()
        same_sum += float(np.sum(fold_sums ** 2 - fold_squares))
        same_count += int(np.sum(sizes * (sizes - 1)))
        total_sum += float(row.sum() ** 2 - fold_squares.sum())
        total_count += n * (n - 1)

    different_sum = total_sum - same_sum
    different_count = total_count - same_count
    a1 = correction * squares / (R * n)
    a2 = correction * same_sum / same_count if same_count else 0.0
    a3 = correction * different_sum / different_count if different_count else 0.0
    return CovarianceComponents(a1=a1, a2=a2, a3=a3)


def var_mean_from_components(components: CovarianceComponents, n: int, K: int) -> float:
    """Variance of the CV point estimate implied by the three covariance parameters"""
    fold_size = n / K
    return (components.a1 / n
            + (fold_size - 1.0) / n * components.a2
            + (n - fold_size) / n * components.a3)


def replicate_errors(results: List[CvResult]):
    """Split CV results into the (errors, folds) lists the covariance estimator takes"""
    return [r.errors for r in results], [r.folds for r in results]
