"""
Gaussian-design data-generating processes and their true-error oracles.
"""

import logging
from enum import Enum
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import integrate, linalg, optimize
from scipy.special import expit
from scipy.stats import norm

from .dataset import Dataset, FittedModel, LossKind, TaskKind
from .errors import DimensionMismatchError, InvalidConfigurationError
from .losses import check_loss, evaluate_losses
from .seeding import SeedSpec

logger = logging.getLogger(__name__)

SCORE_RANGE = 40.0
ORACLE_TEST_SIZE = 100_000


class DgpFamily(str, Enum):
    LINEAR_GAUSSIAN = "linear_gaussian"
    LOGISTIC_GAUSSIAN = "logistic_gaussian"


class CovarianceKind(str, Enum):
    IDENTITY = "identity"
    AR1 = "ar1"


class ThetaKind(str, Enum):
    ZERO = "zero"
    K_SPARSE = "k_sparse"


class CovarianceSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: CovarianceKind = Field(default=CovarianceKind.IDENTITY)
    rho: float = Field(default=0.0, gt=-1.0, lt=1.0, description="Adjacent-column correlation for AR1")


class ThetaSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: ThetaKind = Field(default=ThetaKind.K_SPARSE)
    k: int = Field(default=4, ge=0, description="Number of leading nonzero coefficients")
    strength: float = Field(default=1.0, description="Common value of the nonzero coefficients")


class DgpSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    family: DgpFamily = Field(default=DgpFamily.LINEAR_GAUSSIAN)
    n: int = Field(..., ge=2, description="Training sample size")
    p: int = Field(..., ge=1, description="Number of features")
    covariance: CovarianceSpec = Field(default_factory=CovarianceSpec)
    theta: ThetaSpec = Field(default_factory=ThetaSpec)
    noise_sd: float = Field(default=1.0, ge=0.0, description="Noise sd for the linear family")
    target_bayes_error: Optional[float] = Field(default=None, gt=0.0, lt=0.5,
                                                description="Calibrate the logistic signal to this Bayes error")
    target_snr: Optional[float] = Field(default=None, gt=0.0,
                                        description="Calibrate the linear signal to var(X theta) / noise variance")

    @model_validator(mode="after")
    def _consistent(self):
        if self.theta.kind == ThetaKind.K_SPARSE and self.theta.k > self.p:
            raise ValueError(f"k={self.theta.k} exceeds p={self.p}")
        if self.target_bayes_error is not None and self.family != DgpFamily.LOGISTIC_GAUSSIAN:
            raise ValueError("target_bayes_error applies to the logistic family only")
        if self.target_snr is not None and self.family != DgpFamily.LINEAR_GAUSSIAN:
            raise ValueError("target_snr applies to the linear family only")
        calibrated = self.target_bayes_error is not None or self.target_snr is not None
        if calibrated and (self.theta.kind != ThetaKind.K_SPARSE or self.theta.k == 0):
            raise ValueError("signal calibration needs a k-sparse theta with k >= 1")
        if self.target_snr is not None and self.noise_sd == 0:
            raise ValueError("target_snr needs positive noise")
        return self

    @property
    def task(self) -> TaskKind:
        if self.family == DgpFamily.LOGISTIC_GAUSSIAN:
            return TaskKind.BINARY_CLASSIFICATION
        return TaskKind.REGRESSION

    @property
    def sigma2(self) -> float:
        return self.noise_sd ** 2

    def with_n(self, n: int) -> "DgpSpec":
        return self.model_copy(update={"n": n})


@lru_cache(maxsize=32)
def _covariance(p: int, kind: CovarianceKind, rho: float) -> np.ndarray:
    if kind == CovarianceKind.IDENTITY:
        matrix = np.eye(p)
    else:
        lags = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
        matrix = rho ** lags
    matrix.setflags(write=False)
    return matrix


@lru_cache(maxsize=32)
def _cholesky(p: int, kind: CovarianceKind, rho: float) -> np.ndarray:
    if kind == CovarianceKind.IDENTITY:
        factor = np.eye(p)
    else:
        factor = linalg.cholesky(_covariance(p, kind, rho), lower=True)
    factor.setflags(write=False)
    return factor


def covariance_matrix(p: int, covariance: CovarianceSpec) -> np.ndarray:
    """Sigma_ij = rho^|i-j| for AR1, the identity otherwise"""
    return _covariance(p, covariance.kind, covariance.rho)


def gaussian_bayes_error(score_sd: float) -> float:
    """
    E[min(s(eta), 1 - s(eta))] for eta ~ N(0, score_sd^2), s the logistic function.

    The integrand is even with a kink at zero, so it is integrated over the
    half-line where it is smooth, truncated where either factor is negligible
    so a large score_sd keeps its mass inside the quadrature nodes.
    """
    scale = abs(float(score_sd))
    if scale == 0.0:
        return 0.5
    upper = SCORE_RANGE / max(scale, 1.0)
    value, _ = integrate.quad(lambda z: expit(-scale * z) * norm.pdf(z), 0.0, upper,
                              epsabs=1e-12, epsrel=1e-10, limit=200)
    return float(2.0 * value)


def _pattern_norm2(k: int, covariance: CovarianceSpec) -> float:
    """v' Sigma v for the unit-strength pattern on the first k coordinates"""
    return float(covariance_matrix(k, covariance).sum())


@lru_cache(maxsize=64)
def _calibrate(target: float, k: int, kind: CovarianceKind, rho: float) -> float:
    scale = np.sqrt(_pattern_norm2(k, CovarianceSpec(kind=kind, rho=rho)))

    def gap(c: float) -> float:
        return gaussian_bayes_error(c * scale) - target

    upper = 1.0
    while gap(upper) > 0:
        upper *= 2.0
        if upper > 1e6:
            raise InvalidConfigurationError(f"Bayes error {target} is out of reach")
    c = optimize.bisect(gap, 0.0, upper, xtol=1e-12)
    logger.debug("Calibrated signal %.6g for Bayes error %.4g (k=%d)", c, target, k)
    return float(c)


def calibrate_signal(target: float, k: int, covariance: CovarianceSpec) -> float:
    """Signal strength c whose k-sparse logistic model has the target Bayes error"""
    if not 0.0 < target < 0.5:
        raise InvalidConfigurationError(f"target Bayes error {target} must lie in (0, 0.5)")
    if k < 1:
        raise InvalidConfigurationError("calibration needs k >= 1")
    return _calibrate(float(target), int(k), covariance.kind, float(covariance.rho))


def build_theta(spec: DgpSpec) -> np.ndarray:
    theta = np.zeros(spec.p)
    if spec.theta.kind == ThetaKind.ZERO or spec.theta.k == 0:
        return theta
    strength = spec.theta.strength
    if spec.target_bayes_error is not None:
        strength = calibrate_signal(spec.target_bayes_error, spec.theta.k, spec.covariance)
    elif spec.target_snr is not None:
        strength = np.sqrt(spec.target_snr * spec.sigma2 / _pattern_norm2(spec.theta.k, spec.covariance))
    theta[: spec.theta.k] = strength
    return theta


def draw_features(spec: DgpSpec, rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
    rows = spec.n if n is None else n
    normals = rng.standard_normal((rows, spec.p))
    if spec.covariance.kind == CovarianceKind.IDENTITY:
        return normals
    factor = _cholesky(spec.p, spec.covariance.kind, spec.covariance.rho)
    return normals @ factor.T


def draw_response(spec: DgpSpec, features: np.ndarray, theta: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    eta = features @ theta
    if spec.family == DgpFamily.LOGISTIC_GAUSSIAN:
        return (rng.random(features.shape[0]) < expit(eta)).astype(float)
    return eta + spec.noise_sd * rng.standard_normal(features.shape[0])


def generate_dataset(spec: DgpSpec, seed: SeedSpec, tag: str = "data") -> Tuple[Dataset, np.ndarray]:
    theta = build_theta(spec)
    rng = seed.rng(tag)
    features = draw_features(spec, rng)
    response = draw_response(spec, features, theta, rng)
    return Dataset(features=features, response=response, task=spec.task), theta


def generate_design(spec: DgpSpec, seed: SeedSpec) -> np.ndarray:
    """Feature matrix from its own stream, for experiments that hold X fixed"""
    return draw_features(spec, seed.rng("design"))


def generate_response(spec: DgpSpec, features: np.ndarray, theta: np.ndarray, seed: SeedSpec) -> Dataset:
    response = draw_response(spec, features, theta, seed.rng("data"))
    return Dataset(features=features, response=response, task=spec.task)


def bayes_error(spec: DgpSpec, theta: Optional[np.ndarray] = None) -> float:
    """Error of the best predictor: the noise variance, or E[min(p, 1 - p)]"""
    if spec.family == DgpFamily.LINEAR_GAUSSIAN:
        return spec.sigma2
    theta = build_theta(spec) if theta is None else theta
    sigma = covariance_matrix(spec.p, spec.covariance)
    return gaussian_bayes_error(float(np.sqrt(theta @ sigma @ theta)))


def expected_ols_error(n: int, p: int, sigma2: float) -> float:
    """Err of interceptless OLS under a Gaussian design: sigma^2 + sigma^2 p / (n - p - 1)"""
    if n <= p + 1:
        raise InvalidConfigurationError(f"expected OLS error needs n > p + 1, got n={n}, p={p}")
    return sigma2 + sigma2 * p / (n - p - 1.0)


def true_err_xy_linear(model: FittedModel, true_theta: np.ndarray, Sigma: np.ndarray,
                       sigma2: float) -> float:
    """Squared-error risk of a linear model on a fresh mean-zero Gaussian test point"""
    if model.p != true_theta.shape[0] or Sigma.shape != (model.p, model.p):
        raise DimensionMismatchError("model, theta and Sigma must share p")
    gap = model.coefficients - true_theta
    offset = model.intercept or 0.0
    return float(sigma2 + gap @ Sigma @ gap + offset ** 2)


def true_err_xy_mc(model: FittedModel, spec: DgpSpec, loss: LossKind, n_test: int = ORACLE_TEST_SIZE,
                   seed: Optional[SeedSpec] = None, theta: Optional[np.ndarray] = None) -> float:
    """
    Monte Carlo risk on fresh draws from the DGP.

    Only the true and fitted linear scores of a test point enter the loss,
    and under the Gaussian design they are bivariate normal, so the pair is
    drawn directly and the conditional expected loss is averaged.
    """
    check_loss(loss, spec.task)
    if n_test < 10_000:
        raise InvalidConfigurationError(f"n_test={n_test} is below the 10^4 minimum")
    if model.p != spec.p:
        raise DimensionMismatchError(f"model has {model.p} coefficients, DGP has p={spec.p}")
    theta = build_theta(spec) if theta is None else theta
    seed = seed or SeedSpec(master_seed=0)

    sigma = covariance_matrix(spec.p, spec.covariance)
    beta = model.coefficients
    sigma_theta = sigma @ theta
    joint = np.array([[theta @ sigma_theta, beta @ sigma_theta],
                      [beta @ sigma_theta, beta @ sigma @ beta]])
    scores = seed.rng("oracle").multivariate_normal(np.zeros(2), joint, size=n_test, method="eigh")
    true_score = scores[:, 0]
    fitted_score = scores[:, 1] + (model.intercept or 0.0)

    if spec.family == DgpFamily.LINEAR_GAUSSIAN:
        return float(spec.sigma2 + np.mean((true_score - fitted_score) ** 2))

    prob = expit(true_score)
    fitted_mean = expit(fitted_score)
    if loss == LossKind.ZERO_ONE:
        predicted_one = fitted_mean > 0.5
        return float(np.mean(np.where(predicted_one, 1.0 - prob, prob)))
    return float(np.mean(prob * (1.0 - fitted_mean) ** 2 + (1.0 - prob) * fitted_mean ** 2))


def oracle_error(model: FittedModel, spec: DgpSpec, theta: np.ndarray, loss: LossKind,
                 seed: SeedSpec, n_test: int = ORACLE_TEST_SIZE) -> float:
    """Closed form for linear squared error, Monte Carlo otherwise"""
    if spec.family == DgpFamily.LINEAR_GAUSSIAN and loss == LossKind.SQUARED_ERROR:
        return true_err_xy_linear(model, theta, covariance_matrix(spec.p, spec.covariance), spec.sigma2)
    return true_err_xy_mc(model, spec, loss, n_test=n_test, seed=seed, theta=theta)


def holdout_error(model: FittedModel, holdout: Dataset, loss: LossKind) -> float:
    """Mean loss on held-back rows, the oracle for subsampled real data"""
    return evaluate_losses(model, holdout, loss).mean
