"""
Model-fitting algorithms: ordinary least squares, logistic regression by
iteratively reweighted least squares, the lasso by cyclic coordinate descent
and l1-penalized logistic regression by proximal Newton.

The two penalized fitters share one coordinate-descent routine for
penalized quadratics. For the lasso the quadratic is the objective itself;
for sparse logistic regression it is the local Newton model of the
deviance, followed by a backtracking line search on the true objective.
"""

import logging
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg
from scipy.special import expit

from .dataset import Dataset, FitDiagnostics, FittedModel, Link, LossKind, TaskKind, default_loss
from .errors import (
    FIT_ERRORS,
    FitFailedError,
    InvalidConfigurationError,
    NonConvergenceError,
    SingularDesignError,
)
from .seeding import SeedSpec

logger = logging.getLogger(__name__)

IRLS_MAX_ITERATIONS = 100
SEPARATED_MAX_ITERATIONS = 25
CD_MAX_SWEEPS = 10_000
INNER_MAX_SWEEPS = 1_000
WEIGHT_FLOOR = 1e-5


class FitterKind(str, Enum):
    OLS = "ols"
    LOGISTIC = "logistic"
    LASSO = "lasso"
    SPARSE_LOGISTIC = "sparse_logistic"


class SeparationPolicy(str, Enum):
    RAISE = "raise"
    CAP = "cap"


PENALIZED = {FitterKind.LASSO, FitterKind.SPARSE_LOGISTIC}
CLASSIFIERS = {FitterKind.LOGISTIC, FitterKind.SPARSE_LOGISTIC}


class FitterSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: FitterKind = Field(default=FitterKind.OLS, description="Fitting algorithm")
    penalty: Optional[float] = Field(default=None, ge=0.0,
                                     description="l1 penalty; None means calibrate before use")
    include_intercept: bool = Field(default=False, description="Fit an unpenalized intercept")
    max_iterations: Optional[int] = Field(default=None, ge=1,
                                          description="Newton steps or sweeps; None picks the fitter default")
    tolerance: float = Field(default=1e-7, gt=0.0, description="Gradient or KKT residual tolerance")
    standardize: bool = Field(default=False, description="Scale columns to unit sd inside the fit")
    trace: bool = Field(default=False, description="Record the objective after every sweep")
    separation: SeparationPolicy = Field(
        default=SeparationPolicy.RAISE,
        description="Logistic only: raise when no MLE exists, or return the capped IRLS iterate",
    )

    @model_validator(mode="after")
    def _penalty_matches_kind(self):
        if self.penalty is not None and self.kind not in PENALIZED:
            raise ValueError(f"{self.kind.value} takes no penalty")
        if self.separation == SeparationPolicy.CAP and self.kind != FitterKind.LOGISTIC:
            raise ValueError("the separation cap applies to the logistic fitter only")
        return self

    @property
    def task(self) -> TaskKind:
        if self.kind in CLASSIFIERS:
            return TaskKind.BINARY_CLASSIFICATION
        return TaskKind.REGRESSION

    @property
    def link(self) -> Link:
        return Link.LOGIT if self.kind in CLASSIFIERS else Link.IDENTITY

    @property
    def iteration_limit(self) -> int:
        if self.max_iterations is not None:
            return self.max_iterations
        return CD_MAX_SWEEPS if self.kind == FitterKind.LASSO else IRLS_MAX_ITERATIONS

    def with_penalty(self, penalty: float) -> "FitterSpec":
        return FitterSpec(**{**self.model_dump(), "penalty": penalty})


class _Design:
    """Working design matrix: optional unit-sd scaling and a leading intercept column"""

    def __init__(self, data: Dataset, spec: FitterSpec):
        features = data.features
        self.scale = np.ones(data.p)
        if spec.standardize:
            sd = features.std(axis=0)
            self.scale = np.where(sd > 0, sd, 1.0)
            features = features / self.scale
        self.intercept = spec.include_intercept
        if self.intercept:
            features = np.hstack([np.ones((data.n, 1)), features])
        self.matrix = np.asfortranarray(features)
        self.penalized = np.ones(self.matrix.shape[1], dtype=bool)
        if self.intercept:
            self.penalized[0] = False

    @property
    def columns(self) -> int:
        return self.matrix.shape[1]

    def to_working(self, model: FittedModel) -> np.ndarray:
        coefficients = model.coefficients * self.scale
        if self.intercept:
            return np.concatenate([[model.intercept or 0.0], coefficients])
        return coefficients

    def to_model(self, coef: np.ndarray, link: Link, diagnostics: FitDiagnostics) -> FittedModel:
        intercept = float(coef[0]) if self.intercept else None
        slopes = coef[1:] if self.intercept else coef
        return FittedModel(coefficients=slopes / self.scale, intercept=intercept, link=link,
                           diagnostics=diagnostics)


def _require_task(data: Dataset, spec: FitterSpec) -> None:
    if data.task != spec.task:
        raise InvalidConfigurationError(
            f"{spec.kind.value} fitter needs a {spec.task.value} task, got {data.task.value}"
        )


def _require_penalty(spec: FitterSpec) -> float:
    if spec.penalty is None:
        raise InvalidConfigurationError(f"{spec.kind.value} needs a penalty; calibrate it first")
    return spec.penalty


def soft_threshold(value: float, threshold: float) -> float:
    return float(np.sign(value) * max(abs(value) - threshold, 0.0))


def kkt_violations(gradient: np.ndarray, coef: np.ndarray, penalty: float,
                   penalized: np.ndarray) -> np.ndarray:
    """Per-coordinate violation of the subgradient optimality conditions of f + penalty * |coef|_1"""
    violation = np.where(
        coef != 0,
        np.abs(gradient + penalty * np.sign(coef)),
        np.maximum(np.abs(gradient) - penalty, 0.0),
    )
    return np.where(penalized, violation, np.abs(gradient))


def kkt_violation(gradient: np.ndarray, coef: np.ndarray, penalty: float,
                  penalized: np.ndarray) -> float:
    """Largest violation of the subgradient optimality conditions of f + penalty * |coef|_1"""
    return float(kkt_violations(gradient, coef, penalty, penalized).max())


# --- ordinary least squares ---------------------------------------------------

def fit_ols(data: Dataset, spec: FitterSpec) -> FittedModel:
    _require_task(data, spec)
    design = _Design(data, spec)
    if data.n <= design.columns:
        raise SingularDesignError(f"OLS needs n > {design.columns} rows, got n={data.n}")

    coef, _, rank, _ = linalg.lstsq(design.matrix, data.response, lapack_driver="gelsd",
                                  cond=max(design.matrix.shape) * np.finfo(float).eps)
    if rank < design.columns:
        raise SingularDesignError(f"design has rank {rank} < {design.columns} columns")

    residual = data.response - design.matrix @ coef
    normal_residual = float(np.max(np.abs(design.matrix.T @ residual))) / data.n
    return design.to_model(coef, Link.IDENTITY, FitDiagnostics(iterations=0, residual=normal_residual))


# --- logistic regression --------------------------------------------------------

def logistic_deviance(response: np.ndarray, eta: np.ndarray) -> float:
    """-2 * log-likelihood of 0/1 responses under linear predictor eta"""
    return float(2.0 * np.sum(np.logaddexp(0.0, eta) - response * eta))


def _halved_step(A: np.ndarray, y: np.ndarray, coef: np.ndarray, step: np.ndarray,
                 deviance: float) -> Optional[Tuple[np.ndarray, np.ndarray, float]]:
    """Halve the Newton step until the deviance does not increase; None if it never does"""
    t = 1.0
    while t >= 1e-10:
        candidate = coef + t * step
        candidate_eta = A @ candidate
        candidate_deviance = logistic_deviance(y, candidate_eta)
        if candidate_deviance <= deviance * (1.0 + 1e-12):
            return candidate, candidate_eta, candidate_deviance
        t *= 0.5
    return None


def fit_logistic(data: Dataset, spec: FitterSpec) -> FittedModel:
    """
    Unpenalized logistic regression by IRLS with step halving.

    Under ``SeparationPolicy.CAP`` a fit without a finite MLE is not an error:
    once the training responses are completely separated IRLS runs to
    SEPARATED_MAX_ITERATIONS steps. Separated fits and fits that stop early
    return their last iterate with ``converged=False`` in the diagnostics.

    Raises:
        NonConvergenceError: separation, a failed step halving or the iteration
            limit, under the default ``SeparationPolicy.RAISE``.
        SingularDesignError: the IRLS Hessian cannot be factored.
    """
    _require_task(data, spec)
    design = _Design(data, spec)
    A, y, n = design.matrix, data.response, data.n
    signs = 2.0 * y - 1.0
    capped = spec.separation == SeparationPolicy.CAP

    coef = np.zeros(design.columns)
    eta = A @ coef
    deviance = logistic_deviance(y, eta)
    trace: Optional[List[float]] = [deviance / n] if spec.trace else None
    separated = False
    steps = 0

    for iteration in range(spec.iteration_limit + 1):
        mu = expit(eta)
        gradient = A.T @ (y - mu) / n
        residual = float(np.max(np.abs(gradient)))
        if residual <= spec.tolerance:
            diagnostics = FitDiagnostics(iterations=iteration, residual=residual, objective_trace=trace,
                                         converged=not separated, separated=separated)
            return design.to_model(coef, Link.LOGIT, diagnostics)
        if iteration == spec.iteration_limit:
            break

        weights = mu * (1.0 - mu)
        if capped:
            weights = np.maximum(weights, WEIGHT_FLOOR)
        hessian = (A.T * weights) @ A / n
        try:
            step = linalg.solve(hessian, gradient, assume_a="pos")
        except (linalg.LinAlgError, ValueError) as exc:
            raise SingularDesignError(f"IRLS Hessian is singular: {exc}") from exc

        halved = _halved_step(A, y, coef, step, deviance)
        if halved is None:
            if capped:
                break
            raise NonConvergenceError("IRLS step halving failed to reduce the deviance",
                                      last_iterate=coef, iterations=iteration + 1)
        coef, eta, deviance = halved
        steps = iteration + 1
        if trace is not None:
            trace.append(deviance / n)

        if np.all(signs * eta > 0):
            if not capped:
                raise NonConvergenceError("responses are completely separated; the MLE does not exist",
                                          last_iterate=coef, iterations=steps)
            separated = True
            if steps >= SEPARATED_MAX_ITERATIONS:
                break

    if not capped:
        raise NonConvergenceError(f"IRLS did not converge in {spec.iteration_limit} iterations",
                                  last_iterate=coef, iterations=spec.iteration_limit)
    residual = float(np.max(np.abs(A.T @ (y - expit(eta)) / n)))
    logger.debug("Capped logistic fit after %d steps (separated=%s, residual %.3g)", steps, separated, residual)
    diagnostics = FitDiagnostics(iterations=steps, residual=residual, objective_trace=trace, converged=False,
                                 separated=separated)
    return design.to_model(coef, Link.LOGIT, diagnostics)


# --- penalized quadratic coordinate descent -------------------------------------


class _QuadraticProblem:
    """
    Minimize  g'(c - c0) + 1/2 (c - c0)' A' diag(w) A (c - c0) + penalty * |c[penalized]|_1
    by cyclic coordinate descent with active-set passes.
    """

    def __init__(self, design: _Design, weights: np.ndarray, gradient: np.ndarray,
                 start: np.ndarray, penalty: float):
        self.A = design.matrix
        self.row_weights = weights
        self.weighted = np.asfortranarray(self.A * weights[:, None])
        self.curvature = np.einsum("ij,ij->j", self.weighted, self.A)
        self.gradient = gradient
        self.start = start
        self.penalty = penalty
        self.penalized = design.penalized
        self.coef = start.copy()
        self.shift = np.zeros(self.A.shape[0])  # A @ (coef - start)

    def sweep(self, indices: Sequence[int]) -> None:
        for j in indices:
            h = self.curvature[j]
            if h <= 0.0:
                continue
            old = self.coef[j]
            z = h * old - (self.gradient[j] + self.weighted[:, j] @ self.shift)
            new = soft_threshold(z, self.penalty) / h if self.penalized[j] else z / h
            if new != old:
                self.shift += self.A[:, j] * (new - old)
                self.coef[j] = new

    def violations(self, indices=slice(None)) -> np.ndarray:
        partial = self.gradient[indices] + self.weighted[:, indices].T @ self.shift
        return kkt_violations(partial, self.coef[indices], self.penalty, self.penalized[indices])

    def violation(self, indices=slice(None)) -> float:
        return float(self.violations(indices).max())

    def model_value(self) -> float:
        linear = float(self.gradient @ (self.coef - self.start))
        quadratic = 0.5 * float(self.row_weights @ self.shift ** 2)
        return linear + quadratic + self.penalty * float(np.abs(self.coef[self.penalized]).sum())

    def solve(self, tolerance: float, max_sweeps: int, trace: Optional[List[float]] = None,
              offset: float = 0.0) -> Tuple[int, float]:
        """
        Sweep a working set until the KKT violation over every column is within
        tolerance; returns (sweeps, violation).

        The working set starts as the nonzero and unpenalized coordinates plus
        every violator and only grows. Columns outside it are checked with one
        vectorized KKT pass per round instead of a coordinate sweep.
        """
        working = ~self.penalized | (self.coef != 0)
        sweeps = 0
        while True:
            violations = self.violations()
            violation = float(violations.max())
            if violation <= tolerance or sweeps >= max_sweeps:
                return sweeps, violation
            working |= violations > tolerance
            indices = np.flatnonzero(working)
            while sweeps < max_sweeps:
                self.sweep(indices)
                sweeps += 1
                if trace is not None:
                    trace.append(offset + self.model_value())
                if self.violation(indices) <= 0.5 * tolerance:
                    break


# --- lasso -------------------------------------------------------------------------

def lasso_objective(data: Dataset, model: FittedModel, penalty: float, standardize: bool = False) -> float:
    """(1/2n) RSS + penalty * |coefficients|_1, on the scale the penalty was applied"""
    residual = data.response - model.linear_predictor(data.features)
    scale = _column_scale(data) if standardize else 1.0
    return float(residual @ residual) / (2.0 * data.n) + penalty * float(
        np.abs(model.coefficients * scale).sum())


def fit_lasso(data: Dataset, spec: FitterSpec) -> FittedModel:
    _require_task(data, spec)
    penalty = _require_penalty(spec)
    design = _Design(data, spec)
    y, n = data.response, data.n

    weights = np.full(n, 1.0 / n)
    gradient = -design.matrix.T @ y / n
    problem = _QuadraticProblem(design, weights, gradient, np.zeros(design.columns), penalty)
    trace: Optional[List[float]] = [float(y @ y) / (2.0 * n)] if spec.trace else None
    sweeps, violation = problem.solve(spec.tolerance, spec.iteration_limit, trace,
                                      offset=float(y @ y) / (2.0 * n))
    if violation > spec.tolerance:
        raise NonConvergenceError(
            f"coordinate descent stopped after {sweeps} sweeps with KKT residual {violation:.3g}",
            last_iterate=problem.coef, iterations=sweeps,
        )
    diagnostics = FitDiagnostics(iterations=sweeps, residual=violation, objective_trace=trace)
    return design.to_model(problem.coef, Link.IDENTITY, diagnostics)


# --- l1-penalized logistic regression -----------------------------------------------

def sparse_logistic_objective(data: Dataset, model: FittedModel, penalty: float,
                              standardize: bool = False) -> float:
    """(1/n) deviance + penalty * |coefficients|_1"""
    eta = model.linear_predictor(data.features)
    scale = _column_scale(data) if standardize else 1.0
    return logistic_deviance(data.response, eta) / data.n + penalty * float(
        np.abs(model.coefficients * scale).sum())


def fit_sparse_logistic(data: Dataset, spec: FitterSpec) -> FittedModel:
    _require_task(data, spec)
    penalty = _require_penalty(spec)
    if penalty <= 0:
        raise InvalidConfigurationError("sparse logistic regression needs a strictly positive penalty")
    design = _Design(data, spec)
    A, y, n = design.matrix, data.response, data.n
    pen = design.penalized

    def objective(coef: np.ndarray) -> float:
        return logistic_deviance(y, A @ coef) / n + penalty * float(np.abs(coef[pen]).sum())

    coef = np.zeros(design.columns)
    if design.intercept and 0.0 < y.mean() < 1.0:
        coef[0] = np.log(y.mean() / (1.0 - y.mean()))
    value = objective(coef)
    trace: Optional[List[float]] = [value] if spec.trace else None

    for iteration in range(spec.iteration_limit + 1):
        mu = expit(A @ coef)
        gradient = -2.0 * A.T @ (y - mu) / n
        violation = kkt_violation(gradient, coef, penalty, pen)
        if violation <= spec.tolerance:
            diagnostics = FitDiagnostics(iterations=iteration, residual=violation, objective_trace=trace)
            return design.to_model(coef, Link.LOGIT, diagnostics)
        if iteration == spec.iteration_limit:
            break

        weights = 2.0 * np.maximum(mu * (1.0 - mu), WEIGHT_FLOOR) / n
        problem = _QuadraticProblem(design, weights, gradient, coef, penalty)
        problem.solve(max(0.5 * spec.tolerance, 0.1 * violation), INNER_MAX_SWEEPS)
        direction = problem.coef - coef
        decrease = float(gradient @ direction) + penalty * float(
            np.abs(problem.coef[pen]).sum() - np.abs(coef[pen]).sum())

        # backtracking on the true objective
        t = 1.0
        while True:
            candidate = coef + t * direction
            candidate_value = objective(candidate)
            if candidate_value <= value + 1e-4 * t * min(decrease, 0.0):
                break
            t *= 0.5
            if t < 1e-10:
                raise NonConvergenceError("proximal Newton line search failed",
                                          last_iterate=coef, iterations=iteration + 1)
        coef, value = candidate, candidate_value
        if trace is not None:
            trace.append(value)

    raise NonConvergenceError(
        f"proximal Newton did not converge in {spec.iteration_limit} iterations",
        last_iterate=coef, iterations=spec.iteration_limit,
    )


# --- dispatch and penalty selection ------------------------------------------------------

_FITTERS = {
    FitterKind.OLS: fit_ols,
    FitterKind.LOGISTIC: fit_logistic,
    FitterKind.LASSO: fit_lasso,
    FitterKind.SPARSE_LOGISTIC: fit_sparse_logistic,
}


def fit(data: Dataset, spec: FitterSpec) -> FittedModel:
    _require_task(data, spec)
    return _FITTERS[spec.kind](data, spec)


def _column_scale(data: Dataset) -> np.ndarray:
    sd = data.features.std(axis=0)
    return np.where(sd > 0, sd, 1.0)


def smooth_gradient(data: Dataset, model: FittedModel, spec: FitterSpec) -> np.ndarray:
    """Gradient of the unpenalized part of a penalized objective, in working coordinates"""
    design = _Design(data, spec)
    coef = design.to_working(model)
    eta = design.matrix @ coef
    if spec.kind == FitterKind.SPARSE_LOGISTIC:
        return -2.0 * design.matrix.T @ (data.response - expit(eta)) / data.n
    return -design.matrix.T @ (data.response - eta) / data.n


def kkt_residual(data: Dataset, model: FittedModel, spec: FitterSpec) -> float:
    """Independent recomputation of the optimality residual of a penalized fit"""
    penalty = _require_penalty(spec)
    design = _Design(data, spec)
    return kkt_violation(smooth_gradient(data, model, spec), design.to_working(model), penalty,
                         design.penalized)


def penalty_ceiling(data: Dataset, spec: FitterSpec) -> float:
    """Smallest penalty whose fit has every slope coefficient at zero"""
    zero = FittedModel(coefficients=np.zeros(data.p), link=spec.link,
                       intercept=_null_intercept(data, spec))
    gradient = smooth_gradient(data, zero, spec)
    design = _Design(data, spec)
    return float(np.max(np.abs(gradient[design.penalized])))


def _null_intercept(data: Dataset, spec: FitterSpec) -> Optional[float]:
    if not spec.include_intercept:
        return None
    mean = float(data.response.mean())
    if spec.kind == FitterKind.SPARSE_LOGISTIC:
        return float(np.log(mean / (1.0 - mean))) if 0.0 < mean < 1.0 else 0.0
    return mean


def penalty_grid(data: Dataset, spec: FitterSpec, n_values: int = 20, ratio: float = 0.01) -> List[float]:
    """Geometric grid from the all-zero penalty downward, largest first"""
    if spec.kind not in PENALIZED:
        raise InvalidConfigurationError(f"{spec.kind.value} has no penalty to grid over")
    if n_values < 1 or not 0.0 < ratio < 1.0:
        raise InvalidConfigurationError("penalty grid needs n_values >= 1 and 0 < ratio < 1")
    ceiling = penalty_ceiling(data, spec)
    if ceiling <= 0.0:
        raise InvalidConfigurationError("response is already fit exactly by the null model")
    return np.geomspace(ceiling, ceiling * ratio, n_values).tolist()


def select_penalty_by_cv(data: Dataset, spec: FitterSpec, penalties: Sequence[float], K: int,
                         seed: SeedSpec, loss: Optional[LossKind] = None) -> float:
    """Penalty minimizing the K-fold CV estimate; ties go to the larger penalty"""
    from .cv_naive import cross_validate

    if not penalties or any(value <= 0 for value in penalties):
        raise InvalidConfigurationError("penalty grid must be nonempty and strictly positive")
    loss = loss or default_loss(data.task)

    best_value, best_penalty = np.inf, None
    last_failure: Optional[FitFailedError] = None
    for penalty in sorted(set(penalties), reverse=True):
        try:
            result = cross_validate(data, spec.with_penalty(penalty), loss, K, seed)
        except FitFailedError as exc:
            logger.debug("Penalty %.4g failed: %s", penalty, exc)
            last_failure = exc.located(penalty=penalty)
            continue
        if result.point < best_value:
            best_value, best_penalty = result.point, penalty

    if best_penalty is None:
        raise last_failure
    logger.info("Selected penalty %.4g with CV error %.4g", best_penalty, best_value)
    return best_penalty


def fit_or_raise(data: Dataset, spec: FitterSpec, **coordinates) -> FittedModel:
    """Fit inside a resampling loop, locating any failure by its loop coordinates"""
    try:
        return fit(data, spec)
    except FIT_ERRORS as exc:
        raise FitFailedError(exc, **coordinates) from exc
