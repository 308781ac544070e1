"""
Named experiment presets. Each one pins a data-generating process, a fitter
and a driver so a published-scale experiment runs as a single command;
replicate counts default to a desk-scale budget and can be raised per run.
"""

import logging
from enum import Enum
from typing import Dict, List, Optional, Sequence, Union

from pydantic import BaseModel, ConfigDict, Field

from .dgp import CovarianceKind, CovarianceSpec, DgpFamily, DgpSpec, ThetaSpec
from .errors import InvalidConfigurationError
from .experiments import (
    CoverageReport,
    CoverageSettings,
    EstimandReport,
    FixedP,
    Method,
    Proportional,
    RateScanResult,
    UnbiasednessReport,
    run_coverage_experiment,
    run_estimand_experiment,
    run_ncv_unbiasedness_check,
    run_rate_scan,
)
from .fitters import FitterKind, FitterSpec, SeparationPolicy
from .seeding import SeedSpec

logger = logging.getLogger(__name__)


class PresetKind(str, Enum):
    COVERAGE = "coverage"
    COVERAGE_SERIES = "coverage_series"
    RATE_SCAN = "rate_scan"
    ESTIMAND = "estimand"
    UNBIASEDNESS = "unbiasedness"


class Preset(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    kind: PresetKind
    description: str = Field(default="", description="One-line summary for listings")
    dgp: Optional[DgpSpec] = None
    fitter: FitterSpec = Field(default_factory=FitterSpec)
    methods: List[Method] = Field(default_factory=lambda: [Method.CV, Method.NCV, Method.DS])
    replicates: int = Field(default=200, ge=1, description="Desk-scale default replicate count")
    K: int = Field(default=10, ge=3)
    R: int = Field(default=200, ge=1)
    n_grid: List[int] = Field(default_factory=list)
    regime: Optional[Union[Proportional, FixedP]] = None
    p: Optional[int] = Field(default=None, description="Feature count for the OLS-only drivers")
    fixed_x: bool = False


PresetResult = Union[CoverageReport, List[CoverageReport], RateScanResult, EstimandReport, UnbiasednessReport]


def _logistic(n: int, p: int, bayes: float, rho: float = 0.0) -> DgpSpec:
    covariance = CovarianceSpec(kind=CovarianceKind.AR1, rho=rho) if rho else CovarianceSpec()
    return DgpSpec(family=DgpFamily.LOGISTIC_GAUSSIAN, n=n, p=p, covariance=covariance,
                   theta=ThetaSpec(k=4), target_bayes_error=bayes)


def _lasso(n: int) -> DgpSpec:
    return DgpSpec(family=DgpFamily.LINEAR_GAUSSIAN, n=n, p=500, theta=ThetaSpec(k=4), target_snr=4.0)


# Monte Carlo replicates keep separated fits at an iteration cap instead of dropping them
LOGISTIC = FitterSpec(kind=FitterKind.LOGISTIC, separation=SeparationPolicy.CAP)
SPARSE_LOGISTIC = FitterSpec(kind=FitterKind.SPARSE_LOGISTIC)
LASSO = FitterSpec(kind=FitterKind.LASSO)
OLS = FitterSpec(kind=FitterKind.OLS)

PRESETS: Dict[str, Preset] = {
    preset.name: preset
    for preset in [
        Preset(name="lowd_logistic_33", kind=PresetKind.COVERAGE, dgp=_logistic(100, 20, 0.332), fitter=LOGISTIC,
               description="Low-dimensional logistic regression, n=100, p=20, Bayes error 33.2%"),
        Preset(name="lowd_logistic_22", kind=PresetKind.COVERAGE, dgp=_logistic(100, 20, 0.225), fitter=LOGISTIC,
               description="Low-dimensional logistic regression, n=100, p=20, Bayes error 22.5%"),
        Preset(name="highd_logistic_n90", kind=PresetKind.COVERAGE, dgp=_logistic(90, 1000, 0.22),
               fitter=SPARSE_LOGISTIC,
               description="Sparse logistic regression, n=90, p=1000, independent features; ~20k fits/replicate"),
        Preset(name="highd_logistic_n200", kind=PresetKind.COVERAGE, dgp=_logistic(200, 1000, 0.22),
               fitter=SPARSE_LOGISTIC,
               description="Sparse logistic regression, n=200, p=1000, independent features; ~20k fits/replicate"),
        Preset(name="highd_logistic_rho05", kind=PresetKind.COVERAGE, dgp=_logistic(90, 1000, 0.22, rho=0.5),
               fitter=SPARSE_LOGISTIC,
               description="Sparse logistic regression, n=90, p=1000, AR1 features rho=0.5; ~20k fits/replicate"),
        Preset(name="highd_lasso_n50", kind=PresetKind.COVERAGE, dgp=_lasso(50), fitter=LASSO,
               description="Lasso with a frozen CV-chosen penalty, n=50, p=500, SNR 4"),
        Preset(name="highd_lasso_n100", kind=PresetKind.COVERAGE, dgp=_lasso(100), fitter=LASSO,
               description="Lasso with a frozen CV-chosen penalty, n=100, p=500, SNR 4"),
        Preset(name="sparse_logistic_inflation", kind=PresetKind.COVERAGE, dgp=_logistic(90, 1000, 0.20),
               fitter=SPARSE_LOGISTIC, methods=[Method.CV, Method.NCV],
               description="Naive CV undercoverage and NCV width inflation, n=90, p=1000, Bayes error 20%; "
                           "~20k fits per replicate"),
        Preset(name="ols_coverage_by_n", kind=PresetKind.COVERAGE_SERIES,
               dgp=DgpSpec(n=40, p=20, theta=ThetaSpec(k=4)), fitter=OLS, n_grid=[40, 100, 200, 400],
               description="OLS coverage of CV, NCV and DS as n grows, p=20"),
        Preset(name="proportional_rates", kind=PresetKind.RATE_SCAN, regime=Proportional(lambda_=2.0),
               n_grid=[100, 200, 400, 800], description="Rate scan with p = n / 2"),
        Preset(name="fixed_p_rates", kind=PresetKind.RATE_SCAN, regime=FixedP(p=5),
               n_grid=[25, 50, 100, 200], description="Rate scan with p = 5"),
        Preset(name="estimand_fixed_x", kind=PresetKind.ESTIMAND, p=20, n_grid=[100], fixed_x=True,
               replicates=500, description="CV error against Err, Err_X and Err_XY with the design held fixed"),
        Preset(name="ncv_unbiasedness", kind=PresetKind.UNBIASEDNESS, p=5, n_grid=[100], K=5, R=20,
               replicates=500, description="Mean NCV mse estimate against a brute-force (K-1)-fold MSE"),
    ]
}


# Short names for the published tables, figures and worked examples
PRESET_ALIASES: Dict[str, str] = {
    "intro_example": "sparse_logistic_inflation",
    "table1_row1": "lowd_logistic_33",
    "table2_row1": "highd_logistic_n90",
    "fig3": "estimand_fixed_x",
    "fig5": "proportional_rates",
    "fig8": "ols_coverage_by_n",
    "thm3": "ncv_unbiasedness",
}


def preset_names(include_aliases: bool = False) -> List[str]:
    names = list(PRESETS)
    if include_aliases:
        names += list(PRESET_ALIASES)
    return sorted(names)


def get_preset(name: str) -> Preset:
    """Look up a preset by name or alias

    Raises:
        InvalidConfigurationError: the name is neither a preset nor an alias
    """
    try:
        return PRESETS[PRESET_ALIASES.get(name, name)]
    except KeyError:
        raise InvalidConfigurationError(
            f"unknown preset '{name}'; available: {', '.join(preset_names(include_aliases=True))}"
        ) from None


def run_preset(preset: Preset, seed: SeedSpec, replicates: Optional[int] = None, alpha: float = 0.1,
               settings: Optional[CoverageSettings] = None,
               n_grid: Optional[Sequence[int]] = None) -> PresetResult:
    """Run a preset; CoverageSettings carries fold, repetition and interval options"""
    replicates = replicates if replicates is not None else preset.replicates
    settings = settings or CoverageSettings(K=preset.K, R=preset.R)
    grid = list(n_grid) if n_grid else list(preset.n_grid)
    logger.info("Running preset %s (%s) with %d replicates", preset.name, preset.kind.value, replicates)

    if preset.kind == PresetKind.COVERAGE:
        return run_coverage_experiment(preset.dgp, set(preset.methods), preset.fitter, replicates, alpha,
                                       seed, settings)
    if preset.kind == PresetKind.COVERAGE_SERIES:
        return [
            run_coverage_experiment(preset.dgp.with_n(n), set(preset.methods), preset.fitter, replicates,
                                    alpha, seed, settings)
            for n in grid
        ]
    if preset.kind == PresetKind.RATE_SCAN:
        return run_rate_scan(preset.regime, grid, replicates, seed, K=settings.K, n_jobs=settings.n_jobs)
    if preset.kind == PresetKind.ESTIMAND:
        return run_estimand_experiment(grid[0], preset.p, replicates, preset.fixed_x, seed, K=settings.K,
                                       alpha=alpha, n_jobs=settings.n_jobs)
    return run_ncv_unbiasedness_check(grid[0], preset.p, settings.K, replicates, seed, R=settings.R,
                                      n_jobs=settings.n_jobs)
