import argparse
import json
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import BaseModel, Field, model_validator

from core.dataset import LossKind, TaskKind, default_loss
from core.dgp import DgpSpec
from core.errors import DataFormatError, InvalidConfigurationError
from core.experiments import CoverageSettings, Method
from core.fitters import FitterKind, FitterSpec, SeparationPolicy
from core.nested_cv import NcvConfig
from core.presets import Preset, get_preset, preset_names
from core.settings import get_settings

DEFAULT_FOLDS = 10
DEFAULT_REPS = 200
DEFAULT_REPLICATES = 200


class Command(str, Enum):
    ESTIMATE = "estimate"
    SIMULATE = "simulate"
    REPORT = "report"


class Estimator(str, Enum):
    SPLIT = "split"
    CP = "cp"
    RCP = "rcp"
    BOOTSTRAP = "bootstrap"


class RunConfig(BaseModel):
    """Fully resolved command configuration; echoed into every JSON output"""

    command: Command
    data: Optional[str] = Field(default=None, description="CSV dataset path")
    response: str = Field(default="y", description="Response column of the CSV dataset")
    task: TaskKind = Field(default=TaskKind.REGRESSION)
    preset: Optional[str] = Field(default=None, description="Named simulation preset")
    dgp: Optional[DgpSpec] = Field(default=None, description="Explicit data-generating process")
    reports: List[str] = Field(default_factory=list, description="Report CSVs to merge")

    fitter: FitterKind = Field(default=FitterKind.OLS)
    penalty: Optional[float] = Field(default=None, ge=0.0, description="Fixed l1 penalty; None selects by CV")
    intercept: bool = Field(default=False)
    loss: Optional[LossKind] = Field(default=None, description="None means the task default")

    folds: Optional[int] = Field(default=None, ge=3, description="K; None means 10 or the preset value")
    reps: Optional[int] = Field(default=None, ge=1, description="Nested CV repetitions R")
    alpha: float = Field(default=0.1, gt=0.0, lt=1.0)
    replicates: Optional[int] = Field(default=None, ge=1, description="Monte Carlo replicates")
    seed: int = Field(default_factory=lambda: get_settings().default_seed, ge=0)
    threads: int = Field(default_factory=lambda: get_settings().threads, ge=1)
    output: Optional[str] = Field(default=None, description="Output path prefix")
    long_output: Optional[str] = Field(default=None, description="Long-format CSV path for the report command")

    methods: List[Method] = Field(default_factory=lambda: [Method.CV, Method.NCV, Method.DS])
    estimators: List[Estimator] = Field(default_factory=list, description="Extra estimators for estimate")
    bootstrap_B: int = Field(default=200, ge=1)
    train_fraction: float = Field(default=0.8, gt=0.0, lt=1.0)
    n_sub: Optional[int] = Field(default=None, ge=2, description="Subsample size for real-data coverage")
    n_grid: Optional[List[int]] = Field(default=None, description="Override of a series or rate-scan grid")

    clamp: bool = Field(default=True)
    vst: Optional[bool] = Field(default=None, description="None means on for zero-one loss")
    unscaled_b: bool = Field(default=False)
    literal_split_se: bool = Field(default=False)

    @model_validator(mode="after")
    def _consistent(self):
        if self.command == Command.ESTIMATE and self.data is None:
            raise InvalidConfigurationError("estimate needs --data")
        if self.command == Command.REPORT and not self.reports:
            raise InvalidConfigurationError("report needs at least one report CSV")
        if self.command == Command.SIMULATE:
            sources = [s for s in (self.preset, self.dgp, self.data) if s is not None]
            if len(sources) != 1:
                raise InvalidConfigurationError("simulate needs exactly one of --preset, --dgp or --data")
            if self.data is not None and self.n_sub is None:
                raise InvalidConfigurationError("simulate on a dataset needs --n-sub")
        if self.preset is not None:
            get_preset(self.preset)

        spec = self.fitter_spec()
        task = self.resolved_task()
        if self.command != Command.REPORT and self.preset is None and spec.task != task:
            raise InvalidConfigurationError(f"fitter {self.fitter.value} does not fit {task.value} data")
        loss = self.resolved_loss()
        if loss == LossKind.ZERO_ONE and task == TaskKind.REGRESSION:
            raise InvalidConfigurationError("zero-one loss needs binary classification")
        if self.vst and loss is not None and loss != LossKind.ZERO_ONE:
            raise InvalidConfigurationError("the arcsine-root interval needs zero-one loss")
        penalties = {Estimator.CP, Estimator.RCP} & set(self.estimators)
        if penalties and task != TaskKind.REGRESSION:
            names = ", ".join(sorted(e.value for e in penalties))
            raise InvalidConfigurationError(f"{names} apply to regression data only")
        return self

    def resolved_task(self) -> TaskKind:
        if self.preset is not None:
            preset = get_preset(self.preset)
            return preset.dgp.task if preset.dgp is not None else TaskKind.REGRESSION
        if self.dgp is not None:
            return self.dgp.task
        return self.task

    def resolved_loss(self) -> Optional[LossKind]:
        if self.command == Command.REPORT:
            return None
        return self.loss or default_loss(self.resolved_task())

    def fitter_spec(self) -> FitterSpec:
        """Simulated logistic replicates cap separated fits; a single dataset still fails on separation"""
        separation = SeparationPolicy.RAISE
        if self.command == Command.SIMULATE and self.fitter == FitterKind.LOGISTIC:
            separation = SeparationPolicy.CAP
        return FitterSpec(kind=self.fitter, penalty=self.penalty, include_intercept=self.intercept,
                          separation=separation)

    def folds_for(self, preset: Optional[Preset] = None) -> int:
        if self.folds is not None:
            return self.folds
        return preset.K if preset is not None else DEFAULT_FOLDS

    def reps_for(self, preset: Optional[Preset] = None) -> int:
        if self.reps is not None:
            return self.reps
        return preset.R if preset is not None else DEFAULT_REPS

    def ncv_config(self) -> NcvConfig:
        return NcvConfig(K=self.folds_for(), R=self.reps_for(), alpha=self.alpha, clamp=self.clamp,
                         use_vst=self.vst, unscaled_b=self.unscaled_b, n_jobs=self.threads)

    def coverage_settings(self, preset: Optional[Preset] = None) -> CoverageSettings:
        return CoverageSettings(
            K=self.folds_for(preset), R=self.reps_for(preset), train_fraction=self.train_fraction,
            clamp=self.clamp, use_vst=self.vst, unscaled_b=self.unscaled_b,
            literal_split_se=self.literal_split_se, loss=self.loss, n_jobs=self.threads,
        )

    def echo(self) -> dict:
        return self.model_dump(mode="json")


class _Parser(argparse.ArgumentParser):
    """Argument parser that raises instead of exiting, so usage errors get exit status 1"""

    def error(self, message: str):
        raise InvalidConfigurationError(f"{self.prog}: {message}")


def _csv_list(value: str) -> List[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


def _int_list(value: str) -> List[int]:
    try:
        return [int(part) for part in _csv_list(value)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{value}'") from None


def _add_model_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--fitter", choices=[k.value for k in FitterKind], default=FitterKind.OLS.value)
    parser.add_argument("--penalty", type=float, default=None, help="fixed l1 penalty; default selects by CV")
    parser.add_argument("--intercept", action="store_true", help="fit an unpenalized intercept")
    parser.add_argument("--loss", choices=[k.value for k in LossKind], default=None)
    parser.add_argument("--folds", type=int, default=None, help="number of folds K (default 10)")
    parser.add_argument("--reps", type=int, default=None, help="nested CV repetitions R (default 200)")
    parser.add_argument("--alpha", type=float, default=0.1, help="miscoverage level (default 0.1)")
    parser.add_argument("--seed", type=int, default=None, help="master seed (default NCV_DEFAULT_SEED)")
    parser.add_argument("--threads", type=int, default=None, help="worker count (default NCV_THREADS)")
    parser.add_argument("--output", default=None, help="output path prefix for .json/.csv files")
    parser.add_argument("--train-fraction", type=float, default=0.8)
    parser.add_argument("--no-clamp", dest="clamp", action="store_false",
                        help="do not keep the NCV standard error within [se, sqrt(K) se]")
    vst = parser.add_mutually_exclusive_group()
    vst.add_argument("--vst", dest="vst", action="store_true", default=None,
                     help="force the arcsine-root interval")
    vst.add_argument("--no-vst", dest="vst", action="store_false", help="use raw-scale intervals")
    parser.add_argument("--unscaled-b", action="store_true",
                        help="use the unscaled holdout variance in the NCV b terms")
    parser.add_argument("--literal-split-se", action="store_true",
                        help="report the holdout sd without the sqrt(holdout size) factor")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ncv", description="Cross-validation and nested cross-validation intervals "
                                             "for prediction error, with Monte Carlo coverage experiments")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    estimate = commands.add_parser("estimate", help="intervals for prediction error on a CSV dataset")
    estimate.add_argument("--data", required=True, help="CSV file with a header row")
    estimate.add_argument("--response", default="y", help="name of the response column")
    estimate.add_argument("--task", choices=[t.value for t in TaskKind], default=TaskKind.REGRESSION.value)
    estimate.add_argument("--estimators", type=_csv_list, default=[],
                          help=f"extra estimators: {','.join(e.value for e in Estimator)}")
    estimate.add_argument("--bootstrap-B", dest="bootstrap_B", type=int, default=200)
    _add_model_options(estimate)

    simulate = commands.add_parser("simulate", help="run a coverage or rate experiment")
    simulate.add_argument("--preset", default=None, help=f"one of: {', '.join(preset_names(include_aliases=True))}")
    simulate.add_argument("--dgp", default=None, help="JSON file holding an explicit DgpSpec")
    simulate.add_argument("--data", default=None, help="CSV dataset for subsample-and-holdout coverage")
    simulate.add_argument("--response", default="y")
    simulate.add_argument("--task", choices=[t.value for t in TaskKind], default=TaskKind.REGRESSION.value)
    simulate.add_argument("--n-sub", dest="n_sub", type=int, default=None)
    simulate.add_argument("--methods", type=_csv_list, default=None,
                          help=f"interval methods: {','.join(m.value for m in Method)}")
    simulate.add_argument("--replicates", type=int, default=None)
    simulate.add_argument("--n-grid", dest="n_grid", type=_int_list, default=None,
                          help="comma-separated training sizes for series and rate presets")
    _add_model_options(simulate)

    report = commands.add_parser("report", help="merge coverage report CSVs with MC-SE pooling")
    report.add_argument("reports", nargs="+", help="report CSV files")
    report.add_argument("--output", default=None, help="pooled report CSV path")
    report.add_argument("--long-output", dest="long_output", default=None, help="long-format CSV path")
    return parser


def _load_dgp(path: str) -> DgpSpec:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path} is not valid JSON: {exc}") from exc
    return DgpSpec.model_validate(raw)


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Resolve parsed arguments and environment defaults into a validated RunConfig"""
    values = {key: value for key, value in vars(args).items() if value is not None}
    if isinstance(values.get("dgp"), str):
        values["dgp"] = _load_dgp(values["dgp"])
    return RunConfig(**values)


def parse_config(argv: Optional[Sequence[str]] = None) -> RunConfig:
    return config_from_args(build_parser().parse_args(argv))
