import logging
from enum import Enum
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import expit

from .errors import DataFormatError, DimensionMismatchError

logger = logging.getLogger(__name__)


class TaskKind(str, Enum):
    REGRESSION = "regression"
    BINARY_CLASSIFICATION = "binary_classification"


class LossKind(str, Enum):
    SQUARED_ERROR = "squared_error"
    ZERO_ONE = "zero_one"


class Link(str, Enum):
    IDENTITY = "identity"
    LOGIT = "logit"


class IntervalScale(str, Enum):
    RAW = "raw"
    ARCSINE_SQRT = "arcsine_sqrt"


def _frozen_array(value, ndim: int) -> np.ndarray:
    array = np.array(value, dtype=float, copy=True)
    if array.ndim != ndim:
        raise ValueError(f"expected a {ndim}-dimensional array, got shape {array.shape}")
    array.setflags(write=False)
    return array


def default_loss(task: TaskKind) -> LossKind:
    """Zero-one loss for classification, squared error otherwise"""
    if task == TaskKind.BINARY_CLASSIFICATION:
        return LossKind.ZERO_ONE
    return LossKind.SQUARED_ERROR


class Dataset(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    features: np.ndarray = Field(..., description="n x p feature matrix")
    response: np.ndarray = Field(..., description="Response vector of length n")
    task: TaskKind = Field(default=TaskKind.REGRESSION, description="Regression or binary classification")
    feature_names: Optional[List[str]] = Field(default=None, description="Column names when read from CSV")

    @field_validator("features", mode="before")
    @classmethod
    def _features_matrix(cls, value):
        return _frozen_array(value, ndim=2)

    @field_validator("response", mode="before")
    @classmethod
    def _response_vector(cls, value):
        return _frozen_array(value, ndim=1)

    @model_validator(mode="after")
    def _check_invariants(self):
        n, p = self.features.shape
        if self.response.shape[0] != n:
            raise ValueError(f"response has length {self.response.shape[0]} but features have {n} rows")
        if n < 2:
            raise ValueError("a dataset needs at least 2 observations")
        if p < 1:
            raise ValueError("a dataset needs at least 1 feature")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.response))):
            raise ValueError("all feature and response entries must be finite")
        if self.task == TaskKind.BINARY_CLASSIFICATION and not np.all(np.isin(self.response, (0.0, 1.0))):
            raise ValueError("binary classification responses must be 0 or 1")
        if self.feature_names is not None and len(self.feature_names) != p:
            raise ValueError("feature_names must name every column")
        return self

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def subset(self, rows: np.ndarray) -> "Dataset":
        """Rows of an already validated dataset; skips re-validation"""
        features = self.features[rows]
        response = self.response[rows]
        features.setflags(write=False)
        response.setflags(write=False)
        return Dataset.model_construct(
            features=features, response=response, task=self.task, feature_names=self.feature_names
        )

    def with_response(self, response: np.ndarray) -> "Dataset":
        """
        Same features and task with a new response, validated again.

        Args:
            response: Replacement response of length n.

        Returns:
            A new Dataset; the original is unchanged.
        """
        return Dataset(features=self.features, response=response, task=self.task,
                       feature_names=self.feature_names)


class FitDiagnostics(BaseModel):
    iterations: int = Field(default=0, description="Newton steps or coordinate sweeps used")
    residual: float = Field(default=0.0, description="Final gradient or KKT residual")
    objective_trace: Optional[List[float]] = Field(default=None, description="Objective after each sweep")
    converged: bool = Field(default=True, description="False when a capped fit stopped early")
    separated: bool = Field(default=False, description="Training responses were completely separated")


class FittedModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    coefficients: np.ndarray = Field(..., description="Coefficient vector of length p")
    intercept: Optional[float] = Field(default=None, description="Intercept, if fitted")
    link: Link = Field(default=Link.IDENTITY, description="Identity for regression, logit for classifiers")
    diagnostics: Optional[FitDiagnostics] = None

    @field_validator("coefficients", mode="before")
    @classmethod
    def _coefficient_vector(cls, value):
        array = _frozen_array(value, ndim=1)
        if not np.all(np.isfinite(array)):
            raise ValueError("coefficients must be finite")
        return array

    @property
    def p(self) -> int:
        return self.coefficients.shape[0]

    def linear_predictor(self, features: np.ndarray) -> np.ndarray:
        """
        X theta plus the intercept, if any.

        Args:
            features: m x p matrix with the columns the model was fit on.

        Returns:
            Vector of length m.

        Raises:
            DimensionMismatchError: the column count differs from the coefficient count.
        """
        if features.shape[1] != self.p:
            raise DimensionMismatchError(
                f"model has {self.p} coefficients but data has {features.shape[1]} features"
            )
        eta = features @ self.coefficients
        if self.intercept is not None:
            eta = eta + self.intercept
        return eta

    def predict_mean(self, features: np.ndarray) -> np.ndarray:
        """Fitted response mean: the linear predictor, or a probability under the logit link"""
        eta = self.linear_predictor(features)
        if self.link == Link.LOGIT:
            return expit(eta)
        return eta


class ErrorVector(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    errors: np.ndarray = Field(..., description="Per-observation losses")
    loss: LossKind

    @field_validator("errors", mode="before")
    @classmethod
    def _errors_vector(cls, value):
        return _frozen_array(value, ndim=1)

    @model_validator(mode="after")
    def _check_losses(self):
        if np.any(self.errors < 0) or not np.all(np.isfinite(self.errors)):
            raise ValueError("losses must be finite and nonnegative")
        if self.loss == LossKind.ZERO_ONE and not np.all(np.isin(self.errors, (0.0, 1.0))):
            raise ValueError("zero-one losses must be 0 or 1")
        return self

    @property
    def n(self) -> int:
        return self.errors.shape[0]

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))


class IntervalEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    point: float
    lo: float
    hi: float
    se: float = Field(..., ge=0.0, description="Standard error on the interval's own scale")
    alpha: float = Field(..., gt=0.0, lt=1.0)
    scale: IntervalScale = IntervalScale.RAW

    @model_validator(mode="after")
    def _ordered(self):
        if not (self.lo <= self.point <= self.hi):
            raise ValueError(f"interval ({self.lo}, {self.hi}) does not contain point {self.point}")
        return self

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def misses(self, target: float) -> str:
        """'hi' when the interval sits above the target, 'lo' when below, '' when covered"""
        if self.lo > target:
            return "hi"
        if self.hi < target:
            return "lo"
        return ""


class DatasetParser:
    def __init__(self, response_column: str, task: TaskKind = TaskKind.REGRESSION):
        self.response_column = response_column
        self.task = task

    def parse_csv(self, path: Union[str, Path]) -> Dataset:
        """
        Read a UTF-8 CSV with a header row; every column except the response is a feature.

        Args:
            path: CSV file.

        Returns:
            Dataset with feature_names taken from the header, in file order.

        Raises:
            DataFormatError: unreadable file, missing response column, no feature
                columns, a non-numeric or non-finite cell (with its 1-based data
                row) or a classification response other than 0 and 1.
        """
        try:
            frame = pd.read_csv(path, dtype=str, encoding="utf-8", keep_default_na=False)
        except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
            raise DataFormatError(f"cannot read {path}: {exc}") from exc

        if self.response_column not in frame.columns:
            raise DataFormatError(f"response column '{self.response_column}' not found in header")
        feature_columns = [column for column in frame.columns if column != self.response_column]
        if not feature_columns:
            raise DataFormatError("no feature columns besides the response")

        numeric = frame.apply(lambda column: pd.to_numeric(column.str.strip(), errors="coerce"))
        bad_rows = numeric.isna().any(axis=1) | ~np.isfinite(numeric.to_numpy(dtype=float)).all(axis=1)
        if bad_rows.any():
            position = int(np.flatnonzero(bad_rows.to_numpy())[0])
            bad_columns = [c for c in frame.columns if pd.isna(numeric.iloc[position][c])]
            raise DataFormatError(f"non-numeric value in column(s) {bad_columns}", row=position + 1)

        response = numeric[self.response_column].to_numpy(dtype=float)
        if self.task == TaskKind.BINARY_CLASSIFICATION:
            invalid = ~np.isin(response, (0.0, 1.0))
            if invalid.any():
                raise DataFormatError("classification response must be 0 or 1",
                                      row=int(np.flatnonzero(invalid)[0]) + 1)

        logger.info("Loaded %s: %d rows, %d features", path, len(frame), len(feature_columns))
        return Dataset(
            features=numeric[feature_columns].to_numpy(dtype=float),
            response=response,
            task=self.task,
            feature_names=feature_columns,
        )


def load_csv(path: Union[str, Path], response_column: str,
             task: TaskKind = TaskKind.REGRESSION) -> Dataset:
    """Shorthand for ``DatasetParser(response_column, task).parse_csv(path)``"""
    return DatasetParser(response_column, task).parse_csv(path)
