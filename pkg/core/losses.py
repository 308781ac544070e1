import numpy as np

from .dataset import Dataset, ErrorVector, FittedModel, LossKind, TaskKind
from .errors import InvalidConfigurationError


def check_loss(loss: LossKind, task: TaskKind) -> None:
    if loss == LossKind.ZERO_ONE and task != TaskKind.BINARY_CLASSIFICATION:
        raise InvalidConfigurationError("zero-one loss requires a binary classification task")


def pointwise_loss(mean: np.ndarray, response: np.ndarray, loss: LossKind) -> np.ndarray:
    """Loss of each prediction; zero-one predicts class 1 only when the probability exceeds 1/2"""
    if loss == LossKind.ZERO_ONE:
        predicted = (mean > 0.5).astype(float)
        return (predicted != response).astype(float)
    return (response - mean) ** 2


def evaluate_losses(model: FittedModel, data: Dataset, loss: LossKind) -> ErrorVector:
    check_loss(loss, data.task)
    errors = pointwise_loss(model.predict_mean(data.features), data.response, loss)
    return ErrorVector(errors=errors, loss=loss)
