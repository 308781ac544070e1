from typing import Any, Dict, Optional

import numpy as np


class NestedCVError(Exception):
    """Base class for every error raised by the library"""


class InvalidConfigurationError(NestedCVError, ValueError):
    """Parameters that cannot be used together or are out of range"""


class DimensionMismatchError(InvalidConfigurationError):
    """Model and data disagree on the number of features"""


class DataFormatError(NestedCVError, ValueError):
    """Dataset file could not be parsed"""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ReportSchemaError(NestedCVError, ValueError):
    """Report file does not follow the coverage report schema"""

    def __init__(self, message: str, column: Optional[str] = None):
        self.column = column
        super().__init__(message)


class SingularDesignError(NestedCVError):
    """Design matrix is rank deficient or has too few rows"""


class NonConvergenceError(NestedCVError):
    """Iterative fit stopped before reaching its tolerance"""

    def __init__(self, message: str, last_iterate: Optional[np.ndarray] = None,
                 iterations: int = 0):
        self.last_iterate = last_iterate
        self.iterations = iterations
        super().__init__(message)


class DegenerateResamplingError(NestedCVError):
    """Too many bootstrap resamples had to be redrawn"""


class FitFailedError(NestedCVError):
    """A fit inside a resampling loop failed; coordinates locate it"""

    def __init__(self, cause: Exception, **coordinates: Any):
        self.cause = cause
        self.coordinates: Dict[str, Any] = coordinates
        where = ", ".join(f"{key}={value}" for key, value in coordinates.items())
        super().__init__(f"fit failed at {where}: {type(cause).__name__}: {cause}")

    def located(self, **outer: Any) -> "FitFailedError":
        """Return a copy with enclosing loop coordinates prepended"""
        error = FitFailedError(self.cause, **{**outer, **self.coordinates})
        error.__cause__ = self.cause
        return error


# Failures a fitter can raise on otherwise valid input
FIT_ERRORS = (SingularDesignError, NonConvergenceError)

# Failures the CLI reports with exit status 2
FIT_FAILURES = (FitFailedError, SingularDesignError, NonConvergenceError, DegenerateResamplingError)
