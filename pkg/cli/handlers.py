import json
import logging
import sys
from functools import wraps
from typing import Any, Callable, Dict

from pydantic import ValidationError

from core.errors import FIT_FAILURES, DataFormatError, InvalidConfigurationError, ReportSchemaError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FIT = 2

CONFIG_ERRORS = (InvalidConfigurationError, DataFormatError, ReportSchemaError, ValidationError, OSError)


def error_payload(exc: BaseException) -> Dict[str, str]:
    """Single-line description of a failure, shaped like the HTTP error bodies"""
    if isinstance(exc, ValidationError):
        first = exc.errors()[0]
        where = ".".join(str(part) for part in first.get("loc", ())) or "config"
        detail = f"{where}: {first.get('msg', str(exc))}"
    else:
        detail = " ".join(str(exc).split())
    kind = "Fit failure" if isinstance(exc, FIT_FAILURES) else "Invalid input"
    return {"error": kind, "detail": detail, "type": type(exc).__name__}


def exit_status(exc: BaseException) -> int:
    if isinstance(exc, FIT_FAILURES):
        return EXIT_FIT
    if isinstance(exc, CONFIG_ERRORS):
        return EXIT_CONFIG
    raise exc


def report_failure(exc: BaseException) -> int:
    status = exit_status(exc)
    logger.debug("Command failed", exc_info=exc)
    print(json.dumps(error_payload(exc), sort_keys=True), file=sys.stderr)
    return status


def handle_errors(command: Callable[..., int]) -> Callable[..., int]:
    """Turn library errors raised by a command into exit statuses 1 and 2"""

    @wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> int:
        try:
            return command(*args, **kwargs)
        except (*CONFIG_ERRORS, *FIT_FAILURES) as exc:
            return report_failure(exc)

    return wrapper
