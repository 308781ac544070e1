import logging
import sys
from typing import Callable, Dict, Optional, Sequence

from cli.config import Command, RunConfig, parse_config
from cli.estimate import cmd_estimate
from cli.handlers import CONFIG_ERRORS, report_failure
from cli.report import cmd_report
from cli.simulate import cmd_simulate
from core.settings import get_settings

COMMANDS: Dict[Command, Callable[[RunConfig], int]] = {
    Command.ESTIMATE: cmd_estimate,
    Command.SIMULATE: cmd_simulate,
    Command.REPORT: cmd_report,
}


def configure_logging(level: str) -> None:
    """Log to stderr so JSON on stdout stays machine readable"""
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    configure_logging(get_settings().log_level)
    try:
        config = parse_config(argv)
    except CONFIG_ERRORS as exc:
        return report_failure(exc)
    return COMMANDS[config.command](config)


if __name__ == "__main__":
    sys.exit(main())
