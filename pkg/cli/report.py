import logging
from typing import List, Sequence

import pandas as pd

from core.reports import long_format, pool_reports, read_report_csv, write_csv

from .config import RunConfig
from .handlers import EXIT_OK, handle_errors

logger = logging.getLogger(__name__)


def merge_reports(paths: Sequence[str]) -> pd.DataFrame:
    """Read every report CSV, checking its schema, and pool them by (n, method, target)"""
    frames: List[pd.DataFrame] = [read_report_csv(path) for path in paths]
    logger.info("Pooling %d report(s)", len(frames))
    return pool_reports(frames)


@handle_errors
def cmd_report(config: RunConfig) -> int:
    merged = merge_reports(config.reports)
    print(merged.to_string(index=False))
    if config.output:
        write_csv(merged, config.output)
    if config.long_output:
        write_csv(long_format(merged), config.long_output)
    return EXIT_OK
