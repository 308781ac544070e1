import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Sequence, Union

import numpy as np
import pandas as pd

from .errors import ReportSchemaError
from .experiments import RATE_QUANTITIES, CoverageReport, RateScanResult

logger = logging.getLogger(__name__)

REPORT_COLUMNS = [
    "n",
    "method",
    "target",
    "replicates",
    "failures",
    "width_ratio_mean",
    "point_mean",
    "err_mean",
    "hi_miscoverage",
    "lo_miscoverage",
    "mc_se",
]
KEY_COLUMNS = ["n", "method", "target"]
COUNT_COLUMNS = ["replicates", "failures"]
VALUE_COLUMNS = [c for c in REPORT_COLUMNS if c not in KEY_COLUMNS]
MEAN_COLUMNS = [c for c in VALUE_COLUMNS if c not in COUNT_COLUMNS and c != "mc_se"]
FLOAT_FORMAT = "%.12g"

PathLike = Union[str, Path]


def coverage_frame(report: CoverageReport) -> pd.DataFrame:
    """
    One row per (method, target) of a coverage report, in the report CSV schema.

    Args:
        report: Tabulated coverage run.

    Returns:
        DataFrame with REPORT_COLUMNS; ``n`` is NaN when the run has no fixed
        training size.
    """
    shared = {
        "n": report.n if report.n is not None else np.nan,
        "replicates": report.replicates,
        "failures": report.failures,
    }
    records = [{**shared, **row.model_dump(mode="json")} for row in report.rows]
    return pd.DataFrame.from_records(records, columns=REPORT_COLUMNS)


def series_frame(reports: Sequence[CoverageReport]) -> pd.DataFrame:
    """Row blocks of several coverage reports, one block per training size in order"""
    return pd.concat([coverage_frame(r) for r in reports], ignore_index=True)


def rate_frame(result: RateScanResult) -> pd.DataFrame:
    """One row per grid point: n, p and the rate quantities"""
    columns = ["n", "p", *RATE_QUANTITIES]
    return pd.DataFrame.from_records([r.model_dump() for r in result.rows], columns=columns)


def write_csv(frame: pd.DataFrame, path: PathLike) -> None:
    """
    Write a table with a fixed float format and LF line endings.

    Args:
        frame: Any result table.
        path: Destination; overwritten if present.
    """
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("Wrote %s (%d rows)", path, len(frame))


def to_json(payload: Dict[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, indent=2)


def write_json(payload: Dict[str, Any], path: PathLike) -> None:
    Path(path).write_text(to_json(payload) + "\n", encoding="utf-8")


def read_report_csv(path: PathLike) -> pd.DataFrame:
    """
    Load a coverage report CSV, rejecting anything but the exact column schema.

    Args:
        path: CSV written by ``simulate --output`` or ``report --output``.

    Returns:
        The report table, columns in REPORT_COLUMNS order.

    Raises:
        ReportSchemaError: unreadable file, a missing, extra or reordered column,
            a non-numeric value column or a run without replicates. The error
            carries the offending column.
    """
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ReportSchemaError(f"cannot read report {path}: {exc}") from exc

    columns = list(frame.columns)
    for expected in REPORT_COLUMNS:
        if expected not in columns:
            raise ReportSchemaError(f"{path}: missing column '{expected}'", column=expected)
    for column in columns:
        if column not in REPORT_COLUMNS:
            raise ReportSchemaError(f"{path}: unexpected column '{column}'", column=column)
    if columns != REPORT_COLUMNS:
        raise ReportSchemaError(f"{path}: columns out of order: {columns}", column=columns[0])
    for column in VALUE_COLUMNS:
        if not pd.api.types.is_numeric_dtype(frame[column]):
            raise ReportSchemaError(f"{path}: column '{column}' is not numeric", column=column)
    if not pd.api.types.is_numeric_dtype(frame["n"]):
        raise ReportSchemaError(f"{path}: column 'n' is not numeric", column="n")
    if (frame["replicates"] < 1).any():
        raise ReportSchemaError(f"{path}: column 'replicates' must be at least 1", column="replicates")
    return frame


def _pool_group(group: pd.DataFrame) -> Dict[str, float]:
    """
    Pool runs of one (n, method, target) cell as if their replicates were one run.

    Means are weighted by replicate count, so pooled miscoverage is the share of
    misses over all replicates. The MC SE combines the per-run SEs with the
    same weights.
    """
    if len(group) == 1:
        return {c: float(group[c].iloc[0]) for c in VALUE_COLUMNS}
    counts = group["replicates"].to_numpy(dtype=float)
    weights = counts / counts.sum()
    se = group["mc_se"].to_numpy(dtype=float)
    pooled = {c: float(weights @ group[c].to_numpy(dtype=float)) for c in MEAN_COLUMNS}
    pooled.update({c: float(group[c].sum()) for c in COUNT_COLUMNS})
    pooled["mc_se"] = float(np.sqrt(np.sum(weights ** 2 * se ** 2)))
    return pooled


def pool_reports(frames: Iterable[pd.DataFrame]) -> pd.DataFrame:
    """
    Merge report tables cell by cell, keeping each training size separate.

    Args:
        frames: Report tables in the REPORT_COLUMNS schema, for example several
            runs of one preset with disjoint seeds.

    Returns:
        One row per (n, method, target) in first-seen order, with summed
        replicate and failure counts and replicate-weighted means.
    """
    stacked = pd.concat(list(frames), ignore_index=True)
    records = []
    for (n, method, target), group in stacked.groupby(KEY_COLUMNS, sort=False, dropna=False):
        records.append({"n": n, "method": method, "target": target, **_pool_group(group)})
    frame = pd.DataFrame.from_records(records, columns=REPORT_COLUMNS)
    return frame.astype({c: "int64" for c in COUNT_COLUMNS})


def long_format(frame: pd.DataFrame) -> pd.DataFrame:
    """Tidy (n, method, target, quantity, value) table for external plotting"""
    return frame.melt(id_vars=KEY_COLUMNS, value_vars=VALUE_COLUMNS, var_name="quantity", value_name="value")
