import logging
from typing import Any, Dict, Optional, Tuple

import pandas as pd

from core.dataset import load_csv
from core.experiments import (
    CoverageReport,
    EstimandReport,
    RateScanResult,
    UnbiasednessReport,
    run_coverage_experiment,
    run_subsample_experiment,
)
from core.presets import PresetResult, get_preset, run_preset
from core.reports import (
    coverage_frame,
    long_format,
    rate_frame,
    series_frame,
    to_json,
    write_csv,
    write_json,
)
from core.seeding import SeedSpec

from .config import DEFAULT_REPLICATES, RunConfig
from .handlers import EXIT_OK, handle_errors

logger = logging.getLogger(__name__)


def _tables(result: PresetResult) -> Tuple[pd.DataFrame, Dict[str, Any]]:
    """CSV table and JSON body of any driver result"""
    if isinstance(result, CoverageReport):
        return coverage_frame(result), {"report": result.model_dump(mode="json")}
    if isinstance(result, list):
        return series_frame(result), {"series": [r.model_dump(mode="json") for r in result]}
    if isinstance(result, RateScanResult):
        return rate_frame(result), {"rate_scan": result.model_dump(mode="json")}
    if isinstance(result, EstimandReport):
        rows = pd.DataFrame.from_records([r.model_dump() for r in result.rows])
        return rows, {"estimand": result.model_dump(mode="json")}
    if isinstance(result, UnbiasednessReport):
        return pd.DataFrame.from_records([result.model_dump()]), {"unbiasedness": result.model_dump(mode="json")}
    raise TypeError(f"unexpected result {type(result).__name__}")


def _long_table(result: PresetResult) -> Optional[pd.DataFrame]:
    """Long-format coverage table with the training size, for plotting"""
    if isinstance(result, CoverageReport):
        return long_format(coverage_frame(result))
    if isinstance(result, list):
        return long_format(series_frame(result))
    return None


def simulate_result(config: RunConfig) -> PresetResult:
    seed = SeedSpec(master_seed=config.seed)
    if config.preset is not None:
        preset = get_preset(config.preset)
        return run_preset(preset, seed, replicates=config.replicates, alpha=config.alpha,
                          settings=config.coverage_settings(preset), n_grid=config.n_grid)

    replicates = config.replicates or DEFAULT_REPLICATES
    methods = set(config.methods)
    if config.dgp is not None:
        return run_coverage_experiment(config.dgp, methods, config.fitter_spec(), replicates, config.alpha,
                                       seed, config.coverage_settings())
    data = load_csv(config.data, config.response, config.task)
    return run_subsample_experiment(data, config.n_sub, methods, config.fitter_spec(), replicates,
                                    config.alpha, seed, config.coverage_settings())


def simulate_payload(config: RunConfig, result: PresetResult) -> Tuple[pd.DataFrame, Dict[str, Any]]:
    frame, body = _tables(result)
    return frame, {"config": config.echo(), "seed": config.seed, **body}


@handle_errors
def cmd_simulate(config: RunConfig) -> int:
    result = simulate_result(config)
    frame, payload = simulate_payload(config, result)
    logger.info("Simulation finished (seed %d, %d table rows)", config.seed, len(frame))
    print(to_json(payload))
    if config.output:
        write_json(payload, f"{config.output}.json")
        write_csv(frame, f"{config.output}.csv")
        long_table = _long_table(result)
        if long_table is not None:
            write_csv(long_table, f"{config.output}_long.csv")
    return EXIT_OK
