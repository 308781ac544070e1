import logging
from typing import Any, Dict

from core.alt_estimators import bootstrap_error, mallows_cp, rcp, split_estimate, split_interval
from core.cv_naive import cross_validate, default_interval
from core.dataset import Dataset, FittedModel, IntervalEstimate, load_csv
from core.fitters import PENALIZED, FitterSpec, penalty_grid, select_penalty_by_cv
from core.nested_cv import nested_cross_validate
from core.reports import to_json, write_json
from core.seeding import SeedSpec

from .config import Estimator, RunConfig
from .handlers import EXIT_OK, handle_errors

logger = logging.getLogger(__name__)


def _interval(interval: IntervalEstimate) -> Dict[str, Any]:
    return interval.model_dump(mode="json")


def _resolve_penalty(data: Dataset, spec: FitterSpec, K: int, seed: SeedSpec, config: RunConfig) -> FitterSpec:
    if spec.kind not in PENALIZED or spec.penalty is not None:
        return spec
    penalty = select_penalty_by_cv(data, spec, penalty_grid(data, spec), K, seed, loss=config.resolved_loss())
    logger.info("Selected penalty %.4g by %d-fold CV", penalty, K)
    return spec.with_penalty(penalty)


def _coefficients(model: FittedModel) -> Dict[str, Any]:
    return {"intercept": model.intercept, "coefficients": model.coefficients.tolist()}


def _alternatives(data: Dataset, spec: FitterSpec, config: RunConfig, seed: SeedSpec) -> Dict[str, Any]:
    loss = config.resolved_loss()
    results: Dict[str, Any] = {}
    for estimator in config.estimators:
        if estimator == Estimator.SPLIT:
            split = split_estimate(data, spec, loss, config.train_fraction, refit=True, seed=seed,
                                   literal_se=config.literal_split_se)
            results["split"] = {
                "point": split.err_split,
                "se": split.se_split,
                "holdout_size": int(split.holdout_rows.shape[0]),
                "interval": _interval(split_interval(split, config.alpha, use_vst=config.vst)),
                "refit": _coefficients(split.refit_model),
            }
        elif estimator in (Estimator.CP, Estimator.RCP):
            value = mallows_cp(data, config.intercept) if estimator == Estimator.CP else rcp(data, config.intercept)
            results[estimator.value] = {"point": value}
        elif estimator == Estimator.BOOTSTRAP:
            boot = bootstrap_error(data, spec, loss, B=config.bootstrap_B, seed=seed, n_jobs=config.threads)
            results["bootstrap"] = boot.model_dump(mode="json")
    return results


def estimate_payload(config: RunConfig) -> Dict[str, Any]:
    """Naive CV, nested CV and the requested alternative estimators on one dataset"""
    data = load_csv(config.data, config.response, config.task)
    loss = config.resolved_loss()
    seed = SeedSpec(master_seed=config.seed)
    ncv_config = config.ncv_config()
    spec = _resolve_penalty(data, config.fitter_spec(), ncv_config.K, seed, config)

    cv = cross_validate(data, spec, loss, ncv_config.K, seed)
    naive = default_interval(cv, config.alpha, use_vst=ncv_config.vst_for(loss))
    ncv = nested_cross_validate(data, spec, loss, ncv_config, seed)
    width_ratio = ncv.interval.width / naive.width if naive.width > 0 else None

    return {
        "config": config.echo(),
        "seed": config.seed,
        "n": data.n,
        "p": data.p,
        "loss": loss.value,
        "penalty": spec.penalty,
        "cv": {"point": cv.point, "naive_se": cv.naive_se, "interval": _interval(naive)},
        "ncv": {
            "point": ncv.err_ncv,
            "mse_hat": ncv.mse_hat,
            "bias_hat": ncv.bias_hat,
            "interval": _interval(ncv.interval),
            "width_ratio": width_ratio,
        },
        "estimators": _alternatives(data, spec, config, seed),
    }


@handle_errors
def cmd_estimate(config: RunConfig) -> int:
    payload = estimate_payload(config)
    print(to_json(payload))
    if config.output:
        write_json(payload, f"{config.output}.json")
    ratio = payload["ncv"]["width_ratio"]
    if ratio is not None:
        logger.info("NCV width / naive width = %.3f", ratio)
    return EXIT_OK
