"""
Worker pool for independent Monte Carlo units.

Each unit derives its own random streams from a SeedSpec, and results come
back in submission order, so the reduction is identical for any n_jobs.
BLAS is pinned to one thread per worker so floating point summation order
inside linear algebra calls does not vary either.
"""

import logging
from typing import Callable, List, Sequence, TypeVar

from joblib import Parallel, delayed, parallel_config
from threadpoolctl import threadpool_limits

logger = logging.getLogger(__name__)

U = TypeVar("U")
T = TypeVar("T")


def run_units(func: Callable[[U], T], units: Sequence[U], n_jobs: int = 1) -> List[T]:
    if n_jobs == 1 or len(units) <= 1:
        with threadpool_limits(limits=1):
            return [func(unit) for unit in units]

    logger.debug("Dispatching %d units to %d workers", len(units), n_jobs)
    with parallel_config(backend="loky", inner_max_num_threads=1):
        return Parallel(n_jobs=n_jobs)(delayed(func)(unit) for unit in units)
