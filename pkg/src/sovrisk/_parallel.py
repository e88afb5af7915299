"""Ordered parallel map used by the bootstrap and the simulation engine."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def effective_n_jobs(n_jobs):
    if n_jobs is None or n_jobs == 1:
        return 1
    if n_jobs < 0:
        return max(1, (os.cpu_count() or 1) + 1 + n_jobs)
    return int(n_jobs)


def ordered_map(fn, items, n_jobs=None):
    """``[fn(x) for x in items]``, optionally in worker processes.

    Results always come back in input order. ``fn`` must be picklable when
    ``n_jobs != 1``.
    """
    items = list(items)
    n = effective_n_jobs(n_jobs)
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    chunksize = max(1, len(items) // (4 * n))
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))
