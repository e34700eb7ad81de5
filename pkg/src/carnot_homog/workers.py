"""Deterministic task fan-out over a process pool.

Tasks are pure functions of picklable argument tuples; results are returned
in task order, so output never depends on worker count or scheduling.
Group objects hold closures and must be passed by registry name.
"""

from __future__ import annotations

import multiprocessing as mp
import os
from typing import Callable, Sequence


def default_workers() -> int:
    env = os.environ.get("CARNOT_HOMOG_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, min(2, os.cpu_count() or 1))


def pmap(fn: Callable, tasks: Sequence, workers: int | None = None) -> list:
    """Ordered parallel map; falls back to serial for a single worker."""
    if workers is None:
        workers = default_workers()
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    ctx = mp.get_context("fork")
    with ctx.Pool(processes=workers) as pool:
        return pool.map(fn, tasks, chunksize=1)
