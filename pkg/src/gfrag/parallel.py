"""Deterministic replicate-parallel execution.

Replicates are cut into chunks of a fixed size that does not depend on the
worker count; chunk ``i`` of experiment ``name`` always draws from the same
counter-based stream. Results are collected in chunk order, so the aggregate
is identical for any number of workers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

from .rng import chunk_stream

DEFAULT_CHUNK = 2000


class WorkerError(RuntimeError):
    def __init__(self, index, cause):
        super().__init__(f"replicate {index} failed: {cause!r}")
        self.index = index


def worker_count(requested: int | None = None) -> int:
    """Requested workers, capped by the GFRAG_THREADS environment variable."""
    n = requested if requested is not None else (os.cpu_count() or 1)
    cap = os.environ.get("GFRAG_THREADS")
    if cap:
        n = min(n, int(cap))
    return max(1, int(n))


def _call(worker, index, item):
    try:
        return worker(item)
    except Exception as exc:  # re-raised with the replicate id
        raise WorkerError(index, exc) from exc


def parallel_map(items: Sequence, worker: Callable, reducer: Callable | None = None,
                 workers: int | None = None):
    """Map ``worker`` over ``items`` and reduce the results in input order.

    ``worker`` must be picklable when more than one worker is used. With no
    reducer the ordered list of results is returned.
    """
    items = list(items)
    if not items:
        return [] if reducer is None else reducer([])
    nw = min(worker_count(workers), len(items))
    if nw == 1:
        results = [_call(worker, i, it) for i, it in enumerate(items)]
    else:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            futs = [pool.submit(_call, worker, i, it) for i, it in enumerate(items)]
            results = [f.result() for f in futs]
    return results if reducer is None else reducer(results)


def compensated_sum(values) -> float:
    return math.fsum(float(v) for v in values)


def chunks(reps: int, chunk: int = DEFAULT_CHUNK) -> list[tuple[int, int]]:
    """(index, size) of each fixed-size chunk covering ``reps`` replicates."""
    out = []
    i = 0
    while reps > 0:
        size = min(chunk, reps)
        out.append((i, size))
        reps -= size
        i += 1
    return out


class _ChunkTask:
    def __init__(self, fn, seed, name):
        self.fn, self.seed, self.name = fn, seed, name

    def __call__(self, job):
        index, size = job
        return self.fn(size, chunk_stream(self.seed, self.name, index))


def run_replicates(fn: Callable, reps: int, seed: int, name: str,
                   chunk: int = DEFAULT_CHUNK, workers: int | None = None) -> list:
    """Run ``fn(size, rng)`` on every chunk; returns per-chunk results in order."""
    return parallel_map(chunks(reps, chunk), _ChunkTask(fn, seed, name), workers=workers)


def concat_field(results, attr):
    return np.concatenate([getattr(r, attr) if attr else r for r in results])
