"""Thread-count control.

``VPE_THREADS`` caps both the row-chunk worker pool used by the sparse
kernels and the BLAS pool underneath numpy.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import numpy as np
from threadpoolctl import threadpool_limits

_override: int | None = None
log = logging.getLogger(__name__)


def num_threads() -> int:
    if _override is not None:
        return _override
    raw = os.environ.get("VPE_THREADS", "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError:
            log.warning("ignoring VPE_THREADS=%r (not an integer); using 1 thread", raw)
            n = 1
        return max(1, n)
    return max(1, os.cpu_count() or 1)


@contextmanager
def thread_limit(n: int | None = None):
    """Apply the thread cap for the duration of the block."""
    global _override
    prev = _override
    n = num_threads() if n is None else max(1, int(n))
    _override = n
    try:
        with threadpool_limits(limits=n):
            yield n
    finally:
        _override = prev


def map_row_chunks(fn, n_rows: int, min_chunk: int = 4096) -> list:
    """Call ``fn(start, stop)`` over disjoint row ranges and return results in order."""
    workers = num_threads()
    if workers == 1 or n_rows <= min_chunk:
        return [fn(0, n_rows)]
    n_chunks = min(workers, -(-n_rows // min_chunk))
    bounds = np.linspace(0, n_rows, n_chunks + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
        return [f.result() for f in futures]
