"""Thread fan-out for the nogil kernels.

Work is cut into fixed-size chunks independent of the thread count, and each
chunk owns a disjoint output slice, so results never depend on scheduling.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

CHUNK = 1024


def default_threads() -> int:
    return os.cpu_count() or 1


def run_chunked(kernel, n_items: int, threads: int | None = None, chunk: int = CHUNK) -> None:
    """Call ``kernel(start, end)`` over ``[0, n_items)`` in chunks."""
    threads = default_threads() if threads is None else threads
    if threads < 1:
        raise ValueError("threads must be >= 1")
    bounds = [(s, min(s + chunk, n_items)) for s in range(0, n_items, chunk)]
    if threads == 1 or len(bounds) <= 1:
        for s, e in bounds:
            kernel(s, e)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for f in [pool.submit(kernel, s, e) for s, e in bounds]:
            f.result()
