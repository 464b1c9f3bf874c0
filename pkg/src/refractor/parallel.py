"""Deterministic chunked execution of per-node work.

REFRACTOR_THREADS caps the worker count (0 or unset = auto). Work is split
into fixed-size chunks whose boundaries do not depend on the worker count,
and per-chunk results are reduced in chunk order, so outputs are bitwise
identical whatever the parallelism.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

CHUNK = 65536


def worker_count() -> int:
    raw = os.environ.get("REFRACTOR_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"REFRACTOR_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise ValueError("REFRACTOR_THREADS must be >= 0")
    if n == 0:
        return os.cpu_count() or 1
    return n


def chunk_slices(n: int):
    return [slice(s, min(s + CHUNK, n)) for s in range(0, n, CHUNK)]


def map_chunks(fn, n: int) -> list:
    """Apply fn(slice) to fixed chunks of range(n); results in chunk order."""
    slices = chunk_slices(n)
    workers = worker_count()
    if workers <= 1 or len(slices) <= 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, slices))
