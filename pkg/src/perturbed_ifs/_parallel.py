"""Fixed-size replica chunking.

Replicas are always processed in chunks of ``CHUNK`` consecutive indices,
whatever the worker count, and results are reassembled in replica order.
Since every replica owns its own counter-based stream, the output bytes do
not depend on ``threads``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

R = TypeVar("R")

CHUNK = 4096


def spans(n: int, chunk: int = CHUNK) -> list[tuple[int, int]]:
    return [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]


def map_spans(fn: Callable[[int, int], R], n: int, threads: int = 1, chunk: int = CHUNK) -> list[R]:
    """``[fn(lo, hi) for each chunk]`` in chunk order, optionally threaded."""
    parts = spans(n, chunk)
    if threads <= 1 or len(parts) <= 1:
        return [fn(lo, hi) for lo, hi in parts]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda s: fn(*s), parts))
