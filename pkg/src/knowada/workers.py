"""Thread-pool helper shared by the pipeline stages."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Sequence[T], jobs: int = 1) -> list[R]:
    """Apply fn to every item, preserving input order.

    With jobs <= 1 this is a plain loop; otherwise a thread pool is used
    (the work is I/O-bound backend calls). Exceptions propagate to the
    caller, so per-item error tolerance belongs inside fn.
    """
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
