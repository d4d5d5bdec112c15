"""Order-preserving map over a worker pool."""

from __future__ import annotations

from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from typing import Literal, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(
    fn: Callable[[T], R],
    items: Iterable[T],
    workers: int = 1,
    kind: Literal["thread", "process"] = "thread",
) -> list[R]:
    """Apply ``fn`` to every item and return results in input order.

    ``workers <= 1`` runs inline. Results never depend on the worker count
    because each item is computed independently and collected by position.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    executor_cls = ProcessPoolExecutor if kind == "process" else ThreadPoolExecutor
    with executor_cls(max_workers=workers) as executor:
        return list(executor.map(fn, items))


def chunked(indices: Sequence[int], n_chunks: int) -> list[list[int]]:
    """Split ``indices`` into at most ``n_chunks`` contiguous blocks."""
    n_chunks = max(1, min(n_chunks, len(indices)))
    size, extra = divmod(len(indices), n_chunks)
    blocks, start = [], 0
    for k in range(n_chunks):
        stop = start + size + (1 if k < extra else 0)
        blocks.append(list(indices[start:stop]))
        start = stop
    return blocks
