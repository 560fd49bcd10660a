"""Goroutine-style work pool used by sweeps, probes and the grid search.

A lazily started global :class:`Runtime` wraps a ``ThreadPoolExecutor``.
numpy releases the GIL inside its kernels, so independent trainings and
grid-search rows overlap well even on a GIL build, and scale with cores on
free-threaded Python (3.13t+).

Results are always collected in submission order: callers never observe
completion order, which keeps every parallel reduction deterministic.

Example:
    from fairlens.runtime import GoGroup, parallel_map

    accs = parallel_map(probe_one, models, workers=4)   # ordered like models

    with GoGroup(limit=2) as g:
        futures = [g.go(train, ds, cfg) for cfg in configs]
    models = [f.result() for f in futures]

"""

from __future__ import annotations

import atexit
import os
import threading
from collections.abc import Callable, Iterable
from concurrent.futures import Future, ThreadPoolExecutor
from typing import Any, TypeVar

__all__ = [
    "Runtime",
    "get_runtime",
    "GoGroup",
    "parallel_map",
]

T = TypeVar("T")
R = TypeVar("R")


class Runtime:
    """A started-on-demand thread pool."""

    __slots__ = ("_num_workers", "_executor", "_lock")

    def __init__(self, num_workers: int | None = None) -> None:
        if num_workers is None:
            num_workers = os.cpu_count() or 4
        if num_workers < 1:
            raise ValueError("num_workers must be positive")
        self._num_workers = num_workers
        self._executor: ThreadPoolExecutor | None = None
        self._lock = threading.Lock()

    @property
    def started(self) -> bool:
        return self._executor is not None

    def start(self) -> None:
        with self._lock:
            if self._executor is None:
                self._executor = ThreadPoolExecutor(
                    max_workers=self._num_workers,
                    thread_name_prefix="fairlens-",
                )

    def shutdown(self, wait: bool = True) -> None:
        with self._lock:
            if self._executor is not None:
                self._executor.shutdown(wait=wait, cancel_futures=True)
                self._executor = None

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
        """Ordered parallel map."""
        self.start()
        assert self._executor is not None
        return list(self._executor.map(fn, items))

    @property
    def num_workers(self) -> int:
        return self._num_workers


_runtime: Runtime | None = None
_runtime_lock = threading.Lock()


def get_runtime() -> Runtime:
    """Get or create the global runtime instance."""
    global _runtime
    if _runtime is None:
        with _runtime_lock:
            if _runtime is None:
                _runtime = Runtime()
    return _runtime


@atexit.register
def _shutdown_runtime() -> None:
    with _runtime_lock:
        if _runtime is not None:
            _runtime.shutdown()


class GoGroup:
    """Context manager over a private pool of ``limit`` threads.

    Leaving the block waits for every task spawned with :meth:`go`.
    """

    __slots__ = ("_executor",)

    def __init__(self, limit: int):
        if limit < 1:
            raise ValueError("limit must be positive")
        self._executor = ThreadPoolExecutor(
            max_workers=limit, thread_name_prefix="fairlens-group-"
        )

    def go(self, fn: Callable[..., T], *args: Any, **kwargs: Any) -> Future[T]:
        return self._executor.submit(fn, *args, **kwargs)

    def go_map(self, fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
        return list(self._executor.map(fn, items))

    def __enter__(self) -> GoGroup:
        return self

    def __exit__(self, *args: object) -> None:
        self._executor.shutdown(wait=True)


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> list[R]:
    """Apply fn to each item, preserving order.

    ``workers=1`` runs inline on the calling thread; ``None`` uses the global
    runtime; any other value uses a private pool of that size.
    """
    items_list = list(items)
    if workers == 1 or len(items_list) <= 1:
        return [fn(item) for item in items_list]
    if workers is None:
        return get_runtime().map(fn, items_list)
    with GoGroup(limit=workers) as g:
        return g.go_map(fn, items_list)
