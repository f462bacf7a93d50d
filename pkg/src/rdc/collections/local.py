"""Sequential and parallel operations shared by every local handle."""

from __future__ import annotations

import os
from typing import Callable

from ..parallel import Reducer, for_each_partitions, reduce_partitions, split_sequence, to_bag_partitions
from ..runtime import current

DEBUG = bool(os.environ.get("RDC_DEBUG"))


class LocalOps:
    """Mixin: subclasses provide ``_parts(n)``, a contiguous split of local entries.

    Map-like collections set ``_pairs = True`` so that bodies receive
    ``(key, value)`` as two arguments.
    """

    _pairs = False

    def _parts(self, n: int) -> list:
        items = list(self._entries())
        return split_sequence(items, n)

    def _entries(self):
        raise NotImplementedError

    def _version(self) -> int:
        return 0

    def _workers(self, workers: int | None) -> int:
        return workers if workers is not None else current().workers

    def _guarded(self, fn):
        before = self._version()
        out = fn()
        if DEBUG and self._version() != before:
            raise RuntimeError(f"{type(self).__name__} was structurally modified during a parallel region")
        return out

    def for_each(self, body: Callable) -> None:
        if self._pairs:
            for k, v in self._entries():
                body(k, v)
        else:
            for e in self._entries():
                body(e)

    def reduce(self, reducer: Reducer) -> Reducer:
        for e in self._entries():
            reducer.reduce(e)
        return reducer

    def parallel_for_each(self, body: Callable, workers: int | None = None) -> None:
        fn = (lambda kv: body(*kv)) if self._pairs else body
        parts = self._parts(self._workers(workers))
        self._guarded(lambda: for_each_partitions(parts, fn))

    def parallel_reduce(self, reducer: Reducer, workers: int | None = None) -> Reducer:
        parts = self._parts(self._workers(workers))
        return self._guarded(lambda: reduce_partitions(parts, reducer))

    def parallel_to_bag(self, body: Callable, out, workers: int | None = None) -> None:
        """Apply ``body(entry, collector)``; values given to ``collector`` land in ``out``."""
        fn = (lambda kv, sink: body(kv[0], kv[1], sink)) if self._pairs else body
        parts = self._parts(self._workers(workers))
        self._guarded(lambda: to_bag_partitions(parts, fn, out))
