"""Intra-place parallel patterns with worker-isolated state.

Every pattern splits the local elements into one contiguous partition per
worker, runs the partitions on the place's worker pool and, where partial
results exist, combines them in ascending worker order. A worker never sees
state created for another worker, so user reducers and accumulator blocks need
no synchronization.
"""

from __future__ import annotations

import abc
import threading
from typing import Any, Callable, Generic, Iterable, Sequence, TypeVar

from .ranges import LongRange, RangeError
from .runtime import FinishError, _local, _set_context, current

T = TypeVar("T")
A = TypeVar("A")


def default_workers() -> int:
    return current().workers


def run_partitions(parts: Sequence[Any], fn: Callable[[int, Any], Any]) -> list:
    """Run ``fn(worker, part)`` for every partition; results in worker order.

    Failures are collected and raised together once every worker stopped.
    """
    st = current()
    fin = getattr(_local, "finish", None)
    n = len(parts)
    if n == 0:
        return []
    if n == 1:
        prev = getattr(_local, "worker", None)
        _local.worker = 0
        try:
            return [fn(0, parts[0])]
        finally:
            _local.worker = prev

    def wrapped(k, part):
        _set_context(st, fin, k)
        try:
            return fn(k, part)
        finally:
            _set_context(None)

    futures = [st.pool().submit(wrapped, k, part) for k, part in enumerate(parts)]
    results, errors = [], []
    for f in futures:
        try:
            results.append(f.result())
        except BaseException as e:
            errors.append(e)
            results.append(None)
    if errors:
        raise FinishError(errors)
    return results


def split_sequence(items: Sequence[T], n: int) -> list[Sequence[T]]:
    """Contiguous near-equal slices of ``items``."""
    q, r = divmod(len(items), n)
    out, lo = [], 0
    for k in range(n):
        hi = lo + q + (1 if k < r else 0)
        out.append(items[lo:hi])
        lo = hi
    return out


class Reducer(abc.ABC, Generic[T]):
    """User fold state for parallel and teamed reductions.

    Subclasses implement :meth:`new_reducer`, :meth:`reduce` and :meth:`merge`.
    The library hands every worker its own fresh instance, so implementations
    need not be thread-safe.
    """

    @abc.abstractmethod
    def new_reducer(self) -> Reducer[T]:
        ...

    @abc.abstractmethod
    def reduce(self, item: T) -> None:
        ...

    @abc.abstractmethod
    def merge(self, other: Reducer[T]) -> None:
        ...


def reduce_partitions(parts: Sequence[Iterable[T]], reducer: Reducer[T]) -> Reducer[T]:
    def fold(_k, part):
        r = reducer.new_reducer()
        for item in part:
            r.reduce(item)
        return r

    for partial in run_partitions(parts, fold):
        reducer.merge(partial)
    return reducer


def for_each_partitions(parts: Sequence[Iterable[T]], body: Callable[[T], None]) -> None:
    def run(_k, part):
        for item in part:
            body(item)

    run_partitions(parts, run)


def to_bag_partitions(parts: Sequence[Iterable[T]], body: Callable[[T, Callable], None], out) -> None:
    """Producer/receiver: each worker gets its own receiving list in ``out``."""

    def run(_k, part):
        sink = out._new_receiver()
        for item in part:
            body(item, sink.append)

    run_partitions(parts, run)


# -- accumulators -------------------------------------------------------------


class WorkerAccumulator(Generic[A]):
    """Index-addressed store dedicated to one worker (a "thread-local accumulator")."""

    def __init__(self, owner: Accumulator[A], worker: int):
        self._owner = owner
        self.worker = worker
        self.workers_seen: set[int] | None = set() if owner.instrument else None
        if owner.complete:
            rng = owner.covered
            self._dense: list[A] | None = [owner.factory(i) for i in range(rng.start, rng.end)]
            self._sparse: dict[int, A] | None = None
        else:
            self._dense = None
            self._sparse = {}

    def get(self, i: int) -> A:
        own = self._owner
        if self.workers_seen is not None:
            self.workers_seen.add(getattr(_local, "worker", None))
        if own.consumed:
            raise RuntimeError("accumulator was already accepted; call reset() before reusing it")
        lo = own.covered.start
        if self._dense is not None:
            k = i - lo
            if k < 0 or i >= own.covered.end:
                raise RangeError(f"index {i} outside accumulator range {own.covered}")
            return self._dense[k]
        a = self._sparse.get(i)
        if a is None:
            if i not in own.covered:
                raise RangeError(f"index {i} outside accumulator range {own.covered}")
            a = self._sparse[i] = own.factory(i)
        return a

    __getitem__ = get

    def indices(self, rng: LongRange) -> Iterable[int]:
        if self._dense is not None:
            r = rng.intersection(self._owner.covered)
            return range(r.start, r.end) if r else range(0)
        return sorted(i for i in self._sparse if i in rng)

    def peek(self, i: int) -> A | None:
        if self._dense is not None:
            return self._dense[i - self._owner.covered.start]
        return self._sparse.get(i)


class Accumulator(Generic[A]):
    """Factory of per-worker accumulation blocks over ``covered``.

    ``complete=True`` allocates, per worker, one object for every index of the
    covered range as soon as the worker's block is first requested;
    ``complete=False`` creates objects only for indices actually touched.
    """

    def __init__(self, covered: LongRange, factory: Callable[[int], A], complete: bool = False,
                 instrument: bool = False):
        self.covered = covered
        self.factory = factory
        self.complete = complete
        self.instrument = instrument
        self.consumed = False
        self._blocks: dict[int, WorkerAccumulator[A]] = {}
        self._lock = threading.Lock()

    def block(self, worker: int) -> WorkerAccumulator[A]:
        b = self._blocks.get(worker)
        if b is None:
            with self._lock:
                b = self._blocks.get(worker)
                if b is None:
                    b = self._blocks[worker] = WorkerAccumulator(self, worker)
        return b

    def blocks(self) -> list[WorkerAccumulator[A]]:
        return [self._blocks[k] for k in sorted(self._blocks)]

    def reset(self) -> None:
        self._blocks.clear()
        self.consumed = False


class AccumulatorCompleteRange(Accumulator[A]):
    def __init__(self, covered: LongRange, factory: Callable[[int], A], instrument: bool = False):
        super().__init__(covered, factory, complete=True, instrument=instrument)


class AccumulatorSparse(Accumulator[A]):
    def __init__(self, covered: LongRange, factory: Callable[[int], A], instrument: bool = False):
        super().__init__(covered, factory, complete=False, instrument=instrument)


def accept_ranges(get_elem: Callable[[int], T], spans: Sequence[LongRange], acc: Accumulator[A],
                  body: Callable[[T, A], None]) -> None:
    """Apply ``body(element, block_value)`` per index, blocks in worker order.

    Each partition of ``spans`` is a range or a list of ranges.
    """
    if acc.consumed:
        raise RuntimeError("accumulator was already accepted; call reset() before reusing it")
    blocks = acc.blocks()

    def run(_k, span):
        for sp in span if isinstance(span, list) else [span]:
            for b in blocks:
                for i in b.indices(sp):
                    a = b.peek(i)
                    if a is not None:
                        body(get_elem(i), a)

    run_partitions(spans, run)
    acc.consumed = True
