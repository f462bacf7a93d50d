from __future__ import annotations

from typing import Callable, Generic, TypeVar

from ..parallel import Accumulator, accept_ranges
from ..ranges import Chunk, ChunkedList, LongRange, RangeError
from ..runtime import current
from .base import CODEC_CHUNKS, DistHandle, Team
from .local import LocalOps

T = TypeVar("T")


def _span_items(span):
    for c, lo, hi in span:
        s = c.range.start
        for k in range(lo, hi):
            yield s + k, c.data[k]


def _span_values(span):
    for c, lo, hi in span:
        yield from c.data[lo:hi]


class DistChunkedList(LocalOps, DistHandle, Generic[T]):
    """Distributed list of index-addressed chunks.

    Each place holds a :class:`ChunkedList`; element indices are global, so
    relocating a range keeps every element's index.
    """

    _codec = CODEC_CHUNKS

    def __init__(self, group=None):
        DistHandle.__init__(self, group)

    def _init_local(self) -> None:
        self._list: ChunkedList = ChunkedList()

    # -- local operations ----------------------------------------------

    def add_chunk(self, chunk: Chunk[T] | LongRange, data: list[T] | None = None) -> Chunk[T]:
        c = self._list.add_chunk(chunk, data)
        self._on_arrive(c.range)
        return c

    def remove_chunk(self, rng: LongRange) -> Chunk[T]:
        c = self._list.remove_chunk(rng)
        self._on_depart(rng)
        return c

    def _on_arrive(self, r: LongRange) -> None:
        pass

    def _on_depart(self, r: LongRange) -> None:
        pass

    def __len__(self) -> int:
        return len(self._list)

    def __iter__(self):
        return iter(self._list)

    def __contains__(self, i: int) -> bool:
        return i in self._list

    def __getitem__(self, i: int) -> T:
        return self._list[i]

    def __setitem__(self, i: int, v: T) -> None:
        self._list[i] = v

    def get(self, i: int) -> T:
        return self._list[i]

    def items(self, rng: LongRange | None = None):
        return self._list.items(rng)

    def ranges(self) -> list[LongRange]:
        return self._list.ranges()

    def coalesced_ranges(self) -> list[LongRange]:
        return self._list.coalesced_ranges()

    def chunks(self) -> list[Chunk[T]]:
        return self._list.chunks()

    def view(self, rng: LongRange):
        return self._list.view(rng)

    def split_chunk(self, rng: LongRange) -> None:
        self._list.split_chunk(rng)

    @property
    def local(self) -> ChunkedList:
        return self._list

    def team(self) -> Team:
        return Team(self)

    # -- parallel patterns ---------------------------------------------

    def _version(self) -> int:
        return self._list.version

    def _entries(self):
        return iter(self._list)

    def _parts(self, n: int) -> list:
        return [list(_span_values(s)) for s in self._list.index_partition(n)]

    def parallel_for_each_indexed(self, body: Callable[[int, T], None], workers: int | None = None) -> None:
        from ..parallel import run_partitions

        spans = self._list.index_partition(self._workers(workers))

        def run(_k, span):
            for i, v in _span_items(span):
                body(i, v)

        self._guarded(lambda: run_partitions(spans, run))

    def parallel_accept(self, acc: Accumulator, body: Callable, workers: int | None = None) -> None:
        """Apply every worker block of ``acc`` to the matching local elements.

        ``body(element, value)`` runs once per (index, block) pair; for a given
        index blocks are visited in ascending worker order.
        """
        spans = []
        for span in self._list.index_partition(self._workers(workers)):
            spans.append([LongRange(c.range.start + lo, c.range.start + hi) for c, lo, hi in span])
        self._guarded(lambda: accept_ranges(self._list.__getitem__, spans, acc, body))

    # -- relocation ------------------------------------------------------

    def move_range_at_sync(self, r: LongRange, dest, mm) -> None:
        if r.empty:
            return
        missing = self._list._first_missing(r)
        if missing is not None:
            raise RangeError(f"cannot move {r}: index {missing} is not held on place({current().id})")
        for s in mm.staged_specs(self):
            if s.overlaps(r):
                raise RangeError(f"{r} overlaps range {s} already staged")
        mm.stage(self, dest, r)

    def move_at_sync_count(self, n: int, dest, mm) -> list[LongRange]:
        """Stage ``n`` entries for ``dest``, taken from the highest held indices."""
        from ..relocation import InsufficientEntriesError, IntervalSet

        if n < 0:
            raise ValueError("negative count")
        if n == 0:
            return []
        free = IntervalSet(self._list.coalesced_ranges())
        for s in mm.staged_specs(self):
            free.subtract(s)
        runs = free.runs()
        avail = sum(r.size for r in runs)
        if n > avail:
            raise InsufficientEntriesError(
                f"cannot move {n} entries: handle on place({current().id}) has {avail} unstaged entries"
            )
        picked = []
        for r in reversed(runs):
            if n == 0:
                break
            k = min(n, r.size)
            picked.append(LongRange(r.end - k, r.end))
            n -= k
        picked.reverse()
        for r in picked:
            mm.stage(self, dest, r)
        return picked

    def _reloc_prepare(self, by_dest: dict[int, list[LongRange]]):
        allr = sorted(r for rs in by_dest.values() for r in rs)
        for a, b in zip(allr, allr[1:]):
            if a.overlaps(b):
                raise RangeError(f"staged ranges {a} and {b} overlap")
        out = {}
        for d in sorted(by_dest):
            out[d] = [(r, [v for _, v in self._list.items(r)]) for r in sorted(by_dest[d])]

        def commit():
            for r in allr:
                self._list.take_range(r)
                self._on_depart(r)

        return out, commit

    def _reloc_insert(self, entries: list[tuple[LongRange, list]]) -> None:
        for r, data in entries:
            self._list.add_chunk(Chunk(r, data))
            self._on_arrive(r)


class DistCol(DistChunkedList[T]):
    """Chunked list whose global distribution is tracked on every place.

    Ownership changes are logged locally; :meth:`update_dist` exchanges only
    those logs and folds them into every place's record.
    """

    def _init_local(self) -> None:
        from ..relocation import DeltaLog, LongRangeDistribution

        super()._init_local()
        self._delta = DeltaLog()
        self._dist = LongRangeDistribution()
        self.last_update_bytes = 0

    def _on_arrive(self, r: LongRange) -> None:
        self._delta.arrive(r)

    def _on_depart(self, r: LongRange) -> None:
        self._delta.depart(r)

    def update_dist(self) -> None:
        """Bring every member's distribution record up to date (teamed)."""
        from .tracking import exchange_deltas

        self.last_update_bytes = exchange_deltas(self.group, self._delta, self._dist)

    def get_distribution(self):
        return self._dist.copy()

    def relocate_ranges(self, dist, mm=None) -> None:
        """Move held indices to the owners ``dist`` assigns them (teamed)."""
        from ..relocation import CollectiveMoveManager, UncoveredKeyError

        own = mm is None
        if own:
            mm = CollectiveMoveManager(self.group)
        here = current().place
        uncovered = []
        moves: list[tuple[LongRange, object]] = []
        for r in self._list.coalesced_ranges():
            i = r.start
            while i < r.end:
                p = dist.lookup(i)
                if p is None:
                    uncovered.append(i)
                    i += 1
                    continue
                rec = next(x for x, q in dist.items() if i in x)
                hi = min(rec.end, r.end)
                if p != here:
                    moves.append((LongRange(i, hi), p))
                i = hi
        if uncovered:
            mm.fail(UncoveredKeyError(uncovered))
        else:
            for r, p in moves:
                mm.stage(self, p, r)
        if own:
            mm.sync()

