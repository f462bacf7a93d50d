"""Long-index ranges, chunks and the chunked list substrate."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Any, Callable, Generic, Iterable, Iterator, TypeVar

T = TypeVar("T")


class RangeError(ValueError):
    """Raised when an index range is not held, overlaps, or is malformed."""


@dataclass(frozen=True, order=True)
class LongRange:
    """Half-open interval ``[start, end)`` of 64-bit indices."""

    start: int
    end: int

    def __post_init__(self):
        if self.start > self.end:
            raise RangeError(f"inverted range [{self.start},{self.end})")

    @property
    def size(self) -> int:
        return self.end - self.start

    def __len__(self) -> int:
        return self.end - self.start

    @property
    def empty(self) -> bool:
        return self.start == self.end

    def __contains__(self, i: int) -> bool:
        return self.start <= i < self.end

    def __iter__(self) -> Iterator[int]:
        return iter(range(self.start, self.end))

    def contains_range(self, other: LongRange) -> bool:
        return self.start <= other.start and other.end <= self.end

    def overlaps(self, other: LongRange) -> bool:
        return self.start < other.end and other.start < self.end

    def intersection(self, other: LongRange) -> LongRange | None:
        lo, hi = max(self.start, other.start), min(self.end, other.end)
        return LongRange(lo, hi) if lo < hi else None

    def split(self, n: int) -> list[LongRange]:
        """Cut into ``n`` contiguous near-equal sub-ranges (larger ones first)."""
        if n < 1:
            raise ValueError("n must be >= 1")
        q, r = divmod(self.size, n)
        out, lo = [], self.start
        for k in range(n):
            hi = lo + q + (1 if k < r else 0)
            out.append(LongRange(lo, hi))
            lo = hi
        return out

    def __repr__(self) -> str:
        return f"[{self.start},{self.end})"


class Chunk(Generic[T]):
    """Dense array of elements mapped from a contiguous index range."""

    __slots__ = ("range", "data")

    def __init__(self, rng: LongRange, data: list[T] | None = None):
        if data is None:
            data = [None] * rng.size
        elif len(data) != rng.size:
            raise RangeError(f"chunk {rng} needs {rng.size} elements, got {len(data)}")
        self.range = rng
        self.data = data

    def __getitem__(self, i: int) -> T:
        return self.data[i - self.range.start]

    def __setitem__(self, i: int, v: T) -> None:
        self.data[i - self.range.start] = v

    def __len__(self) -> int:
        return len(self.data)

    def items(self) -> Iterator[tuple[int, T]]:
        return zip(range(self.range.start, self.range.end), self.data)

    def __getstate__(self):
        return (self.range, self.data)

    def __setstate__(self, state):
        self.range, self.data = state

    def __repr__(self) -> str:
        return f"Chunk{self.range}"


class RangedListView(Generic[T]):
    """Read-only window onto ``[range.start, range.end)`` of a chunked list."""

    __slots__ = ("_owner", "range")

    def __init__(self, owner: ChunkedList[T], rng: LongRange):
        self._owner = owner
        self.range = rng

    def __len__(self) -> int:
        return self.range.size

    def __getitem__(self, i: int) -> T:
        if i not in self.range:
            raise IndexError(i)
        return self._owner[i]

    def items(self) -> Iterator[tuple[int, T]]:
        return self._owner.items(self.range)

    def __iter__(self) -> Iterator[T]:
        for _, v in self._owner.items(self.range):
            yield v

    def sub(self, rng: LongRange) -> RangedListView[T]:
        if not self.range.contains_range(rng):
            raise RangeError(f"{rng} outside view {self.range}")
        return RangedListView(self._owner, rng)


class ChunkedList(Generic[T]):
    """Elements stored in disjoint chunks, iterated in ascending index order.

    Chunks are kept in a sorted list of start indices; lookup of an index is a
    predecessor search over those starts.
    """

    def __init__(self, chunks: Iterable[Chunk[T]] = ()):
        self._starts: list[int] = []
        self._chunks: dict[int, Chunk[T]] = {}
        self._size = 0
        self.version = 0
        for c in chunks:
            self.add_chunk(c)

    # -- structure -----------------------------------------------------

    def add_chunk(self, chunk: Chunk[T] | LongRange, data: list[T] | None = None) -> Chunk[T]:
        if isinstance(chunk, LongRange):
            chunk = Chunk(chunk, data)
        r = chunk.range
        if r.empty:
            return chunk
        k = bisect.bisect_left(self._starts, r.start)
        if k > 0:
            prev = self._chunks[self._starts[k - 1]]
            if prev.range.end > r.start:
                raise RangeError(f"{r} overlaps existing chunk {prev.range}")
        if k < len(self._starts) and self._starts[k] < r.end:
            raise RangeError(f"{r} overlaps existing chunk {self._chunks[self._starts[k]].range}")
        self._starts.insert(k, r.start)
        self._chunks[r.start] = chunk
        self._size += r.size
        self.version += 1
        return chunk

    def remove_chunk(self, rng: LongRange) -> Chunk[T]:
        c = self._chunks.get(rng.start)
        if c is None or c.range != rng:
            raise RangeError(f"no chunk exactly at {rng}")
        del self._chunks[rng.start]
        self._starts.remove(rng.start)
        self._size -= rng.size
        self.version += 1
        return c

    def _chunk_index(self, i: int) -> int:
        k = bisect.bisect_right(self._starts, i) - 1
        if k < 0 or i >= self._chunks[self._starts[k]].range.end:
            return -1
        return k

    def _first_missing(self, rng: LongRange) -> int | None:
        i = rng.start
        while i < rng.end:
            k = self._chunk_index(i)
            if k < 0:
                return i
            i = self._chunks[self._starts[k]].range.end
        return None

    def contains_range(self, rng: LongRange) -> bool:
        return self._first_missing(rng) is None

    def split_at(self, i: int) -> None:
        """Ensure a chunk boundary exists at index ``i`` (no-op in a gap)."""
        k = self._chunk_index(i)
        if k < 0:
            return
        c = self._chunks[self._starts[k]]
        if c.range.start == i:
            return
        off = i - c.range.start
        left = Chunk(LongRange(c.range.start, i), c.data[:off])
        right = Chunk(LongRange(i, c.range.end), c.data[off:])
        self._chunks[left.range.start] = left
        self._chunks[i] = right
        self._starts.insert(k + 1, i)
        self.version += 1

    def split_chunk(self, rng: LongRange) -> None:
        """Place chunk boundaries exactly at ``rng.start`` and ``rng.end``."""
        missing = self._first_missing(rng)
        if missing is not None:
            raise RangeError(f"index {missing} of {rng} is not held")
        if rng.empty:
            return
        self.split_at(rng.start)
        self.split_at(rng.end)

    def take_range(self, rng: LongRange) -> list[Chunk[T]]:
        """Split at the bounds of ``rng`` and detach every chunk inside it."""
        self.split_chunk(rng)
        if rng.empty:
            return []
        out = []
        k = bisect.bisect_left(self._starts, rng.start)
        while k < len(self._starts) and self._starts[k] < rng.end:
            out.append(self._chunks[self._starts[k]])
            k += 1
        for c in out:
            self.remove_chunk(c.range)
        return out

    def ranges(self) -> list[LongRange]:
        return [self._chunks[s].range for s in self._starts]

    def chunks(self) -> list[Chunk[T]]:
        return [self._chunks[s] for s in self._starts]

    def coalesced_ranges(self) -> list[LongRange]:
        """Held ranges with adjacent chunks merged."""
        out: list[LongRange] = []
        for r in self.ranges():
            if out and out[-1].end == r.start:
                out[-1] = LongRange(out[-1].start, r.end)
            else:
                out.append(r)
        return out

    def clear(self) -> None:
        self._starts.clear()
        self._chunks.clear()
        self._size = 0
        self.version += 1

    # -- element access ------------------------------------------------

    def __len__(self) -> int:
        return self._size

    def __contains__(self, i: int) -> bool:
        return self._chunk_index(i) >= 0

    def __getitem__(self, i: int) -> T:
        k = self._chunk_index(i)
        if k < 0:
            raise IndexError(f"index {i} not held")
        return self._chunks[self._starts[k]][i]

    def __setitem__(self, i: int, v: T) -> None:
        k = self._chunk_index(i)
        if k < 0:
            raise IndexError(f"index {i} not held")
        self._chunks[self._starts[k]][i] = v

    get = __getitem__

    def __iter__(self) -> Iterator[T]:
        for s in self._starts:
            yield from self._chunks[s].data

    def items(self, rng: LongRange | None = None) -> Iterator[tuple[int, T]]:
        if rng is None:
            for s in self._starts:
                yield from self._chunks[s].items()
            return
        i = rng.start
        while i < rng.end:
            k = self._chunk_index(i)
            if k < 0:
                raise RangeError(f"index {i} of {rng} is not held")
            c = self._chunks[self._starts[k]]
            hi = min(c.range.end, rng.end)
            off = c.range.start
            for j in range(i, hi):
                yield j, c.data[j - off]
            i = hi

    def view(self, rng: LongRange) -> RangedListView[T]:
        missing = self._first_missing(rng)
        if missing is not None:
            raise RangeError(f"index {missing} of {rng} is not held")
        return RangedListView(self, rng)

    def index_partition(self, n: int) -> list[list[tuple[Chunk[T], int, int]]]:
        """Split held elements into ``n`` contiguous spans of near-equal size.

        Each span is a list of ``(chunk, lo_offset, hi_offset)`` slices so that
        spans may cross chunk boundaries.
        """
        total = self._size
        q, r = divmod(total, n)
        sizes = [q + (1 if k < r else 0) for k in range(n)]
        parts: list[list[tuple[Chunk[T], int, int]]] = [[] for _ in range(n)]
        w, need = 0, sizes[0] if n else 0
        for s in self._starts:
            c = self._chunks[s]
            off = 0
            while off < len(c.data):
                while need == 0 and w < n - 1:
                    w += 1
                    need = sizes[w]
                take = min(need, len(c.data) - off)
                parts[w].append((c, off, off + take))
                off += take
                need -= take
        return parts

    def map_values(self, fn: Callable[[T], Any]) -> ChunkedList:
        return ChunkedList(Chunk(c.range, [fn(v) for v in c.data]) for c in self.chunks())

    def __repr__(self) -> str:
        return f"ChunkedList({self.ranges()})"
