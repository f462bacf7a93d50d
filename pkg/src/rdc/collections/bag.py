from __future__ import annotations

import threading
from typing import Generic, Iterable, Iterator, TypeVar

from ..runtime import current, dumps, loads
from .base import CODEC_BAG, DistHandle, Team
from .local import LocalOps

T = TypeVar("T")


class Bag(LocalOps, Generic[T]):
    """Unordered multiset built from one receiving list per producer.

    Concurrent producers each obtain their own list through
    ``_new_receiver`` and append to it without locking.
    """

    def __init__(self, items: Iterable[T] = ()):
        self._lists: list[list[T]] = []
        self._lock = threading.Lock()
        items = list(items)
        if items:
            self._lists.append(items)

    def _new_receiver(self) -> list[T]:
        out: list[T] = []
        with self._lock:
            self._lists.append(out)
        return out

    def add(self, item: T) -> None:
        with self._lock:
            if not self._lists:
                self._lists.append([])
            self._lists[0].append(item)

    def extend(self, items: Iterable[T]) -> None:
        items = list(items)
        if items:
            with self._lock:
                self._lists.append(items)

    def __len__(self) -> int:
        return sum(len(x) for x in self._lists)

    def __iter__(self) -> Iterator[T]:
        for x in list(self._lists):
            yield from x

    _entries = __iter__

    def _version(self) -> int:
        return len(self._lists)

    def clear(self) -> list[T]:
        with self._lock:
            out = [e for x in self._lists for e in x]
            self._lists = []
        return out

    def take_last(self, n: int) -> list[T]:
        """Remove and return the ``n`` most recently received elements."""
        out: list[T] = []
        with self._lock:
            while n > 0 and self._lists:
                last = self._lists[-1]
                k = min(n, len(last))
                if k:
                    out[:0] = last[len(last) - k:]
                    del last[len(last) - k:]
                    n -= k
                if not last:
                    self._lists.pop()
        return out

    def __repr__(self) -> str:
        return f"Bag({list(self)})"


class DistBag(Bag[T], DistHandle):
    """Distributed bag: one :class:`Bag` per place of its group."""

    _codec = CODEC_BAG

    def __init__(self, group=None):
        DistHandle.__init__(self, group)

    def _init_local(self) -> None:
        Bag.__init__(self)

    def team(self) -> Team:
        return Team(self)

    # relocation

    def move_at_sync_count(self, n: int, dest, mm) -> None:
        """Stage ``n`` entries (the library picks the most recent ones) for ``dest``."""
        from ..relocation import InsufficientEntriesError

        if n < 0:
            raise ValueError("negative count")
        if n == 0:
            return
        staged = sum(mm.staged_specs(self))
        if n + staged > len(self):
            raise InsufficientEntriesError(
                f"cannot move {n} entries: handle on place({current().id}) holds {len(self)}, {staged} already staged"
            )
        mm.stage(self, dest, n)

    def _reloc_prepare(self, by_dest: dict[int, list[int]]):
        total = sum(sum(v) for v in by_dest.values())
        flat = list(self)
        if total > len(flat):
            raise ValueError("more entries staged than held")
        tail = flat[len(flat) - total:]
        out, off = {}, 0
        for r in sorted(by_dest):
            k = sum(by_dest[r])
            out[r] = tail[off:off + k]
            off += k
        return out, lambda: self.take_last(total)

    def _reloc_insert(self, entries: list[T]) -> None:
        self.extend(entries)

    def _team_gather(self, dest) -> None:
        g = self.group
        root = g.place(g.rank(dest)) if dest in g else None
        if root is None:
            raise ValueError(f"gather destination {dest} is outside the bag's group")
        me_root = g.rank() == g.rank(root)
        payload = b"" if me_root else dumps(list(self))
        parts = g.gather(root, payload)
        if me_root:
            for r, b in enumerate(parts):
                if b:
                    self.extend(loads(b))
        else:
            self.clear()
