from __future__ import annotations

import threading
from typing import Any, Callable, Generic, Iterable, TypeVar

from ..ranges import LongRange
from ..runtime import Place, current
from .base import CODEC_IDMAP, CODEC_MAP, CODEC_MULTIMAP, DistHandle, Team
from .local import LocalOps

K = TypeVar("K")
V = TypeVar("V")


def _as_place(p) -> Place:
    return p if isinstance(p, Place) else Place(int(p))


class DistMap(LocalOps, DistHandle, Generic[K, V]):
    """Distributed map; every operation except the teamed ones acts on the local handle.

    Concurrent mutation of one handle needs external synchronization; use
    :class:`DistConcurrentMap` otherwise.
    """

    _codec = CODEC_MAP
    _pairs = True

    def __init__(self, group=None):
        DistHandle.__init__(self, group)

    def _init_local(self) -> None:
        self._map: dict = {}

    # local operations

    def put(self, key: K, value: V) -> V | None:
        old = self._map.get(key)
        self._map[key] = value
        return old

    def get(self, key: K, default=None):
        return self._map.get(key, default)

    def remove(self, key: K):
        return self._map.pop(key, None)

    def contains_key(self, key: K) -> bool:
        return key in self._map

    __contains__ = contains_key

    def __getitem__(self, key: K) -> V:
        return self._map[key]

    def __setitem__(self, key: K, value: V) -> None:
        self.put(key, value)

    def __len__(self) -> int:
        return len(self._map)

    def __iter__(self):
        return iter(list(self._map))

    def keys(self) -> list:
        return list(self._map)

    def items(self) -> list[tuple]:
        return list(self._map.items())

    def _entries(self):
        return list(self._map.items())

    def _version(self) -> int:
        return len(self._map)

    def clear(self) -> None:
        self._map.clear()

    def team(self) -> Team:
        return Team(self)

    # relocation

    def move_key_at_sync(self, key: K, dest, mm) -> None:
        if key not in self._map:
            raise KeyError(f"key {key!r} is not held on place({current().id})")
        dest = _as_place(dest)
        if dest == current().place:
            return
        mm.stage(self, dest, ("key", key))

    def move_at_sync(self, rule: Callable[[K], Any], mm) -> None:
        """Stage every local key ``k`` for place ``rule(k)``."""
        here = current().place
        staged = []
        for k in list(self._map):
            dest = rule(k)
            if dest is None:
                raise ValueError(f"relocation rule gave no destination for key {k!r}")
            dest = _as_place(dest)
            if dest not in mm.group:
                raise ValueError(f"relocation rule sends key {k!r} to {dest}, outside the group")
            if dest != here:
                staged.append((k, dest))
        for k, dest in staged:
            mm.stage(self, dest, ("key", k))

    def move_at_sync_count(self, n: int, dest, mm) -> None:
        """Stage ``n`` entries for ``dest``; the most recently inserted keys move."""
        from ..relocation import InsufficientEntriesError

        if n < 0:
            raise ValueError("negative count")
        if n == 0:
            return
        taken = self._staged_keys(mm)
        free = [k for k in self._map if k not in taken]
        if n > len(free):
            raise InsufficientEntriesError(
                f"cannot move {n} entries: handle on place({current().id}) has {len(free)} unstaged entries"
            )
        for k in free[len(free) - n:]:
            mm.stage(self, dest, ("key", k))

    def _staged_keys(self, mm) -> set:
        return {s[1] for s in mm.staged_specs(self)}

    def _reloc_prepare(self, by_dest: dict[int, list]):
        seen: set = set()
        out: dict[int, list] = {}
        for r in sorted(by_dest):
            rows = []
            for _kind, k in by_dest[r]:
                if k in seen:
                    raise ValueError(f"key {k!r} staged for more than one destination")
                if k not in self._map:
                    raise KeyError(f"staged key {k!r} is no longer held")
                seen.add(k)
                rows.append((k, self._map[k]))
            out[r] = rows
        return out, lambda: self._commit_departures(seen)

    def _commit_departures(self, keys: Iterable) -> None:
        for k in keys:
            del self._map[k]

    def _reloc_insert(self, entries: list[tuple]) -> None:
        for k, v in entries:
            self._map[k] = v

    def relocate(self, dist, mm=None) -> None:
        """Move every entry to the place ``dist`` assigns to its key (teamed)."""
        from ..relocation import CollectiveMoveManager, UncoveredKeyError

        own = mm is None
        if own:
            mm = CollectiveMoveManager(self.group)
        uncovered = [k for k in self._map if dist.lookup(k) is None]
        if uncovered:
            mm.fail(UncoveredKeyError(uncovered))
        else:
            try:
                self.move_at_sync(dist.lookup, mm)
            except ValueError as e:
                mm.fail(e)
        if own:
            mm.sync()


class DistConcurrentMap(DistMap[K, V]):
    """Map whose local handle may be mutated from several workers at once."""

    _STRIPES = 16

    def _init_local(self) -> None:
        super()._init_local()
        self._locks = [threading.Lock() for _ in range(self._STRIPES)]

    def _lock(self, key) -> threading.Lock:
        return self._locks[hash(key) % self._STRIPES]

    def put(self, key, value):
        with self._lock(key):
            return super().put(key, value)

    def get(self, key, default=None):
        with self._lock(key):
            return self._map.get(key, default)

    def remove(self, key):
        with self._lock(key):
            return self._map.pop(key, None)

    def compute(self, key, fn: Callable[[Any], Any]):
        """Atomically replace the value of ``key`` by ``fn(old)`` (``old`` may be ``None``)."""
        with self._lock(key):
            v = fn(self._map.get(key))
            if v is None:
                self._map.pop(key, None)
            else:
                self._map[key] = v
            return v


class DistMultiMap(DistMap[K, V]):
    """Map from a key to a list of values."""

    _codec = CODEC_MULTIMAP

    def put(self, key, value) -> None:
        self._map.setdefault(key, []).append(value)

    def put_all(self, key, values: Iterable) -> None:
        self._map.setdefault(key, []).extend(values)

    def get(self, key, default=None):
        return self._map.get(key, default)

    def size_values(self) -> int:
        return sum(len(v) for v in self._map.values())

    def _reloc_insert(self, entries: list[tuple]) -> None:
        for k, vs in entries:
            self._map.setdefault(k, []).extend(vs)


class DistIdMap(DistMap[int, V]):
    """Map keyed by 64-bit indices whose distribution is tracked.

    Keys are recorded in the distribution as singleton ranges.
    """

    _codec = CODEC_IDMAP

    def _init_local(self) -> None:
        from ..relocation import DeltaLog, LongRangeDistribution

        super()._init_local()
        self._delta = DeltaLog()
        self._dist = LongRangeDistribution()
        self.last_update_bytes = 0

    def put(self, key: int, value):
        key = int(key)
        if key not in self._map:
            self._delta.arrive(LongRange(key, key + 1))
        return super().put(key, value)

    def remove(self, key: int):
        if key in self._map:
            self._delta.depart(LongRange(key, key + 1))
        return self._map.pop(key, None)

    def clear(self) -> None:
        for k in list(self._map):
            self.remove(k)

    def _commit_departures(self, keys) -> None:
        for k in keys:
            self._delta.depart(LongRange(k, k + 1))
            del self._map[k]

    def _reloc_insert(self, entries) -> None:
        for k, v in entries:
            if k not in self._map:
                self._delta.arrive(LongRange(k, k + 1))
            self._map[k] = v

    def update_dist(self) -> None:
        from .tracking import exchange_deltas

        self.last_update_bytes = exchange_deltas(self.group, self._delta, self._dist)

    def get_distribution(self):
        return self._dist.copy()
