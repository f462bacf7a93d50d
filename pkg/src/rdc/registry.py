"""Global identities of distributed collections and lazy per-place handles."""

from __future__ import annotations

import itertools
import pickle
import threading
from typing import Any

from .wire import GlobalId


class UnresolvedIdError(LookupError):
    pass


class DefinitionGroupError(RuntimeError):
    """A handle was requested on a place outside the collection's group."""


class HandleRegistry:
    """Per-place table ``GlobalId -> local handle`` plus constructor descriptors.

    A descriptor is the pickled ``(class, group, params)`` triple needed to
    build the local handle of a collection on a place that has not seen it.
    """

    def __init__(self, place_id: int):
        self.place_id = place_id
        self._seq = itertools.count(1)
        self._handles: dict[GlobalId, Any] = {}
        self._descriptors: dict[GlobalId, bytes] = {}
        self._sent: set[tuple[GlobalId, int]] = set()
        self._lock = threading.RLock()
        self.constructed = 0

    def register(self, handle, cls: type, group, params: dict) -> GlobalId:
        if not any(p.id == self.place_id for p in group.members):
            raise DefinitionGroupError(f"place({self.place_id}) cannot create a collection on a group it is not part of")
        gid = GlobalId(self.place_id, next(self._seq))
        desc = pickle.dumps((cls, group, params), protocol=pickle.HIGHEST_PROTOCOL)
        with self._lock:
            self._handles[gid] = handle
            self._descriptors[gid] = desc
        return gid

    def descriptor(self, gid: GlobalId) -> bytes:
        with self._lock:
            return self._descriptors[gid]

    def add_descriptors(self, descs: dict[GlobalId, bytes]) -> None:
        if descs:
            with self._lock:
                for gid, d in descs.items():
                    self._descriptors.setdefault(gid, d)

    def mark_sent(self, gid: GlobalId, dest: int) -> bool:
        """Record that ``gid``'s descriptor went to ``dest``; True the first time."""
        key = (gid, dest)
        with self._lock:
            if key in self._sent:
                return False
            self._sent.add(key)
            return True

    def lookup(self, gid: GlobalId):
        with self._lock:
            return self._handles.get(gid)

    def resolve(self, gid: GlobalId, descriptor: bytes | None = None):
        """Return the local handle for ``gid``, building it on first use."""
        with self._lock:
            h = self._handles.get(gid)
            if h is not None:
                return h
            if descriptor is not None:
                self._descriptors.setdefault(gid, descriptor)
            desc = self._descriptors.get(gid)
            if desc is None:
                raise UnresolvedIdError(f"{gid} is unknown on place({self.place_id}) and no descriptor is available")
            cls, group, params = pickle.loads(desc)
            if not any(p.id == self.place_id for p in group.members):
                raise DefinitionGroupError(f"{gid} is not defined on place({self.place_id}) (group {list(group.members)})")
            h = cls._from_descriptor(gid, group, params)
            self._handles[gid] = h
            self.constructed += 1
            return h

    def __len__(self) -> int:
        return len(self._handles)

    def __contains__(self, gid: GlobalId) -> bool:
        return gid in self._handles
