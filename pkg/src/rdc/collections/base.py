from __future__ import annotations

from typing import Any

from ..group import TeamedPlaceGroup
from ..runtime import current
from ..wire import GlobalId

# relocation codec ids, carried in relocation manifests
CODEC_BAG = 1
CODEC_CHUNKS = 2
CODEC_MAP = 3
CODEC_MULTIMAP = 4
CODEC_IDMAP = 5


class DistHandle:
    """Local handle of a distributed collection.

    Creating a collection builds the handle on the calling place only. The
    handle is linked to its siblings on the other members of ``group`` by a
    GlobalId; those siblings are built the first time a task referencing the
    collection is deserialized on their place.

    Subclasses put their per-place state in ``_init_local``; keyword
    arguments given to ``__init__`` are recorded so that remote places can
    repeat the construction.
    """

    _rdc_gid: GlobalId
    group: TeamedPlaceGroup

    def __init__(self, group: TeamedPlaceGroup | None = None, **params: Any):
        group = TeamedPlaceGroup.world() if group is None else group
        self.group = group
        self._init_local(**params)
        self._rdc_gid = current().registry.register(self, type(self), group, params)

    def _init_local(self, **params: Any) -> None:
        pass

    @classmethod
    def _from_descriptor(cls, gid: GlobalId, group: TeamedPlaceGroup, params: dict):
        obj = cls.__new__(cls)
        obj.group = group
        obj._init_local(**params)
        obj._rdc_gid = gid
        return obj

    @property
    def gid(self) -> GlobalId:
        return self._rdc_gid

    def __reduce__(self):
        raise TypeError(
            f"{type(self).__name__} handles travel by GlobalId; pass them as task arguments instead of pickling"
        )

    def _check_member(self, what: str) -> None:
        if current().id not in [p.id for p in self.group.members]:
            raise RuntimeError(f"{what}: place({current().id}) is outside the collection's group")


class Team:
    """Teamed views of a collection: every member of its group must call."""

    def __init__(self, coll):
        self._coll = coll

    def parallel_reduce(self, reducer, workers: int | None = None):
        """Reduce the entries of every handle; all members get the same value."""
        from ..runtime import dumps, loads

        local = self._coll.parallel_reduce(reducer, workers=workers)

        def combine(a, b):
            a.merge(b)
            return a

        data = self._coll.group.allreduce_bytes(dumps(local), combine, loads=loads, dumps=dumps)
        return loads(data)

    def size(self) -> int:
        return sum(self._coll.group.all_gather1(len(self._coll)))

    def gather(self, dest) -> None:
        self._coll._team_gather(dest)
