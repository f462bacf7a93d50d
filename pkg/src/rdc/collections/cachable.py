from __future__ import annotations

import pickle
from typing import Any, Callable, Generic, Iterable, TypeVar

import numpy as np

from ..ranges import Chunk, LongRange, RangeError
from ..runtime import Place, ProtocolError, current, dumps, loads
from .base import DistHandle
from .chunked import DistChunkedList

T = TypeVar("T")
U = TypeVar("U")


class CachableArray(DistHandle, Generic[T]):
    """Dense array replicated on every place of its group, with one owner.

    Every place builds its replica from the same initial ``elements``.
    :meth:`broadcast` pushes the owner's state to the other replicas.
    """

    def __init__(self, elements: Iterable[T], group=None, owner: Place | None = None):
        owner = current().place if owner is None else owner
        DistHandle.__init__(self, group, elements=list(elements), owner=owner.id)

    def _init_local(self, elements: list, owner: int) -> None:
        self._elems = list(elements)
        self.owner = Place(owner)

    def __len__(self) -> int:
        return len(self._elems)

    def __getitem__(self, i: int) -> T:
        return self._elems[i]

    def __setitem__(self, i: int, v: T) -> None:
        self._elems[i] = v

    def __iter__(self):
        return iter(self._elems)

    def broadcast(self, pack: Callable[[T], U], unpack: Callable[[U, T], Any]) -> None:
        """Teamed: apply ``unpack(carrier, replica)`` on every non-owner.

        If ``unpack`` returns a value other than ``None`` it replaces the
        replica element, which lets immutable elements be updated.
        """
        g = self.group
        root = g.rank(self.owner)
        if g.rank() == root:
            try:
                payload = b"\x00" + dumps([pack(e) for e in self._elems])
            except Exception as e:
                payload = b"\x01" + pickle.dumps(RuntimeError(f"broadcast pack failed: {e!r}"))
        else:
            payload = None
        data = g.bcast(self.owner, payload)
        err = None
        if data[:1] == b"\x01":
            err = pickle.loads(data[1:])
        elif g.rank() != root:
            try:
                carriers = loads(data[1:])
                if len(carriers) != len(self._elems):
                    raise ProtocolError(f"broadcast carries {len(carriers)} values for {len(self._elems)} elements")
                for k, c in enumerate(carriers):
                    v = unpack(c, self._elems[k])
                    if v is not None:
                        self._elems[k] = v
            except Exception as e:
                err = e
        # every member learns whether some replica failed
        flags = g.all_gather1(0 if err is None else 1)
        if err is not None:
            raise err
        if any(flags):
            bad = [g.place(r) for r, f in enumerate(flags) if f]
            raise RuntimeError(f"broadcast failed on {bad}")


class _Sink:
    __slots__ = ("buf",)

    def __init__(self):
        self.buf: list[float] = []

    def write(self, x) -> None:
        self.buf.append(x)

    write_double = write_long = write_int = write


class _Source:
    __slots__ = ("buf", "pos")

    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def read(self):
        v = self.buf[self.pos]
        self.pos += 1
        return v

    def read_double(self) -> float:
        return float(self.read())

    def read_long(self) -> int:
        return int(self.read())

    read_int = read_long


class CachableChunkedList(DistChunkedList[T]):
    """Chunked list whose shared ranges are replicated on every member.

    Ranges that were never shared behave as in :class:`DistChunkedList`.
    """

    def _init_local(self) -> None:
        super()._init_local()
        self.shared: dict[LongRange, Place] = {}

    def share(self, *ranges: LongRange) -> None:
        """Teamed: replicate the given locally held ranges onto every member."""
        g = self.group
        err = None
        rows = []
        try:
            rs = sorted(r for r in ranges if not r.empty)
            for a, b in zip(rs, rs[1:]):
                if a.overlaps(b):
                    raise RangeError(f"shared ranges {a} and {b} overlap")
            for r in rs:
                missing = self._list._first_missing(r)
                if missing is not None:
                    raise RangeError(f"cannot share {r}: index {missing} is not held on place({current().id})")
                for s in self.shared:
                    if s.overlaps(r):
                        raise RangeError(f"{r} overlaps already shared range {s}")
                rows.append((r, [v for _, v in self._list.items(r)]))
            payload = b"\x00" + dumps(rows)
        except Exception as e:
            err = e
            payload = b"\x01"
        parts = g.allgather(payload)
        if err is not None:
            raise err
        bad = [g.place(r) for r, b in enumerate(parts) if b[:1] != b"\x00"]
        if bad:
            raise RangeError(f"share failed on {bad}")
        me = g.rank()
        for rank, b in enumerate(parts):
            src = g.place(rank)
            for r, data in (rows if rank == me else loads(b[1:])):
                if rank != me:
                    self._list.add_chunk(Chunk(r, data))
                self.shared[r] = src

    def shared_ranges(self) -> list[LongRange]:
        return sorted(self.shared)

    def allreduce(self, write: Callable[[_Sink, T], None], read: Callable[[_Source, T], None],
                  op: str = "sum") -> None:
        """Teamed: reduce primitive values of every shared element across replicas.

        ``write(sink, element)`` emits the same number of values for every
        element; the reduced values are given back through
        ``read(source, element)``.
        """
        g = self.group
        sink = _Sink()
        k = None
        bad = False
        n = 0
        for r in sorted(self.shared):
            for _, e in self._list.items(r):
                before = len(sink.buf)
                write(sink, e)
                emitted = len(sink.buf) - before
                if k is None:
                    k = emitted
                elif emitted != k:
                    bad = True
                n += 1
        k = 0 if k is None else k
        ks = g.all_gather1(-1 if bad else k)
        ns = g.all_gather1(n)
        if any(x < 0 for x in ks) or len(set(ks)) > 1 or len(set(ns)) > 1:
            raise ProtocolError(f"allreduce framing mismatch: per-element value counts {ks}, element counts {ns}")
        buf = np.asarray(sink.buf, dtype=np.float64)
        out = g.allreduce_array(buf, op)
        src = _Source(out.tolist())
        for r in sorted(self.shared):
            for _, e in self._list.items(r):
                read(src, e)
