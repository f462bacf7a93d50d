"""Teamed place groups and the blocking collectives they carry."""

from __future__ import annotations

import pickle
import struct
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .runtime import CollectiveError, Place, ProtocolError, async_at, current, finish
from .wire import GlobalId

WORLD_CTX = GlobalId(0, 0)

K_ALLTOALL = 1
K_ALLTOALLV = 2
K_BCAST = 3
K_GATHER = 4
K_ALLGATHER = 5
K_ALLREDUCE = 6
K_BARRIER = 7

_I64 = struct.Struct("<q")

_ARRAY_OPS = {
    "sum": np.add,
    "prod": np.multiply,
    "min": np.minimum,
    "max": np.maximum,
}


def _as_place(p) -> Place:
    return p if isinstance(p, Place) else Place(int(p))


@dataclass(frozen=True)
class TeamedPlaceGroup:
    """Ordered set of places with a private collective context.

    Each place numbers the collectives it enters on a group; the n-th call on
    every member forms one epoch, so members must call the same sequence of
    collectives.
    """

    members: tuple[Place, ...]
    ctx: GlobalId

    @classmethod
    def world(cls) -> TeamedPlaceGroup:
        n = current().n_places
        return cls(tuple(Place(i) for i in range(n)), WORLD_CTX)

    @classmethod
    def of(cls, members: Sequence) -> TeamedPlaceGroup:
        """New group over ``members`` (rank order as given)."""
        ms = tuple(_as_place(p) for p in members)
        if len(set(ms)) != len(ms):
            raise ValueError("group members must be distinct")
        if not ms:
            raise ValueError("empty group")
        return cls(ms, current().new_group_ctx())

    # -- membership

    @property
    def size(self) -> int:
        return len(self.members)

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __contains__(self, p) -> bool:
        return _as_place(p) in self.members

    def rank(self, p: Place | None = None) -> int:
        p = Place(current().id) if p is None else _as_place(p)
        try:
            return self.members.index(p)
        except ValueError:
            raise CollectiveError(f"{p} is not a member of this group") from None

    def place(self, rank: int) -> Place:
        return self.members[rank]

    def __repr__(self) -> str:
        return f"TeamedPlaceGroup({[p.id for p in self.members]}, ctx={self.ctx})"

    # -- activities

    def broadcast_flat(self, fn: Callable, *args) -> None:
        """Run registered task ``fn(*args)`` once on every member and wait."""
        with finish():
            for p in self.members:
                async_at(p, fn, *args)

    # -- collectives

    def _x(self, kind, sends, expect):
        return current().exchange(self.ctx, self.members, kind, sends, expect)

    def _root_rank(self, root) -> int:
        root = _as_place(root)
        if root not in self.members:
            raise CollectiveError(f"root {root} is not a member of {self!r}")
        return self.members.index(root)

    def alltoall(self, counts: Sequence[int]) -> list[int]:
        n = self.size
        if len(counts) != n:
            raise ValueError(f"alltoall needs {n} counts, got {len(counts)}")
        got = self._x(K_ALLTOALL, {r: _I64.pack(int(c)) for r, c in enumerate(counts)}, range(n))
        return [_I64.unpack(got[r])[0] for r in range(n)]

    def alltoallv(self, payloads: Sequence[bytes], expected: Sequence[int] | None = None) -> list[bytes]:
        """Personalized exchange; ``expected`` are lengths agreed by a prior alltoall."""
        n = self.size
        if len(payloads) != n:
            raise ValueError(f"alltoallv needs {n} payloads, got {len(payloads)}")
        got = self._x(K_ALLTOALLV, {r: bytes(p) for r, p in enumerate(payloads)}, range(n))
        out = [got[r] for r in range(n)]
        if expected is not None:
            for r in range(n):
                if len(out[r]) != expected[r]:
                    raise ProtocolError(
                        f"rank {r} sent {len(out[r])} bytes, {expected[r]} were announced by alltoall"
                    )
        return out

    def bcast(self, root, payload: bytes | None) -> bytes:
        rr = self._root_rank(root)
        me = self.rank()
        sends = {r: bytes(payload) for r in range(self.size)} if me == rr else {}
        return self._x(K_BCAST, sends, [rr])[rr]

    def gather(self, root, payload: bytes) -> list[bytes]:
        rr = self._root_rank(root)
        me = self.rank()
        got = self._x(K_GATHER, {rr: bytes(payload)}, range(self.size) if me == rr else [])
        return [got[r] for r in range(self.size)] if me == rr else []

    def allgather(self, payload: bytes) -> list[bytes]:
        n = self.size
        got = self._x(K_ALLGATHER, {r: bytes(payload) for r in range(n)}, range(n))
        return [got[r] for r in range(n)]

    def all_gather1(self, v: int) -> list[int]:
        return [_I64.unpack(b)[0] for b in self.allgather(_I64.pack(int(v)))]

    def barrier(self) -> None:
        n = self.size
        self._x(K_BARRIER, {r: b"" for r in range(n)}, range(n))

    def allreduce_bytes(self, contribution: bytes, combine: Callable[[Any, Any], Any],
                        loads: Callable[[bytes], Any] = pickle.loads,
                        dumps: Callable[[Any], bytes] = pickle.dumps) -> bytes:
        """Combine every member's value in ascending rank order; all get the result.

        Contributions are gathered on rank 0, folded left to right and the
        serialized result is broadcast back, so every member returns the same
        bytes.
        """
        parts = self.gather(self.members[0], contribution)
        if self.rank() == 0:
            try:
                acc = loads(parts[0])
                for b in parts[1:]:
                    acc = combine(acc, loads(b))
                reply = b"\x00" + dumps(acc)
            except Exception as e:  # shipped to every member below
                reply = b"\x01" + pickle.dumps(RuntimeError(f"allreduce combine failed: {e!r}"))
        else:
            reply = None
        out = self.bcast(self.members[0], reply)
        if out[:1] == b"\x01":
            raise pickle.loads(out[1:])
        return out[1:]

    def allreduce(self, value: Any, combine: Callable[[Any, Any], Any]) -> Any:
        return pickle.loads(self.allreduce_bytes(pickle.dumps(value), combine))

    def allreduce_array(self, arr: np.ndarray, op: str = "sum") -> np.ndarray:
        """Element-wise reduction of equal-shape arrays, folded in rank order."""
        fn = _ARRAY_OPS[op]
        arr = np.ascontiguousarray(arr)
        head = pickle.dumps((arr.dtype.str, arr.shape))
        parts = self.allgather(struct.pack("<I", len(head)) + head + arr.tobytes())
        acc = None
        for b in parts:
            (hl,) = struct.unpack_from("<I", b, 0)
            dt, shape = pickle.loads(b[4:4 + hl])
            if shape != arr.shape:
                raise ProtocolError(f"allreduce_array shape mismatch {shape} vs {arr.shape}")
            a = np.frombuffer(b[4 + hl:], dtype=np.dtype(dt)).reshape(shape)
            acc = a.copy() if acc is None else fn(acc, a)
        return acc
