"""Entry relocation between local handles, distribution records and load balancing.

Relocations are registered into a :class:`CollectiveMoveManager` and executed
by a single teamed :meth:`CollectiveMoveManager.sync`. The exchange is two
phases: per-destination byte counts through ``alltoall``, then the payloads
through ``alltoallv``. A payload from one place to another is::

    manifest: u16 tagCount, then per tag: u16 tag, u32 idLen, id bytes, u16 codec
    frames:   (u16 tag, u32 len, bytes)*

where the id bytes are the collection's GlobalId followed by its constructor
descriptor, so a receiver that never saw the collection can still build its
handle.
"""

from __future__ import annotations

import bisect
import logging
import math
import struct
from typing import Any, Iterable

from .group import TeamedPlaceGroup
from .ranges import LongRange
from .runtime import Place, ProtocolError, current, dumps, loads
from .wire import GlobalId

log = logging.getLogger(__name__)

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_FRAME = struct.Struct("<HI")


class RelocationError(RuntimeError):
    """A teamed relocation failed on some member; nothing was moved."""


class InsufficientEntriesError(RelocationError):
    pass


class DistributionConsistencyError(RuntimeError):
    pass


class UncoveredKeyError(RelocationError):
    def __init__(self, keys):
        self.keys = sorted(keys)
        super().__init__(f"keys not covered by the distribution: {self.keys[:20]}{'...' if len(self.keys) > 20 else ''}")


# -- interval arithmetic --------------------------------------------------------


class IntervalSet:
    """Set of integers stored as sorted disjoint ``LongRange`` runs."""

    def __init__(self, ranges: Iterable[LongRange] = ()):
        self._runs: list[LongRange] = []
        for r in ranges:
            self.add(r)

    def add(self, r: LongRange) -> None:
        if r.empty:
            return
        lo, hi = r.start, r.end
        keep = []
        for x in self._runs:
            if x.end < lo or x.start > hi:
                keep.append(x)
            else:
                lo, hi = min(lo, x.start), max(hi, x.end)
        keep.append(LongRange(lo, hi))
        keep.sort()
        self._runs = keep

    def subtract(self, r: LongRange) -> list[LongRange]:
        """Remove ``r``; returns the parts of ``r`` that were present."""
        removed, keep = [], []
        for x in self._runs:
            inter = x.intersection(r)
            if inter is None:
                keep.append(x)
                continue
            removed.append(inter)
            if x.start < inter.start:
                keep.append(LongRange(x.start, inter.start))
            if inter.end < x.end:
                keep.append(LongRange(inter.end, x.end))
        keep.sort()
        self._runs = keep
        return removed

    def runs(self) -> list[LongRange]:
        return list(self._runs)

    def __bool__(self) -> bool:
        return bool(self._runs)

    def __eq__(self, other) -> bool:
        return isinstance(other, IntervalSet) and self._runs == other._runs


def _minus(r: LongRange, parts: list[LongRange]) -> list[LongRange]:
    out, lo = [], r.start
    for p in sorted(parts):
        if p.start > lo:
            out.append(LongRange(lo, p.start))
        lo = max(lo, p.end)
    if lo < r.end:
        out.append(LongRange(lo, r.end))
    return out


class DeltaLog:
    """Net ownership change of one place since the last reconciliation."""

    def __init__(self):
        self.added = IntervalSet()
        self.removed = IntervalSet()

    def arrive(self, r: LongRange) -> None:
        back = self.removed.subtract(r)
        for part in _minus(r, back):
            self.added.add(part)

    def depart(self, r: LongRange) -> None:
        gone = self.added.subtract(r)
        for part in _minus(r, gone):
            self.removed.add(part)

    def __bool__(self) -> bool:
        return bool(self.added) or bool(self.removed)

    def clear(self) -> None:
        self.added = IntervalSet()
        self.removed = IntervalSet()


class LongRangeDistribution:
    """Disjoint map from index ranges to owning places.

    Adjacent ranges with the same owner are merged, so two records describing
    the same ownership compare equal.
    """

    def __init__(self, mapping: dict[LongRange, Place] | Iterable[tuple[LongRange, Place]] = ()):
        self._starts: list[int] = []
        self._recs: dict[int, tuple[LongRange, Place]] = {}
        items = mapping.items() if isinstance(mapping, dict) else mapping
        for r, p in items:
            self.add(r, p)

    def lookup(self, i: int) -> Place | None:
        k = bisect.bisect_right(self._starts, i) - 1
        if k < 0:
            return None
        r, p = self._recs[self._starts[k]]
        return p if i < r.end else None

    __getitem__ = lookup

    def add(self, r: LongRange, p: Place) -> None:
        if r.empty:
            return
        k = bisect.bisect_left(self._starts, r.start)
        for j in (k - 1, k):
            if 0 <= j < len(self._starts):
                other, op = self._recs[self._starts[j]]
                if other.overlaps(r):
                    raise DistributionConsistencyError(f"{r}->{p} overlaps {other}->{op}")
        self._starts.insert(k, r.start)
        self._recs[r.start] = (r, p)
        self._merge_around(r.start)

    def _merge_around(self, start: int) -> None:
        k = self._starts.index(start)
        # merge with the right neighbour, then with the left one
        if k + 1 < len(self._starts):
            r, p = self._recs[self._starts[k]]
            nr, np_ = self._recs[self._starts[k + 1]]
            if r.end == nr.start and p == np_:
                del self._recs[nr.start]
                self._starts.pop(k + 1)
                self._recs[r.start] = (LongRange(r.start, nr.end), p)
        if k > 0:
            pr, pp = self._recs[self._starts[k - 1]]
            r, p = self._recs[self._starts[k]]
            if pr.end == r.start and pp == p:
                del self._recs[r.start]
                self._starts.pop(k)
                self._recs[pr.start] = (LongRange(pr.start, r.end), p)

    def remove(self, r: LongRange, owner: Place | None = None) -> None:
        """Drop ownership of ``r``; with ``owner`` every index must belong to it."""
        if r.empty:
            return
        covered = 0
        k = max(0, bisect.bisect_right(self._starts, r.start) - 1)
        touched = []
        while k < len(self._starts) and self._starts[k] < r.end:
            rec, p = self._recs[self._starts[k]]
            inter = rec.intersection(r)
            if inter is not None:
                if owner is not None and p != owner:
                    raise DistributionConsistencyError(f"{inter} is recorded at {p}, not {owner}")
                touched.append((rec, p, inter))
                covered += inter.size
            k += 1
        if owner is not None and covered != r.size:
            raise DistributionConsistencyError(f"{r} is not entirely recorded at {owner}")
        for rec, p, inter in touched:
            del self._recs[rec.start]
            self._starts.remove(rec.start)
            for part in (LongRange(rec.start, inter.start), LongRange(inter.end, rec.end)):
                if not part.empty:
                    bisect.insort(self._starts, part.start)
                    self._recs[part.start] = (part, p)

    def items(self) -> list[tuple[LongRange, Place]]:
        return [self._recs[s] for s in self._starts]

    def ranges_of(self, p: Place) -> list[LongRange]:
        return [r for r, q in self.items() if q == p]

    def copy(self) -> LongRangeDistribution:
        d = LongRangeDistribution()
        d._starts = list(self._starts)
        d._recs = dict(self._recs)
        return d

    def __eq__(self, other) -> bool:
        return isinstance(other, LongRangeDistribution) and self.items() == other.items()

    def __len__(self) -> int:
        return len(self._starts)

    def __repr__(self) -> str:
        return "{" + ", ".join(f"{r}->{p}" for r, p in self.items()) + "}"


def reconcile(record: LongRangeDistribution, logs: list[tuple[Place, DeltaLog]]) -> None:
    """Apply every place's delta log: all departures first, then arrivals."""
    for p, d in logs:
        for r in d.removed.runs():
            record.remove(r, owner=p)
    for p, d in logs:
        for r in d.added.runs():
            record.add(r, p)


# -- collective move manager -----------------------------------------------------


class CollectiveMoveManager:
    """Staging area for relocations executed together by a teamed :meth:`sync`."""

    def __init__(self, group: TeamedPlaceGroup | None = None):
        self.group = group or TeamedPlaceGroup.world()
        self._staged: dict[GlobalId, tuple[Any, dict[int, list]]] = {}
        self._failure: BaseException | None = None
        self.epoch = 0
        self.last_sent: list[int] = []
        self.last_received: list[int] = []

    def stage(self, coll, dest: Place, spec) -> None:
        """Register ``spec`` of ``coll`` for transfer to ``dest`` at the next sync."""
        dest = dest if isinstance(dest, Place) else Place(int(dest))
        if dest not in self.group:
            raise ValueError(f"destination {dest} is outside the move manager's group")
        gid = coll._rdc_gid
        entry = self._staged.get(gid)
        if entry is None:
            entry = self._staged[gid] = (coll, {})
        entry[1].setdefault(self.group.rank(dest), []).append(spec)

    def staged_specs(self, coll) -> list:
        entry = self._staged.get(coll._rdc_gid)
        if entry is None:
            return []
        return [s for specs in entry[1].values() for s in specs]

    def fail(self, exc: BaseException) -> None:
        """Make the next sync abort on every member, raising ``exc`` here."""
        self._failure = exc

    def _encode(self, n: int):
        st = current()
        manifests: list[list[bytes]] = [[] for _ in range(n)]
        frames: list[list[bytes]] = [[] for _ in range(n)]
        tags = [0] * n
        commits = []
        for gid, (coll, by_dest) in self._staged.items():
            per_dest, commit = coll._reloc_prepare(by_dest)
            commits.append(commit)
            ident = gid.encode() + st.registry.descriptor(gid)
            for r, entries in per_dest.items():
                if not entries:
                    continue
                tag = tags[r]
                tags[r] += 1
                manifests[r].append(_U16.pack(tag) + _U32.pack(len(ident)) + ident + _U16.pack(coll._codec))
                body = dumps(entries)
                frames[r].append(_FRAME.pack(tag, len(body)) + body)
        payloads = []
        for r in range(n):
            if tags[r] == 0:
                payloads.append(b"")
            else:
                payloads.append(_U16.pack(tags[r]) + b"".join(manifests[r]) + b"".join(frames[r]))
        return payloads, commits

    def sync(self) -> None:
        g = self.group
        n = g.size
        err = self._failure
        payloads, commits = [b""] * n, []
        if err is None:
            try:
                payloads, commits = self._encode(n)
            except Exception as e:
                err = e
        counts = [-1] * n if err is not None else [len(p) for p in payloads]
        received = g.alltoall(counts)
        self.epoch += 1
        if err is not None or any(c < 0 for c in received):
            self._staged.clear()
            self._failure = None
            if err is not None:
                raise err
            bad = [g.place(r) for r, c in enumerate(received) if c < 0]
            raise RelocationError(f"relocation aborted: serialization failed on {bad}")
        for commit in commits:
            commit()
        self._staged.clear()
        incoming = g.alltoallv(payloads, expected=received)
        self.last_sent = counts
        self.last_received = received
        for r in range(n):
            if incoming[r]:
                _decode_into(incoming[r])


def _decode_into(buf: bytes) -> None:
    st = current()
    (ntags,) = _U16.unpack_from(buf, 0)
    off = 2
    table = {}
    for _ in range(ntags):
        (tag,) = _U16.unpack_from(buf, off)
        (idlen,) = _U32.unpack_from(buf, off + 2)
        ident = buf[off + 6:off + 6 + idlen]
        off += 6 + idlen
        (codec,) = _U16.unpack_from(buf, off)
        off += 2
        gid = GlobalId.decode(ident)
        table[tag] = (st.registry.resolve(gid, ident[GlobalId.SIZE:]), codec)
    while off < len(buf):
        tag, ln = _FRAME.unpack_from(buf, off)
        off += _FRAME.size
        if tag not in table:
            raise ProtocolError(f"relocation frame carries unknown deserializer tag {tag}")
        coll, codec = table[tag]
        if codec != coll._codec:
            raise ProtocolError(f"codec {codec} does not match collection codec {coll._codec}")
        coll._reloc_insert(loads(buf[off:off + ln]))
        off += ln


# -- level-extremes load balancing ------------------------------------------------


def level_extremes_pair(times: list[int], participants: Iterable[int], hysteresis: float = 1.1):
    """Pick ``(src, dst)``: the slowest and fastest participating ranks.

    Ties go to the lowest rank. ``None`` when fewer than two ranks take part
    or when ``t_max <= hysteresis * t_min``.
    """
    ranks = sorted(participants)
    if len(ranks) < 2:
        return None
    tmax = max(times[r] for r in ranks)
    tmin = min(times[r] for r in ranks)
    src = next(r for r in ranks if times[r] == tmax)
    dst = next(r for r in ranks if times[r] == tmin)
    if src == dst or tmax <= 0 or tmax <= hysteresis * tmin:
        return None
    return src, dst


def level_extremes_count(held: int, tmax: float, tmin: float) -> int:
    """Entries the slowest rank gives away: ``floor(held * (tmax - tmin) / (2 tmax))``."""
    if tmax <= 0:
        return 0
    return max(0, math.floor(held * (tmax - tmin) / (2 * tmax)))


def perform_load_balance_level_extremes(times: list[int], agents, mm: CollectiveMoveManager,
                                        participants: Iterable[int] | None = None,
                                        hysteresis: float = 1.1):
    """Stage entries from the slowest to the fastest participating rank.

    ``participants`` are the ranks of ``mm.group`` that hold entries (all
    ranks by default). Every member calls this with the same ``times``; only
    the most loaded rank stages anything, moving its highest-indexed ranges.
    Returns ``(src, dst, count)`` where ``count`` is only known on ``src``
    (``None`` elsewhere), or ``None`` when nothing moves.
    """
    g = mm.group
    part = list(range(g.size) if participants is None else participants)
    pair = level_extremes_pair(times, part, hysteresis)
    if pair is None:
        return None
    src, dst = pair
    if g.rank() != src:
        return src, dst, None
    count = level_extremes_count(len(agents), times[src], times[dst])
    if count > 0:
        agents.move_at_sync_count(count, g.place(dst), mm)
    return src, dst, count
