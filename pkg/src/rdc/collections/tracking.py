"""Reconciliation of distribution records from per-place delta logs."""

from __future__ import annotations

import struct

from ..ranges import LongRange

_REC = struct.Struct("<qq")
_HDR = struct.Struct("<II")


def encode_delta(delta) -> bytes:
    if not delta:
        return b""
    added, removed = delta.added.runs(), delta.removed.runs()
    parts = [_HDR.pack(len(added), len(removed))]
    parts += [_REC.pack(r.start, r.end) for r in added + removed]
    return b"".join(parts)


def decode_delta(buf: bytes):
    from ..relocation import DeltaLog, IntervalSet

    d = DeltaLog()
    if not buf:
        return d
    na, nr = _HDR.unpack_from(buf, 0)
    off = _HDR.size
    runs = []
    for _ in range(na + nr):
        s, e = _REC.unpack_from(buf, off)
        off += _REC.size
        runs.append(LongRange(s, e))
    d.added = IntervalSet(runs[:na])
    d.removed = IntervalSet(runs[na:])
    return d


def exchange_deltas(group, delta, record) -> int:
    """Allgather every member's delta log and fold it into ``record``.

    Returns the number of delta bytes received; zero when no member's
    ownership changed since the previous call.
    """
    from ..relocation import reconcile

    parts = group.allgather(encode_delta(delta))
    delta.clear()
    logs = [(group.place(r), decode_delta(b)) for r, b in enumerate(parts)]
    reconcile(record, logs)
    return sum(len(b) for b in parts)
