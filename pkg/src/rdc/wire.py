"""Byte-level framing shared by tasks, collectives and relocation payloads.

Every payload is a little-endian frame ``[u32 frameLen][u16 tag][bytes]`` where
``frameLen`` counts the tag and the body.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator

_FRAME = struct.Struct("<IH")
_GID = struct.Struct("<IQ")

# message tags used by the runtime
TAG_TASK = 1
TAG_SPAWN = 2
TAG_SPAWN_ACK = 3
TAG_TERM = 4
TAG_COLL = 5
TAG_AT = 6
TAG_AT_RESULT = 7
TAG_SHUTDOWN = 8


class ProtocolError(RuntimeError):
    """Malformed frame, unknown tag, or disagreement between peers."""


def frame(tag: int, body: bytes) -> bytes:
    return _FRAME.pack(len(body) + 2, tag) + body


def unframe(buf: bytes) -> tuple[int, bytes]:
    """Decode a single frame occupying all of ``buf``."""
    if len(buf) < _FRAME.size:
        raise ProtocolError("truncated frame header")
    length, tag = _FRAME.unpack_from(buf, 0)
    if length + 4 != len(buf):
        raise ProtocolError(f"frame length {length} disagrees with buffer of {len(buf)} bytes")
    return tag, buf[_FRAME.size:]


def iter_frames(buf: bytes) -> Iterator[tuple[int, bytes]]:
    off = 0
    while off < len(buf):
        if off + _FRAME.size > len(buf):
            raise ProtocolError("truncated frame header")
        length, tag = _FRAME.unpack_from(buf, off)
        end = off + 4 + length
        if end > len(buf):
            raise ProtocolError("truncated frame body")
        yield tag, buf[off + _FRAME.size:end]
        off = end


@dataclass(frozen=True, order=True)
class GlobalId:
    """Identity of a distributed collection: ``(creator place, sequence)``."""

    place: int
    seq: int

    def encode(self) -> bytes:
        return _GID.pack(self.place, self.seq)

    @classmethod
    def decode(cls, buf: bytes, offset: int = 0) -> GlobalId:
        p, s = _GID.unpack_from(buf, offset)
        return cls(p, s)

    SIZE = _GID.size

    def __repr__(self) -> str:
        return f"gid({self.place}:{self.seq})"
