import pytest
from hypothesis import given
from hypothesis import strategies as st

from rdc import wire
from rdc.wire import GlobalId, ProtocolError


@given(st.integers(0, 65535), st.binary(max_size=512))
def test_frame_roundtrip(tag, body):
    data = wire.frame(tag, body)
    assert wire.unframe(data) == (tag, body)


def test_frame_layout_little_endian():
    assert wire.frame(2, b"ab") == b"\x04\x00\x00\x00\x02\x00ab"


def test_iter_frames_and_truncation():
    buf = wire.frame(1, b"x") + wire.frame(3, b"yz")
    assert list(wire.iter_frames(buf)) == [(1, b"x"), (3, b"yz")]
    with pytest.raises(ProtocolError):
        list(wire.iter_frames(buf[:-1]))


@given(st.integers(0, 2**32 - 1), st.integers(0, 2**64 - 1))
def test_global_id_roundtrip(p, s):
    g = GlobalId(p, s)
    b = g.encode()
    assert len(b) == GlobalId.SIZE == 12
    assert GlobalId.decode(b) == g
