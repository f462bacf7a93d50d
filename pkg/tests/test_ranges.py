import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdc.ranges import Chunk, ChunkedList, LongRange, RangeError


def filled(*ranges):
    cl = ChunkedList()
    for r in ranges:
        cl.add_chunk(r, [i * 10 for i in r])
    return cl


def test_long_range_basics():
    r = LongRange(3, 8)
    assert r.size == 5 and len(r) == 5
    assert 3 in r and 8 not in r
    assert LongRange(4, 4).empty
    assert r.intersection(LongRange(6, 20)) == LongRange(6, 8)
    assert r.intersection(LongRange(8, 9)) is None
    with pytest.raises(RangeError):
        LongRange(5, 2)


def test_range_split_is_contiguous():
    parts = LongRange(0, 10).split(3)
    assert parts == [LongRange(0, 4), LongRange(4, 7), LongRange(7, 10)]


def test_split_chunk_middle():
    cl = filled(LongRange(0, 100))
    cl.split_chunk(LongRange(20, 50))
    assert cl.ranges() == [LongRange(0, 20), LongRange(20, 50), LongRange(50, 100)]
    assert [cl[i] for i in range(100)] == [i * 10 for i in range(100)]


def test_split_on_boundary_is_noop():
    cl = filled(LongRange(0, 10), LongRange(10, 20))
    v = cl.ranges()
    cl.split_chunk(LongRange(0, 10))
    assert cl.ranges() == v


def test_split_across_two_chunks():
    cl = filled(LongRange(0, 10), LongRange(10, 20))
    cl.split_chunk(LongRange(5, 15))
    assert cl.ranges() == [LongRange(0, 5), LongRange(5, 10), LongRange(10, 15), LongRange(15, 20)]


def test_split_over_gap_names_first_missing_index():
    cl = filled(LongRange(0, 10), LongRange(12, 20))
    with pytest.raises(RangeError, match="index 10"):
        cl.split_chunk(LongRange(5, 15))


def test_add_overlapping_chunk_fails():
    cl = filled(LongRange(0, 10))
    with pytest.raises(RangeError):
        cl.add_chunk(LongRange(9, 12), [0, 0, 0])


def test_take_range_detaches():
    cl = filled(LongRange(0, 100))
    taken = cl.take_range(LongRange(20, 50))
    assert [c.range for c in taken] == [LongRange(20, 50)]
    assert cl.ranges() == [LongRange(0, 20), LongRange(50, 100)]
    assert len(cl) == 70


def test_items_and_view():
    cl = filled(LongRange(0, 5), LongRange(5, 9))
    assert list(cl.items(LongRange(3, 7))) == [(i, i * 10) for i in range(3, 7)]
    assert list(cl.view(LongRange(4, 6))) == [40, 50]
    with pytest.raises(RangeError):
        cl.view(LongRange(8, 11))


def test_chunk_data_length_checked():
    with pytest.raises(RangeError):
        Chunk(LongRange(0, 3), [1, 2])


@st.composite
def chunk_layout(draw):
    cuts = sorted(set(draw(st.lists(st.integers(0, 200), min_size=2, max_size=12))))
    ranges = [LongRange(a, b) for a, b in zip(cuts, cuts[1:])]
    keep = [r for r in ranges if draw(st.booleans())]
    return keep


@settings(max_examples=60, deadline=None)
@given(chunk_layout(), st.integers(0, 200), st.integers(0, 60))
def test_split_then_merge_preserves_index_map(layout, lo, width):
    cl = filled(*layout)
    before = dict(cl.items())
    r = LongRange(lo, lo + width)
    if cl.contains_range(r):
        cl.split_chunk(r)
        if not r.empty:
            assert any(c.start == r.start for c in cl.ranges())
            assert any(c.end == r.end for c in cl.ranges())
    else:
        with pytest.raises(RangeError):
            cl.split_chunk(r)
    assert dict(cl.items()) == before
    assert cl.coalesced_ranges() == filled(*layout).coalesced_ranges()


@settings(max_examples=60, deadline=None)
@given(chunk_layout(), st.integers(1, 9))
def test_index_partition_covers_each_element_once(layout, n):
    cl = filled(*layout)
    parts = cl.index_partition(n)
    assert len(parts) == n
    seen = [c.range.start + k for part in parts for c, lo, hi in part for k in range(lo, hi)]
    assert seen == [i for i, _ in cl.items()]
    sizes = [sum(hi - lo for _, lo, hi in part) for part in parts]
    assert max(sizes) - min(sizes) <= 1
