import hashlib
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import rdc
from rdc import (
    Bag,
    CachableArray,
    CachableChunkedList,
    DistBag,
    DistChunkedList,
    DistConcurrentMap,
    DistMap,
    DistMultiMap,
    LongRange,
    PlaceLocal,
    RangeError,
    Reducer,
    TeamedPlaceGroup,
    here,
    place,
)
from rdc.apps import demos
from rdc.harness import run_teamed
from rdc.runtime import FinishError, ProtocolError


def snapshot_counters(rt):
    return [dict(rt.state(i).counters) for i in range(rt.n)]


def test_local_operations_send_nothing(rt4):
    m, b, cl = DistMap(), DistBag(), DistChunkedList()
    before = snapshot_counters(rt4)
    m.put("main", "running")
    assert m.get("main") == "running" and m.get("absent") is None
    assert "main" in m and m.contains_key("main")
    b.add(1)
    b.extend([2, 3])
    cl.add_chunk(LongRange(0, 4), [0, 1, 2, 3])
    cl[2] = 20
    assert list(cl) == [0, 1, 20, 3]
    m.remove("main")
    assert snapshot_counters(rt4) == before


def _put_greeting(m):
    m.put(here(), "says hello")


def _items(m):
    return dict(m.items())


def test_per_place_greetings(rt4):
    m = DistMap()
    run_teamed(_put_greeting, m)
    got = run_teamed(_items, m)
    assert got == [{place(i): "says hello"} for i in range(4)]


def test_hello_replay(rt4):
    res = demos.run_hello()
    assert res["contents"] == demos.expected_hello(4)
    assert res["contents"][0] == {place(0): "says hello"}
    assert res["contents"][1] == {place(1): "says hello", "main": "running"}


def test_add_chunk_overlap(rt1):
    cl = DistChunkedList()
    cl.add_chunk(LongRange(0, 10), list(range(10)))
    with pytest.raises(RangeError):
        cl.add_chunk(LongRange(5, 15), list(range(10)))


def test_concurrent_map_compute(rt1):
    cm = DistConcurrentMap()

    def work():
        for k in range(200):
            cm.compute(k % 7, lambda v: (v or 0) + 1)

    ts = [threading.Thread(target=work) for _ in range(8)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert sum(v for _, v in cm.items()) == 1600


def test_multimap_appends(rt1):
    mm = DistMultiMap()
    mm.put("a", 1)
    mm.put("a", 2)
    mm.put_all("b", [3, 4, 5])
    assert mm.get("a") == [1, 2] and mm.size_values() == 5


def test_bag_receivers_and_take_last(rt1):
    b = Bag([1, 2])
    r = b._new_receiver()
    r.extend([3, 4])
    b.extend([5])
    assert len(b) == 5 and sorted(b) == [1, 2, 3, 4, 5]
    assert b.take_last(2) == [4, 5]
    assert sorted(b.clear()) == [1, 2, 3] and len(b) == 0


def _value(pl):
    return pl.value


def _fresh():
    return {"n": 0}


def test_place_local_is_independent(rt4):
    pl = PlaceLocal(_fresh)
    pl.value["n"] = 7
    assert run_teamed(_value, pl) == [{"n": 7}] + [{"n": 0}] * 3


# -- CachableArray ---------------------------------------------------------------


def _ca_broadcast(ca):
    if here() == ca.owner:
        for k in range(len(ca)):
            ca[k] = (k + 1) * 10
    ca.broadcast(lambda v: v, lambda carrier, _old: carrier)
    return list(ca)


def test_cachable_array_copy_semantics(rt4):
    ca = CachableArray([0, 0, 0])
    assert run_teamed(_ca_broadcast, ca) == [[10, 20, 30]] * 4


class Box:
    def __init__(self, v):
        self.v = v


def _box_unpack(carrier, box):
    box.v = carrier
    calls.append(carrier)


calls: list = []


def _ca_boxes(ca):
    if here() == ca.owner:
        for b in ca:
            b.v += 1
    ca.broadcast(lambda b: b.v, _box_unpack)
    return [b.v for b in ca]


def test_cachable_array_mutating_unpack(rt4):
    ca = CachableArray([Box(1), Box(2)], owner=place(2))
    assert run_teamed(_ca_boxes, ca) == [[2, 3]] * 4


def test_cachable_array_single_place_never_unpacks(rt1):
    calls.clear()
    ca = CachableArray([Box(1)])
    assert run_teamed(_ca_boxes, ca) == [[2]]
    assert calls == []


def _bad_pack(_):
    raise ValueError("cannot pack")


def _ca_fail(ca):
    ca.broadcast(_bad_pack, lambda c, e: c)


def test_cachable_array_pack_failure_is_teamed(rt2):
    ca = CachableArray([1])
    with pytest.raises(FinishError) as ei:
        run_teamed(_ca_fail, ca)
    assert len(ei.value.errors) == 2


# -- CachableChunkedList -------------------------------------------------------


def _own_and_share(ccl, spec):
    r = rdc.TeamedPlaceGroup.world().rank()
    mine = spec.get(r)
    if mine is not None:
        ccl.add_chunk(mine, [float(i) for i in mine])
        ccl.share(mine)
    else:
        ccl.share()
    return sorted(ccl.shared.items()), list(ccl.items())


def test_share_two_sources(rt4):
    ccl = CachableChunkedList()
    got = run_teamed(_own_and_share, ccl, {0: LongRange(0, 10), 1: LongRange(10, 20)})
    want_shared = [(LongRange(0, 10), place(0)), (LongRange(10, 20), place(1))]
    want_items = [(i, float(i)) for i in range(20)]
    assert got == [(want_shared, want_items)] * 4


def test_share_nothing_is_noop(rt4):
    ccl = CachableChunkedList()
    assert run_teamed(_own_and_share, ccl, {}) == [([], [])] * 4


def _share_missing(ccl):
    if here() == place(0):
        ccl.share(LongRange(0, 5))
    else:
        ccl.share()


def test_share_missing_range_fails_everywhere(rt2):
    ccl = CachableChunkedList()
    with pytest.raises(FinishError) as ei:
        run_teamed(_share_missing, ccl)
    assert len(ei.value.errors) == 2
    assert all(isinstance(e, RangeError) for e in ei.value.errors)


class Cell:
    def __init__(self, v):
        self.v = v


def _write_v(sink, c):
    sink.write_double(c.v)


def _read_v(src, c):
    c.v = src.read_double()


def _allreduce_one(ccl, values):
    g = TeamedPlaceGroup.world()
    if g.rank() == 0:
        ccl.add_chunk(LongRange(0, 1), [Cell(0.0)])
        ccl.share(LongRange(0, 1))
    else:
        ccl.share()
    ccl[0].v = values[g.rank()]
    ccl.allreduce(_write_v, _read_v)
    return ccl[0].v


def test_allreduce_two_places(rt2):
    assert run_teamed(_allreduce_one, CachableChunkedList(), [1.5, 2.5]) == [4.0, 4.0]


def test_allreduce_single_place_unchanged(rt1):
    assert run_teamed(_allreduce_one, CachableChunkedList(), [3.25]) == [3.25]


def _uneven_write(sink, c):
    for _ in range(1 + here().id):
        sink.write_double(c.v)


def _allreduce_framing(ccl):
    if here() == place(0):
        ccl.add_chunk(LongRange(0, 1), [Cell(1.0)])
        ccl.share(LongRange(0, 1))
    else:
        ccl.share()
    ccl.allreduce(_uneven_write, _read_v)


def test_allreduce_framing_error(rt2):
    with pytest.raises(FinishError) as ei:
        run_teamed(_allreduce_framing, CachableChunkedList())
    assert all(isinstance(e, ProtocolError) for e in ei.value.errors)


# -- team operations ----------------------------------------------------------


def _fill_bag(b, counts):
    r = TeamedPlaceGroup.world().rank()
    for k in range(counts[r]):
        b.add((r, k))


def _gather_to(b, dest):
    b.team().gather(dest)
    return sorted(b)


def test_team_gather_uneven_counts(rt4):
    b = DistBag()
    run_teamed(_fill_bag, b, [4, 6, 4, 0])
    got = run_teamed(_gather_to, b, place(0))
    assert len(got[0]) == 14 and got[1:] == [[], [], []]
    assert got[0] == sorted((r, k) for r, n in enumerate([4, 6, 4, 0]) for k in range(n))


def test_team_gather_empty(rt4):
    b = DistBag()
    assert run_teamed(_gather_to, b, place(2)) == [[]] * 4


def test_team_gather_outside_group(rt4):
    b = DistBag(TeamedPlaceGroup.of([place(0), place(1)]))
    with pytest.raises(ValueError):
        b.team().gather(place(3))


class Count(Reducer):
    def __init__(self):
        self.n = 0

    def new_reducer(self):
        return Count()

    def reduce(self, item):
        self.n += 1

    def merge(self, other):
        self.n += other.n


def _team_count(b):
    return b.team().parallel_reduce(Count()).n, b.team().size()


def test_team_reduce_count(rt4):
    b = DistBag()
    run_teamed(_fill_bag, b, [3, 5, 0, 2])
    assert run_teamed(_team_count, b) == [(10, 10)] * 4


def _map_team(m):
    return m.team().parallel_reduce(Count()).n


def test_team_reduce_over_map(rt2):
    m = DistMap()
    run_teamed(_put_greeting, m)
    assert run_teamed(_map_team, m) == [2, 2]


def _bag_digest(b):
    return hashlib.sha256(repr(sorted(b)).encode()).hexdigest()


@settings(max_examples=10, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=4, max_size=4), st.integers(0, 3))
def test_gather_conserves_multiset(counts, dest):
    with rdc.launch(4, workers=1):
        b = DistBag()
        run_teamed(_fill_bag, b, counts)
        before = sorted(e for part in run_teamed(sorted_items, b) for e in part)
        got = run_teamed(_gather_to, b, place(dest))
        assert got[dest] == before
        assert all(g == [] for r, g in enumerate(got) if r != dest)


def sorted_items(b):
    return sorted(b)


def test_parallel_to_bag_emits_twice(rt1):
    cl = DistChunkedList()
    cl.add_chunk(LongRange(0, 500), list(range(500)))
    out = Bag()

    def body(e, sink):
        sink(e)
        sink(e)

    cl.parallel_to_bag(body, out, workers=4)
    assert len(out) == 1000
    assert sorted(out) == sorted(list(range(500)) * 2)
    cl.parallel_to_bag(lambda e, sink: None, out, workers=4)
    assert len(out) == 1000


def test_map_parallel_for_each_gets_pairs(rt1):
    m = DistMap()
    for k in range(50):
        m.put(k, k * k)
    seen = DistConcurrentMap()
    m.parallel_for_each(lambda k, v: seen.put(k, v), workers=3)
    assert dict(seen.items()) == dict(m.items())
