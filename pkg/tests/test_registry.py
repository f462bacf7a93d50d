import threading

import pytest

import rdc
from rdc import DistMap, TeamedPlaceGroup, at, finish, async_at, place
from rdc.registry import DefinitionGroupError, HandleRegistry, UnresolvedIdError
from rdc.runtime import current, counters
from rdc.wire import GlobalId


@rdc.task
def handle_id(m):
    return id(m)


@rdc.task
def touch(m):
    m.put(rdc.here(), "seen")


def test_creation_is_local_and_lazy(rt4):
    before = [dict(rt4.state(i).counters) for i in range(4)]
    m = DistMap()
    after = [dict(rt4.state(i).counters) for i in range(4)]
    assert before == after
    assert rt4.state(0).registry.lookup(m.gid) is m
    assert all(rt4.state(i).registry.lookup(m.gid) is None for i in (1, 2, 3))


def test_consecutive_ids_are_distinct(rt2):
    a, b = DistMap(), DistMap()
    assert a.gid != b.gid and a.gid < b.gid
    assert a.gid.place == 0


def test_remote_handle_constructed_once(rt4):
    m = DistMap()
    reg = rt4.state(1).registry
    built = reg.constructed
    first = at(place(1), handle_id, m)
    assert reg.constructed == built + 1
    for _ in range(10):
        assert at(place(1), handle_id, m) == first
    assert reg.constructed == built + 1
    assert reg.lookup(m.gid) is not None and id(reg.lookup(m.gid)) == first


def test_creator_resolves_to_original(rt2):
    m = DistMap()
    assert at(place(0), handle_id, m) == id(m)


def test_three_ids_on_four_places_make_twelve_handles(rt4):
    ms = [DistMap() for _ in range(3)]
    for rnd in range(3):
        with finish():
            for p in rdc.places():
                for m in ms[rnd:] + ms[:rnd]:
                    async_at(p, touch, m)
    total = sum(1 for i in range(4) for m in ms if rt4.state(i).registry.lookup(m.gid) is not None)
    assert total == 12


def test_subgroup_collection_rejected_outside_group(rt4):
    g = TeamedPlaceGroup.of([place(0), place(1)])
    m = DistMap(g)
    at(place(1), handle_id, m)
    with pytest.raises(DefinitionGroupError):
        at(place(2), handle_id, m)


@rdc.task
def create_on_subgroup(g):
    DistMap(g)


def test_creator_must_be_in_group(rt4):
    g = TeamedPlaceGroup.of([place(0), place(1)])
    with pytest.raises(DefinitionGroupError):
        at(place(3), create_on_subgroup, g)


def test_unknown_id_without_descriptor(rt1):
    with pytest.raises(UnresolvedIdError):
        current().registry.resolve(GlobalId(9, 9))


def test_handles_refuse_plain_pickling(rt1):
    import pickle

    with pytest.raises(TypeError, match="GlobalId"):
        pickle.dumps(DistMap())


def test_concurrent_resolve_first_wins(rt1):
    m = DistMap()
    desc = current().registry.descriptor(m.gid)
    reg = HandleRegistry(5)
    # a registry for a place that is not in the world group must refuse
    with pytest.raises(DefinitionGroupError):
        reg.resolve(m.gid, desc)
    reg = HandleRegistry(0)
    out = []
    barrier = threading.Barrier(8)

    def go():
        barrier.wait()
        out.append(reg.resolve(m.gid, desc))

    ts = [threading.Thread(target=go) for _ in range(8)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert len({id(h) for h in out}) == 1 and reg.constructed == 1


def test_counters_helper(rt2):
    counters(place(1))
    # the first reply has been sent by the time the second read runs
    assert counters(place(1))["messages"] == 1
