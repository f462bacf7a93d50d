"""Small replay programs: a one-entry relocation and a multi-collection rotation."""

from __future__ import annotations

import hashlib

from ..collections import DistBag, DistChunkedList, DistMap
from ..group import TeamedPlaceGroup
from ..ranges import LongRange
from ..relocation import CollectiveMoveManager
from ..runtime import at, here, n_places, place, task

GREETING = "says hello"


@task
def _hello(m: DistMap) -> None:
    m.put(here(), GREETING)
    mm = CollectiveMoveManager()
    if here() == place(0):
        m.put("main", "running")
        m.move_key_at_sync("main", place(1), mm)
    mm.sync()


@task
def _map_items(m: DistMap) -> dict:
    return dict(m.items())


def expected_hello(n: int) -> list[dict]:
    out = [{place(i): GREETING} for i in range(n)]
    if n > 1:
        out[1]["main"] = "running"
    else:
        out[0]["main"] = "running"
    return out


def run_hello() -> dict:
    """Every place greets in its own handle; place 0 moves ``main`` to place 1."""
    g = TeamedPlaceGroup.world()
    m = DistMap(g)
    g.broadcast_flat(_hello, m)
    contents = [at(p, _map_items, m) for p in g.members]
    rows = [[p, repr(k), v] for p, d in enumerate(contents) for k, v in sorted(d.items(), key=repr)]
    return {
        "header": ["place", "key", "value"],
        "rows": rows,
        "contents": contents,
        "checks": {"relocated": (contents == expected_hello(g.size), f"handles: {contents}")},
    }


BAG_PER_PLACE = 50
BAG_MOVE = 20
MAP_PER_PLACE = 10
CHUNK = 100


@task
def _fill(bag: DistBag, cl: DistChunkedList, m: DistMap) -> None:
    r = here().id
    for k in range(BAG_PER_PLACE):
        bag.add((r, k))
    cl.add_chunk(LongRange(r * CHUNK, (r + 1) * CHUNK), [r * 1000 + k for k in range(CHUNK)])
    for k in range(MAP_PER_PLACE):
        m.put(r * MAP_PER_PLACE + k, f"value-{r}-{k}")


@task
def _rotate(bag: DistBag, cl: DistChunkedList, m: DistMap) -> None:
    dest = place((here().id + 1) % n_places())
    mm = CollectiveMoveManager()
    bag.move_at_sync_count(BAG_MOVE, dest, mm)
    for r in cl.ranges():
        cl.move_range_at_sync(r, dest, mm)
    m.move_at_sync(lambda _k: dest, mm)
    mm.sync()


@task
def _snapshot(bag: DistBag, cl: DistChunkedList, m: DistMap) -> dict:
    return {
        "bag": list(bag),
        "chunks": [(c.range, list(c.data)) for c in cl.chunks()],
        "map": dict(m.items()),
    }


def _digest(items) -> str:
    h = hashlib.sha256()
    for x in sorted(repr(i) for i in items):
        h.update(x.encode())
    return h.hexdigest()


def multiset_hashes(snaps: list[dict]) -> dict[str, str]:
    return {
        "bag": _digest(e for s in snaps for e in s["bag"]),
        "chunks": _digest((i, v) for s in snaps for r, data in s["chunks"] for i, v in zip(r, data)),
        "map": _digest(kv for s in snaps for kv in s["map"].items()),
    }


def run_rotation() -> dict:
    """Bag, chunked list and map entries all move to rank+1 in a single sync."""
    g = TeamedPlaceGroup.world()
    n = g.size
    bag, cl, m = DistBag(g), DistChunkedList(g), DistMap(g)
    g.broadcast_flat(_fill, bag, cl, m)
    before = [at(p, _snapshot, bag, cl, m) for p in g.members]
    g.broadcast_flat(_rotate, bag, cl, m)
    after = [at(p, _snapshot, bag, cl, m) for p in g.members]
    hb, ha = multiset_hashes(before), multiset_hashes(after)
    sizes = [len(s["bag"]) for s in after]
    ranges_ok = all(
        [r for r, _ in after[(k + 1) % n]["chunks"]] == [LongRange(k * CHUNK, (k + 1) * CHUNK)] for k in range(n)
    )
    keys_ok = all(
        sorted(after[(k + 1) % n]["map"]) == list(range(k * MAP_PER_PLACE, (k + 1) * MAP_PER_PLACE))
        for k in range(n)
    )
    rows = [[p, len(s["bag"]), ";".join(str(r) for r, _ in s["chunks"]), len(s["map"])] for p, s in enumerate(after)]
    return {
        "header": ["place", "bag_size", "chunk_ranges", "map_keys"],
        "rows": rows,
        "before": before,
        "after": after,
        "checks": {
            "conservation": (hb == ha, f"hashes before {hb} after {ha}"),
            "bag-sizes": (sizes == [BAG_PER_PLACE] * n, f"bag sizes {sizes}"),
            "rotated": (ranges_ok and keys_ok, f"ranges rotated: {ranges_ok}, keys rotated: {keys_ok}"),
        },
    }
