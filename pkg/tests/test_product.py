import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import rdc
from rdc import AccumulatorSparse, LongRange, new_product, new_product_triangle, parallel_for_each_row, teamed_split
from rdc.product import global_tiles, splitmix64


def brute(n):
    return {(i, j) for i in range(n) for j in range(n) if i < j}


@pytest.mark.parametrize("n,count", [(100, 4950), (1, 0), (6, 15)])
def test_triangle_pair_count(n, count):
    p = new_product_triangle(LongRange(0, n))
    assert p.pair_count() == count
    assert set(p.pairs()) == brute(n)


def test_full_product_counts():
    p = new_product(LongRange(0, 3), LongRange(10, 14))
    assert p.pair_count() == 12 and (2, 13) in set(p.pairs())


def test_tile_extent_100_by_5():
    tiles = global_tiles(new_product_triangle(LongRange(0, 100)), 5, 5)
    assert all(tr.size == 20 and tc.size == 20 for tr, tc in tiles)
    assert len(tiles) == 15  # tiles below the diagonal hold no i < j pair


def test_grid_must_be_positive():
    with pytest.raises(ValueError):
        teamed_split(new_product_triangle(LongRange(0, 10)), 0, 2, 4, seed=0, rank=0)


def owned(n, grid, size, seed):
    p = new_product_triangle(LongRange(0, n))
    return [teamed_split(p, grid, grid, size, seed, rank=r) for r in range(size)]


@pytest.mark.parametrize("seed", [0, 1, 2, 12345])
def test_single_place_owns_every_tile_once(seed):
    (mine,) = owned(50, 5, 1, seed)
    assert mine.tiles == global_tiles(new_product_triangle(LongRange(0, 50)), 5, 5)
    pairs = list(mine.pairs())
    assert len(pairs) == len(set(pairs)) == 50 * 49 // 2


def test_four_places_cover_all_tiles():
    shares = owned(100, 5, 4, 0)
    tiles = global_tiles(new_product_triangle(LongRange(0, 100)), 5, 5)
    union = [t for s in shares for t in s.tiles]
    assert sorted(union) == sorted(tiles)
    counts = [len(s.tiles) for s in shares]
    assert max(counts) - min(counts) <= 1


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 200), st.integers(1, 8), st.integers(1, 8), st.sampled_from([0, 1, 2]))
def test_pair_coverage_property(n, grid, size, seed):
    shares = owned(n, grid, size, seed)
    covered = [pq for s in shares for pq in s.pairs()]
    assert set(covered) == brute(n)
    if size == 1:
        assert len(covered) == len(set(covered))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 80), st.integers(1, 6), st.integers(1, 8), st.integers(0, 2**64 - 1))
def test_split_is_pure(n, grid, size, seed):
    a = owned(n, grid, size, seed)
    b = owned(n, grid, size, seed)
    assert [s.tiles for s in a] == [s.tiles for s in b]


def test_splitmix_known_value():
    # reference output of SplitMix64 seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF


def test_empty_product_never_calls_body():
    with rdc.launch(1, workers=2):
        p = teamed_split(new_product_triangle(LongRange(0, 1)), 1, 1, 1, 0, rank=0)
        calls = []
        parallel_for_each_row(p, None, lambda *a: calls.append(a))
        assert calls == []


class Box:
    def __init__(self):
        self.n = 0


def test_for_each_row_counts_pairs_with_isolated_blocks():
    with rdc.launch(1, workers=4):
        p = new_product_triangle(LongRange(0, 6))
        acc = AccumulatorSparse(LongRange(0, 6), lambda i: Box(), instrument=True)
        total = []

        def body(i, row, cols, tla):
            for j in cols:
                tla.get(i).n += 1
                tla.get(j).n += 1
            total.append(cols.size)

        parallel_for_each_row(p, acc, body, workers=4)
        assert sum(total) == 15
        per_index = [sum(b.peek(i).n for b in acc.blocks() if b.peek(i)) for i in range(6)]
        assert per_index == [5] * 6
        assert all(len(b.workers_seen) == 1 for b in acc.blocks())


def test_for_each_row_over_chunked_list():
    with rdc.launch(1, workers=2):
        cl = rdc.DistChunkedList()
        cl.add_chunk(LongRange(0, 5), list("abcde"))
        p = new_product_triangle(cl)
        seen = []
        parallel_for_each_row(p, None, lambda i, row, view, tla: seen.append((row, "".join(view))), workers=2)
        assert sorted(seen) == [("a", "bcde"), ("b", "cde"), ("c", "de"), ("d", "e")]
