"""Pair products of ranged lists, tiled and split across a place group."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Iterator

from .parallel import Accumulator, run_partitions, split_sequence
from .ranges import ChunkedList, LongRange, RangeError
from .runtime import current

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _as_range(src) -> LongRange:
    if isinstance(src, LongRange):
        return src
    local = getattr(src, "local", src)
    rs = local.coalesced_ranges()
    if len(rs) != 1:
        raise RangeError(f"a product needs one contiguous range, got {rs}")
    return rs[0]


def _source(src):
    if isinstance(src, LongRange):
        return None
    return getattr(src, "local", src)


def _clip(row: int, cols: LongRange, triangle: bool) -> LongRange:
    if not triangle:
        return cols
    lo = max(cols.start, row + 1)
    return LongRange(lo, max(lo, cols.end))


@dataclass
class RangedListProduct:
    """Pairs ``(i, j)`` from ``rows`` x ``cols``; ``i < j`` only when ``triangle``."""

    rows: LongRange
    cols: LongRange
    triangle: bool
    tiles: list[tuple[LongRange, LongRange]] = field(default_factory=list)
    row_source: ChunkedList | None = None
    col_source: ChunkedList | None = None

    def pairs(self) -> Iterator[tuple[int, int]]:
        for tr, tc in self.tiles:
            for i in range(tr.start, tr.end):
                c = _clip(i, tc, self.triangle)
                for j in range(c.start, c.end):
                    yield i, j

    def pair_count(self) -> int:
        n = 0
        for tr, tc in self.tiles:
            for i in range(tr.start, tr.end):
                n += _clip(i, tc, self.triangle).size
        return n

    def row_units(self) -> list[tuple[int, LongRange]]:
        """``(row, clipped column range)`` per (tile, row), empty rows skipped."""
        out = []
        for tr, tc in self.tiles:
            for i in range(tr.start, tr.end):
                c = _clip(i, tc, self.triangle)
                if not c.empty:
                    out.append((i, c))
        return out


def new_product(rows_src, cols_src) -> RangedListProduct:
    rows, cols = _as_range(rows_src), _as_range(cols_src)
    return RangedListProduct(rows, cols, False, [(rows, cols)], _source(rows_src), _source(cols_src))


def new_product_triangle(src) -> RangedListProduct:
    """All pairs ``(i, j)`` with ``i < j`` over the indices of ``src``."""
    r = _as_range(src)
    if r.empty:
        raise RangeError("product over an empty range")
    s = _source(src)
    return RangedListProduct(r, r, True, [(r, r)], s, s)


def global_tiles(p: RangedListProduct, n_rows: int, n_cols: int) -> list[tuple[LongRange, LongRange]]:
    """Grid tiles in row-major order; tiles holding no ``i < j`` pair are dropped."""
    if n_rows < 1 or n_cols < 1:
        raise ValueError(f"tile grid must be at least 1x1, got {n_rows}x{n_cols}")
    out = []
    for tr in p.rows.split(n_rows):
        for tc in p.cols.split(n_cols):
            if tr.empty or tc.empty:
                continue
            if p.triangle and not tr.start < tc.end - 1:
                continue
            out.append((tr, tc))
    return out


def teamed_split(p: RangedListProduct, n_rows: int, n_cols: int, group, seed: int,
                 rank: int | None = None) -> RangedListProduct:
    """This member's share of the tiling.

    Every member computes the same tiling and the same rotation offset from
    ``seed``; tile ``k`` goes to rank ``(k + offset) mod |group|``. No
    communication takes place.
    """
    tiles = global_tiles(p, n_rows, n_cols)
    n = group.size if hasattr(group, "size") else int(group)
    me = group.rank() if rank is None else rank
    offset = splitmix64(seed & _MASK) % n
    mine = [t for k, t in enumerate(tiles) if (k + offset) % n == me]
    return RangedListProduct(p.rows, p.cols, p.triangle, mine, p.row_source, p.col_source)


def parallel_for_each_row(p: RangedListProduct, acc: Accumulator | None,
                          body: Callable[[int, Any, Any, Any], None], workers: int | None = None) -> None:
    """Run ``body(i, row_element, column_view, worker_block)`` per (tile, row).

    Rows are split contiguously between workers; each worker only sees its own
    accumulator block. When the product was built from plain ranges the row
    element is the index itself and the column view is a ``LongRange``.
    """
    units = p.row_units()
    if not units:
        return
    w = workers if workers is not None else current().workers
    parts = [x for x in split_sequence(units, w) if len(x)] or [units]
    rows, cols = p.row_source, p.col_source

    def run(k, part):
        tla = acc.block(k) if acc is not None else None
        for i, c in part:
            if rows is None:
                body(i, i, c, tla)
            else:
                body(i, rows[i], cols.view(c), tla)

    run_partitions(parts, run)
