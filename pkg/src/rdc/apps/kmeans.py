"""Distributed K-Means over a chunked list of points.

Each iteration assigns every local point to its nearest centroid, averages the
members of each cluster with a teamed reduction and then moves every centroid
onto the data point closest to that average (a second teamed reduction).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..collections import DistChunkedList, PlaceLocal
from ..group import TeamedPlaceGroup
from ..parallel import Reducer
from ..ranges import LongRange
from ..runtime import at, here, n_places, task


class Point:
    __slots__ = ("idx", "x", "cluster")

    def __init__(self, idx: int, x: tuple, cluster: int = -1):
        self.idx = idx
        self.x = x
        self.cluster = cluster

    def assign(self, centroids: list[tuple]) -> None:
        best, bd = 0, None
        x = self.x
        for c, cen in enumerate(centroids):
            d = 0.0
            for a, b in zip(x, cen):
                t = a - b
                d += t * t
            if bd is None or d < bd:
                best, bd = c, d
        self.cluster = best

    def __getstate__(self):
        return (self.idx, self.x, self.cluster)

    def __setstate__(self, s):
        self.idx, self.x, self.cluster = s


def _sqdist(x: tuple, y: tuple) -> float:
    d = 0.0
    for a, b in zip(x, y):
        t = a - b
        d += t * t
    return d


class AveragePosition(Reducer):
    """Per-cluster coordinate sums and member counts."""

    def __init__(self, k: int, dim: int):
        self.k, self.dim = k, dim
        self.sums = [[0.0] * dim for _ in range(k)]
        self.counts = [0] * k

    def new_reducer(self) -> AveragePosition:
        return AveragePosition(self.k, self.dim)

    def reduce(self, p: Point) -> None:
        s = self.sums[p.cluster]
        for d, v in enumerate(p.x):
            s[d] += v
        self.counts[p.cluster] += 1

    def merge(self, o: AveragePosition) -> None:
        for c in range(self.k):
            s, t = self.sums[c], o.sums[c]
            for d in range(self.dim):
                s[d] += t[d]
            self.counts[c] += o.counts[c]

    def means(self, previous: list[tuple]) -> list[tuple]:
        """Cluster averages; an empty cluster keeps its previous centroid."""
        return [tuple(v / n for v in s) if n else previous[c]
                for c, (s, n) in enumerate(zip(self.sums, self.counts))]


class ClosestPoint(Reducer):
    """Per cluster, the member point nearest to a target position."""

    def __init__(self, targets: list[tuple]):
        self.targets = targets
        self.best: list[tuple | None] = [None] * len(targets)

    def new_reducer(self) -> ClosestPoint:
        return ClosestPoint(self.targets)

    def _offer(self, c: int, cand: tuple) -> None:
        cur = self.best[c]
        if cur is None or cand[:2] < cur[:2]:
            self.best[c] = cand

    def reduce(self, p: Point) -> None:
        c = p.cluster
        self._offer(c, (_sqdist(p.x, self.targets[c]), p.idx, p.x))

    def merge(self, o: ClosestPoint) -> None:
        for c, cand in enumerate(o.best):
            if cand is not None:
                self._offer(c, cand)

    def centroids(self, previous: list[tuple]) -> list[tuple]:
        return [b[2] if b is not None else previous[c] for c, b in enumerate(self.best)]


def generate(seed: int, n: int, dim: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Global points and the indices of the initial centroids."""
    rng = np.random.default_rng(seed)
    pts = rng.random((n, dim))
    init = rng.choice(n, size=k, replace=False)
    return pts, init


def reference(points: np.ndarray, init: np.ndarray, iterations: int) -> list[list[tuple]]:
    """Sequential K-Means with the same update rule; centroids after each iteration."""
    pts = [Point(i, tuple(float(v) for v in row)) for i, row in enumerate(points)]
    k, dim = len(init), points.shape[1]
    cents = [pts[int(i)].x for i in init]
    out = []
    for _ in range(iterations):
        for p in pts:
            p.assign(cents)
        avg = AveragePosition(k, dim)
        for p in pts:
            avg.reduce(p)
        cp = ClosestPoint(avg.means(cents))
        for p in pts:
            cp.reduce(p)
        cents = cp.centroids(cents)
        out.append(cents)
    return out


@dataclass
class KMeansConfig:
    points_per_place: int = 10_000
    dim: int = 3
    k: int = 8
    iterations: int = 10
    seed: int = 42
    workers: int | None = None


@dataclass
class KMeansTrace:
    centroids: list = field(default_factory=list)
    rows: list = field(default_factory=list)


def _new_trace() -> KMeansTrace:
    return KMeansTrace()


@task
def _kmeans_place(points: DistChunkedList, trace: PlaceLocal, cfg: KMeansConfig) -> None:
    npl = n_places()
    total = cfg.points_per_place * npl
    pts, init = generate(cfg.seed, total, cfg.dim, cfg.k)
    r = here().id
    lo = r * cfg.points_per_place
    rng = LongRange(lo, lo + cfg.points_per_place)
    points.add_chunk(rng, [Point(i, tuple(float(v) for v in pts[i])) for i in range(rng.start, rng.end)])
    cents = [tuple(float(v) for v in pts[int(i)]) for i in init]
    tr: KMeansTrace = trace.value
    team = points.team()
    for it in range(cfg.iterations):
        t0 = time.perf_counter()
        points.parallel_for_each(lambda p: p.assign(cents), workers=cfg.workers)
        t1 = time.perf_counter()
        avg = team.parallel_reduce(AveragePosition(cfg.k, cfg.dim), workers=cfg.workers)
        t2 = time.perf_counter()
        cp = team.parallel_reduce(ClosestPoint(avg.means(cents)), workers=cfg.workers)
        cents = cp.centroids(cents)
        t3 = time.perf_counter()
        tr.centroids.append(cents)
        ms = [(t1 - t0) * 1e3, (t2 - t1) * 1e3, (t3 - t2) * 1e3, (t3 - t0) * 1e3]
        tr.rows.append([it] + ms)


@task
def _read_trace(trace: PlaceLocal) -> KMeansTrace:
    return trace.value


CSV_HEADER = ["iter", "assign_ms", "reduce1_ms", "reduce2_ms", "total_ms"]


def run(cfg: KMeansConfig) -> dict:
    """Run on the current runtime; returns per-place centroid trajectories and place 0's timings."""
    g = TeamedPlaceGroup.world()
    points = DistChunkedList(g)
    trace = PlaceLocal(_new_trace, g)
    g.broadcast_flat(_kmeans_place, points, trace, cfg)
    traces = [at(p, _read_trace, trace) for p in g.members]
    return {
        "centroids": [t.centroids for t in traces],
        "rows": traces[0].rows,
        "header": CSV_HEADER,
    }
