"""Lennard-Jones molecular dynamics in the style of the Java Grande MolDyn kernel.

Particles live in a cachable chunked list replicated on every place. Each
place computes the forces of its tiles of the pair triangle into per-worker
accumulators, folds them into its replica, and a primitive allreduce sums the
partial forces of all places before every place integrates its replica.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..collections import CachableChunkedList, PlaceLocal
from ..group import TeamedPlaceGroup
from ..parallel import AccumulatorCompleteRange
from ..product import new_product_triangle, parallel_for_each_row, teamed_split
from ..ranges import LongRange
from ..runtime import at, here, place, task

DEN = 0.83134
TREF = 0.722
H = 0.064
MIN_CUTOFF = 2.0


class Particle:
    __slots__ = ("x", "y", "z", "vx", "vy", "vz", "fx", "fy", "fz")

    def __init__(self, x, y, z, vx=0.0, vy=0.0, vz=0.0):
        self.x, self.y, self.z = x, y, z
        self.vx, self.vy, self.vz = vx, vy, vz
        self.fx = self.fy = self.fz = 0.0

    def __getstate__(self):
        return tuple(getattr(self, s) for s in self.__slots__)

    def __setstate__(self, st):
        for s, v in zip(self.__slots__, st):
            setattr(self, s, v)

    def state(self) -> tuple:
        return self.__getstate__()

    def add_force(self, f: list) -> None:
        self.fx += f[0]
        self.fy += f[1]
        self.fz += f[2]

    def step(self, side: float, hsq2: float) -> None:
        # scale the force and advance the velocity, then move
        self.fx *= hsq2
        self.fy *= hsq2
        self.fz *= hsq2
        self.vx += self.fx
        self.vy += self.fy
        self.vz += self.fz
        self.x = _wrap(self.x + self.vx + self.fx, side)
        self.y = _wrap(self.y + self.vy + self.fy, side)
        self.z = _wrap(self.z + self.vz + self.fz, side)
        self.vx += self.fx
        self.vy += self.fy
        self.vz += self.fz
        self.fx = self.fy = self.fz = 0.0


def _wrap(c: float, side: float) -> float:
    if c < 0:
        c += side
    if c > side:
        c -= side
    return c


@dataclass(frozen=True)
class Box:
    n: int
    mm: int
    side: float
    a: float
    rcoff: float

    @property
    def sideh(self) -> float:
        return 0.5 * self.side

    @property
    def hsq2(self) -> float:
        return 0.5 * H * H


def box_for(n: int) -> Box:
    mm = round((n / 4) ** (1 / 3))
    if 4 * mm ** 3 != n:
        raise ValueError(f"particle count {n} is not 4*m^3 for an integer m")
    side = (n / DEN) ** (1 / 3)
    # below m=8 the m/4 cutoff falls short of the nearest-neighbour distance
    return Box(n, mm, side, side / mm, max(mm / 4.0, MIN_CUTOFF))


def lattice(box: Box, seed: int | None = 0) -> list[Particle]:
    """FCC lattice; ``seed=None`` leaves every particle at rest."""
    mm, a = box.mm, box.a
    pos = []
    for lg in (0, 1):
        for i in range(mm):
            for j in range(mm):
                for k in range(mm):
                    pos.append((i * a + lg * a * 0.5, j * a + lg * a * 0.5, k * a))
    for lg in (1, 2):
        for i in range(mm):
            for j in range(mm):
                for k in range(mm):
                    pos.append((i * a + (2 - lg) * a * 0.5, j * a + (lg - 1) * a * 0.5, k * a + a * 0.5))
    if seed is None:
        return [Particle(*p) for p in pos]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((box.n, 3))
    v -= v.mean(axis=0)
    ekin = float((v * v).sum())
    ts = 16.0 / (box.n - 1.0) * ekin
    v *= H * math.sqrt(TREF / ts)
    return [Particle(*p, *map(float, vv)) for p, vv in zip(pos, v)]


def pair_force(pi: Particle, pj: Particle, box: Box):
    """Force of ``pj`` on ``pi`` (``pj`` receives the opposite), or ``None`` beyond the cutoff."""
    side, sideh = box.side, box.sideh
    xx = pi.x - pj.x
    yy = pi.y - pj.y
    zz = pi.z - pj.z
    if xx < -sideh:
        xx += side
    if xx > sideh:
        xx -= side
    if yy < -sideh:
        yy += side
    if yy > sideh:
        yy -= side
    if zz < -sideh:
        zz += side
    if zz > sideh:
        zz -= side
    rd = xx * xx + yy * yy + zz * zz
    if rd > box.rcoff * box.rcoff:
        return None
    rrd = 1.0 / rd
    rrd2 = rrd * rrd
    rrd4 = rrd2 * rrd2
    rrd7 = rrd4 * rrd2 * rrd
    r148 = rrd7 - 0.5 * rrd4
    return xx * r148, yy * r148, zz * r148


def _check_finite(parts, offset: int = 0) -> None:
    bad = [offset + i for i, p in enumerate(parts)
           if not all(math.isfinite(v) for v in (p.fx, p.fy, p.fz))]
    if bad:
        raise FloatingPointError(f"non-finite force on particles {bad[:20]}")


def reference(n: int, iterations: int, seed: int | None = 0) -> list[Particle]:
    """Single-threaded O(n^2) kernel; the particles after ``iterations`` steps."""
    box = box_for(n)
    ps = lattice(box, seed)
    for _ in range(iterations):
        reference_forces(ps, box)
        _check_finite(ps)
        for p in ps:
            p.step(box.side, box.hsq2)
    return ps


def reference_forces(ps: list[Particle], box: Box) -> None:
    for i in range(len(ps)):
        pi = ps[i]
        fx = fy = fz = 0.0
        for j in range(i + 1, len(ps)):
            pj = ps[j]
            f = pair_force(pi, pj, box)
            if f is None:
                continue
            fx += f[0]
            fy += f[1]
            fz += f[2]
            pj.fx -= f[0]
            pj.fy -= f[1]
            pj.fz -= f[2]
        pi.fx += fx
        pi.fy += fy
        pi.fz += fz


@dataclass
class MolDynConfig:
    n: int = 256
    iterations: int = 5
    ndivide: int = 4
    seed: int | None = 0
    workers: int | None = None
    split_seed: int = 0


@dataclass
class MolDynTrace:
    rows: list = field(default_factory=list)
    net_force: list = field(default_factory=list)
    final: list = field(default_factory=list)


def _new_trace() -> MolDynTrace:
    return MolDynTrace()


def _zero3(_i: int) -> list:
    return [0.0, 0.0, 0.0]


def _write_force(out, p: Particle) -> None:
    out.write_double(p.fx)
    out.write_double(p.fy)
    out.write_double(p.fz)


def _read_force(src, p: Particle) -> None:
    p.fx = src.read_double()
    p.fy = src.read_double()
    p.fz = src.read_double()


@task
def _moldyn_place(particles: CachableChunkedList, trace: PlaceLocal, cfg: MolDynConfig) -> None:
    box = box_for(cfg.n)
    whole = LongRange(0, cfg.n)
    if here() == place(0):
        particles.add_chunk(whole, lattice(box, cfg.seed))
        particles.share(whole)
    else:
        particles.share()
    g = particles.group
    pairs = teamed_split(new_product_triangle(particles), cfg.ndivide, cfg.ndivide, g, cfg.split_seed)
    acc = AccumulatorCompleteRange(whole, _zero3)
    tr: MolDynTrace = trace.value

    def force(i, pi, view, tla):
        fi = tla[i]
        for j, pj in view.items():
            f = pair_force(pi, pj, box)
            if f is None:
                continue
            fi[0] += f[0]
            fi[1] += f[1]
            fi[2] += f[2]
            fj = tla[j]
            fj[0] -= f[0]
            fj[1] -= f[1]
            fj[2] -= f[2]

    hsq2 = box.hsq2
    for it in range(cfg.iterations):
        t0 = time.perf_counter()
        acc.reset()
        parallel_for_each_row(pairs, acc, force, workers=cfg.workers)
        particles.parallel_accept(acc, Particle.add_force, workers=cfg.workers)
        t1 = time.perf_counter()
        particles.allreduce(_write_force, _read_force)
        t2 = time.perf_counter()
        local = particles.view(whole)
        _check_finite(list(local))
        tr.net_force.append(tuple(math.fsum(getattr(p, c) for p in local) for c in ("fx", "fy", "fz")))
        particles.parallel_for_each(lambda p: p.step(box.side, hsq2), workers=cfg.workers)
        t3 = time.perf_counter()
        tr.rows.append([it, (t1 - t0) * 1e3, (t2 - t1) * 1e3, (t3 - t2) * 1e3])
    tr.final = [p.state() for p in particles.view(whole)]


@task
def _read_trace(trace: PlaceLocal) -> MolDynTrace:
    return trace.value


CSV_HEADER = ["iter", "force_ms", "allreduce_ms", "move_ms"]


def run(cfg: MolDynConfig) -> dict:
    g = TeamedPlaceGroup.world()
    particles = CachableChunkedList(g)
    trace = PlaceLocal(_new_trace, g)
    g.broadcast_flat(_moldyn_place, particles, trace, cfg)
    traces = [at(p, _read_trace, trace) for p in g.members]
    return {
        "final": [t.final for t in traces],
        "net_force": traces[0].net_force,
        "rows": traces[0].rows,
        "header": CSV_HEADER,
    }
