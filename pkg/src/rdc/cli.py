"""``rdc-run``: boot a runtime and execute one driver.

Usage::

    rdc-run --places 4 [--transport inproc|proc] [--workers W] [--plot] -- <driver> <driver args>
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .runtime import launch

log = logging.getLogger("rdc.cli")

KMEANS_PRESETS = {
    # per-place points, dimension, clusters, iterations
    "small": (10_000_000, 3, 50, 30),
    "large": (10_000_000, 5, 2000, 30),
}


@dataclass
class Driver:
    name: str
    configure: Callable[[argparse.ArgumentParser], None]
    execute: Callable[[argparse.Namespace], dict]
    plot: Callable[[dict, Path], Path] | None = None


def _kmeans_args(p):
    p.add_argument("--points", type=int, default=10_000, help="points per place")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--config", choices=sorted(KMEANS_PRESETS), help="benchmark preset (overrides sizes)")


def _kmeans(a) -> dict:
    from .apps import kmeans

    pts, dim, k, iters = (a.points, a.dim, a.k, a.iters) if a.config is None else KMEANS_PRESETS[a.config]
    if k < 1 or dim < 1:
        raise ValueError("--k and --dim must be >= 1")
    res = kmeans.run(kmeans.KMeansConfig(pts, dim, k, iters, a.seed, a.workers))
    same = all(c == res["centroids"][0] for c in res["centroids"])
    res["checks"] = {"replicas": (same, "centroids identical on every place")}
    res["summary"] = {"final_centroids": [list(c) for c in res["centroids"][0][-1]] if iters else []}
    return res


def _moldyn_args(p):
    p.add_argument("--n", type=int, default=256, help="particles (4*m^3)")
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--ndivide", type=int, default=4, help="tile grid size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--at-rest", action="store_true", help="start with zero velocities")


def _moldyn(a) -> dict:
    from .apps import moldyn

    cfg = moldyn.MolDynConfig(a.n, a.iters, a.ndivide, None if a.at_rest else a.seed, a.workers)
    res = moldyn.run(cfg)
    same = all(f == res["final"][0] for f in res["final"])
    net = max((abs(v) for f in res["net_force"] for v in f), default=0.0)
    res["checks"] = {
        "replicas": (same, "particle replicas identical on every place"),
        "net-force": (net <= 1e-9, f"max |net force component| = {net:.3e}"),
    }
    res["summary"] = {"max_net_force": net}
    return res


def _market_args(p):
    p.add_argument("--agents", type=int, default=3000)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--lb", choices=["none", "level-extremes"], default="none")
    p.add_argument("--lb-period", type=int, default=10)
    p.add_argument("--profile", default=None, help="slow:<place>:<factor>[,...] or disturb:<seed>:<period>")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--work-us", type=float, default=50.0, help="simulated cost of one agent per round")
    p.add_argument("--wallclock", action="store_true", help="really sleep for the simulated phase-2 time")


def _market(a) -> dict:
    from .apps import marketsim as ms

    cfg = ms.MarketConfig(a.agents, a.iters, a.lb, a.lb_period, ms.ClusterProfile.parse(a.profile), a.seed,
                          a.work_us, a.workers, a.wallclock)
    res = ms.run(cfg)
    res["checks"] = {
        "dispatch": (res["updates_generated"] == res["updates_executed"],
                     f"{res['updates_generated']} updates generated, {res['updates_executed']} executed"),
        "agents": (res["agents"] == a.agents, f"{res['agents']} agents after the run"),
    }
    res["summary"] = {"total_sim_ms": res["total_sim_ms"], "state_hash": res["hash"], "moves": len(res["moves"])}
    return res


def _hello(_a) -> dict:
    from .apps import demos

    return demos.run_hello()


def _rotation(_a) -> dict:
    from .apps import demos

    return demos.run_rotation()


def _plot_phases(title):
    def plot(res, path):
        from .apps import report

        return report.plot_phases(res["header"], res["rows"], path, title)

    return plot


def _plot_market(res, path):
    from .apps import report

    return report.plot_distribution(res["rows"], path)


DRIVERS = {
    d.name: d
    for d in [
        Driver("kmeans", _kmeans_args, _kmeans, _plot_phases("k-means iteration phases")),
        Driver("moldyn", _moldyn_args, _moldyn, _plot_phases("moldyn iteration phases")),
        Driver("marketsim", _market_args, _market, _plot_market),
        Driver("hello", lambda p: None, _hello),
        Driver("rotation", lambda p: None, _rotation),
    ]
}


def runtime_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rdc-run",
        description="Run a distributed-collections driver on emulated places.",
        epilog=f"drivers: {', '.join(DRIVERS)}",
    )
    p.add_argument("--places", type=int, default=1)
    p.add_argument("--transport", choices=["inproc", "proc"], default="inproc")
    p.add_argument("--workers", type=int, default=None, help="workers per place (default: CPU count)")
    p.add_argument("--plot", action="store_true", help="also write a PNG figure next to the CSV")
    p.add_argument("--timeout-ms", type=int, default=None, help="collective timeout")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def driver_parser(d: Driver) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog=f"rdc-run -- {d.name}")
    d.configure(p)
    p.add_argument("--out", default=None, help="CSV output path")
    p.add_argument("--plot", action="store_true", help="also write a PNG figure next to the CSV")
    return p


def parse(argv: list[str]):
    """Split ``argv`` at ``--`` and parse both halves; raises ``SystemExit(2)`` on usage errors."""
    rp = runtime_parser()
    if "--" in argv:
        k = argv.index("--")
        head, tail = argv[:k], argv[k + 1:]
    else:
        k = next((i for i, t in enumerate(argv) if t in DRIVERS), len(argv))
        head, tail = argv[:k], argv[k:]
    ra = rp.parse_args(head)
    if not tail:
        rp.error("missing driver")
    name = tail[0]
    if name not in DRIVERS:
        rp.error(f"unknown driver {name!r} (choose from {', '.join(DRIVERS)})")
    if ra.places < 1:
        rp.error("--places must be >= 1")
    d = DRIVERS[name]
    da = driver_parser(d).parse_args(tail[1:])
    ra.plot = ra.plot or da.plot
    if ra.plot and da.out is None:
        rp.error("--plot needs the driver's --out")
    da.workers = ra.workers
    return ra, d, da


def execute(ra, d: Driver, da) -> dict:
    """Boot a fresh runtime, run the driver, write outputs; returns the driver result."""
    # task modules must be imported before forked places start
    from .apps import demos, kmeans, marketsim, moldyn  # noqa: F401

    with launch(ra.places, workers=ra.workers, transport=ra.transport, collective_timeout_ms=ra.timeout_ms):
        res = d.execute(da)
    if da.out is not None:
        from .apps import report

        res["csv"] = str(report.write_csv(da.out, res["header"], res["rows"]))
        if ra.plot and d.plot is not None:
            res["figure"] = str(d.plot(res, report.figure_path(da.out)))
    return res


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ra, d, da = parse(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if ra.verbose else logging.WARNING)
    try:
        res = execute(ra, d, da)
    except Exception as e:
        print(f"rdc-run: {d.name} failed: {e}", file=sys.stderr)
        if ra.verbose:
            traceback.print_exc()
        return 1
    failed = {k: m for k, (ok, m) in res.get("checks", {}).items() if not ok}
    out = {
        "driver": d.name,
        "places": ra.places,
        "rows": len(res["rows"]),
        "checks": {k: ok for k, (ok, _m) in res.get("checks", {}).items()},
        **res.get("summary", {}),
    }
    for k in ("csv", "figure"):
        if k in res:
            out[k] = res[k]
    print(json.dumps(out))
    if failed:
        for k, m in failed.items():
            print(f"rdc-run: check {k} failed: {m}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
