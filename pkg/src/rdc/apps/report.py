"""CSV output and matplotlib figures for the drivers."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in r])
    return path


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as f:
        rows = list(csv.reader(f))
    return (rows[0], rows[1:]) if rows else ([], [])


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_phases(header: list[str], rows: list[list], path: str | Path, title: str) -> Path:
    """Stacked per-iteration phase times (every ``*_ms`` column except totals)."""
    cols = [k for k, h in enumerate(header) if h.endswith("_ms") and h != "total_ms"]
    iters = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    bottom = [0.0] * len(rows)
    for k in cols:
        vals = [float(r[k]) for r in rows]
        ax.bar(iters, vals, bottom=bottom, label=header[k])
        bottom = [b + v for b, v in zip(bottom, vals)]
    ax.set_xlabel("iteration")
    ax.set_ylabel("ms")
    ax.set_title(title)
    ax.legend()
    return _save(fig, Path(path))


def plot_distribution(rows: list[list], path: str | Path, title: str = "market simulation") -> Path:
    """Agents held and phase-2 time per place over the iterations."""
    held: dict[int, list] = defaultdict(list)
    phase: dict[int, list] = defaultdict(list)
    for it, p, ms, h in rows:
        held[int(p)].append((int(it), int(h)))
        phase[int(p)].append((int(it), float(ms)))
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for p in sorted(held):
        xs, ys = zip(*held[p])
        a1.plot(xs, ys, label=f"place {p}")
        xs, ys = zip(*phase[p])
        a2.plot(xs, ys, label=f"place {p}")
    a1.set_ylabel("agents held")
    a1.set_title(title)
    a1.legend(loc="upper right", fontsize="small")
    a2.set_ylabel("phase 2 (simulated ms)")
    a2.set_xlabel("iteration")
    return _save(fig, Path(path))


def figure_path(csv_path: str | Path) -> Path:
    return Path(csv_path).with_suffix(".png")
