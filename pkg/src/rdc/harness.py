"""Helpers to run one function on every place and collect the results."""

from __future__ import annotations

from typing import Any, Callable

from .collections import PlaceLocal
from .group import TeamedPlaceGroup
from .runtime import at, task


def _none():
    return None


@task
def _call_store(out: PlaceLocal, fn: Callable, args: tuple) -> None:
    out.value = fn(*args)


@task
def _read(out: PlaceLocal):
    return out.value


def run_teamed(fn: Callable, *args: Any, group: TeamedPlaceGroup | None = None) -> list:
    """Call ``fn(*args)`` once on every member (inside one finish); results by rank.

    ``fn`` must be importable by name on every place; collections among
    ``args`` resolve to each place's local handle.
    """
    g = TeamedPlaceGroup.world() if group is None else group
    out = PlaceLocal(_none, g)
    g.broadcast_flat(_call_store, out, fn, args)
    return [at(p, _read, out) for p in g.members]


def on_place(p, fn: Callable, *args: Any) -> Any:
    """Evaluate a plain importable function on place ``p``."""
    return at(p, _apply, fn, args)


@task
def _apply(fn: Callable, args: tuple):
    return fn(*args)
