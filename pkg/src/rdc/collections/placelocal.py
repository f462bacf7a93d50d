from __future__ import annotations

from typing import Any, Callable

from .base import DistHandle


class PlaceLocal(DistHandle):
    """One independent value per place, built lazily by ``factory()``.

    ``factory`` must be importable by name (a module-level function or class)
    because every place calls it on first use.
    """

    def __init__(self, factory: Callable[[], Any], group=None):
        DistHandle.__init__(self, group, factory=factory)

    def _init_local(self, factory) -> None:
        self._factory = factory
        self._value = None
        self._built = False

    @property
    def value(self) -> Any:
        if not self._built:
            self._value = self._factory()
            self._built = True
        return self._value

    @value.setter
    def value(self, v: Any) -> None:
        self._value = v
        self._built = True

    def __len__(self) -> int:
        return 1
