"""Relocatable distributed collections over an emulated place runtime."""

from .collections import (
    Bag,
    CachableArray,
    CachableChunkedList,
    DistBag,
    DistChunkedList,
    DistCol,
    DistConcurrentMap,
    DistIdMap,
    DistMap,
    DistMultiMap,
    PlaceLocal,
)
from .group import TeamedPlaceGroup
from .parallel import AccumulatorCompleteRange, AccumulatorSparse, Reducer
from .product import new_product, new_product_triangle, parallel_for_each_row, teamed_split
from .ranges import Chunk, ChunkedList, LongRange, RangeError
from .relocation import (
    CollectiveMoveManager,
    InsufficientEntriesError,
    LongRangeDistribution,
    RelocationError,
    UncoveredKeyError,
    perform_load_balance_level_extremes,
)
from .runtime import (
    FinishError,
    Place,
    Runtime,
    async_,
    async_at,
    at,
    finish,
    here,
    launch,
    n_places,
    place,
    places,
    task,
)

__all__ = [
    "AccumulatorCompleteRange",
    "AccumulatorSparse",
    "Bag",
    "CachableArray",
    "CachableChunkedList",
    "Chunk",
    "ChunkedList",
    "CollectiveMoveManager",
    "DistBag",
    "DistChunkedList",
    "DistCol",
    "DistConcurrentMap",
    "DistIdMap",
    "DistMap",
    "DistMultiMap",
    "FinishError",
    "InsufficientEntriesError",
    "LongRange",
    "LongRangeDistribution",
    "Place",
    "PlaceLocal",
    "RangeError",
    "Reducer",
    "RelocationError",
    "Runtime",
    "TeamedPlaceGroup",
    "UncoveredKeyError",
    "async_",
    "async_at",
    "at",
    "finish",
    "here",
    "launch",
    "n_places",
    "new_product",
    "new_product_triangle",
    "parallel_for_each_row",
    "perform_load_balance_level_extremes",
    "place",
    "places",
    "task",
    "teamed_split",
]
