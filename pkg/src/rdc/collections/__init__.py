from .bag import Bag, DistBag
from .base import DistHandle, Team
from .cachable import CachableArray, CachableChunkedList
from .chunked import DistChunkedList, DistCol
from .maps import DistConcurrentMap, DistIdMap, DistMap, DistMultiMap
from .placelocal import PlaceLocal

__all__ = [
    "Bag",
    "CachableArray",
    "CachableChunkedList",
    "DistBag",
    "DistChunkedList",
    "DistCol",
    "DistConcurrentMap",
    "DistHandle",
    "DistIdMap",
    "DistMap",
    "DistMultiMap",
    "PlaceLocal",
    "Team",
]
