"""On-disk table formats (RTable, DTable), blocks, filters and the block cache."""
from .block import BlockHandle, Footer
from .cache import BlockCache
from .dtable import DTable, DTableBuilder, IndexEntry
from .io import Env, FaultInjector, IOStats, io_category
from .rtable import RTable, RTableBuilder

__all__ = [
    "BlockCache",
    "BlockHandle",
    "DTable",
    "DTableBuilder",
    "Env",
    "FaultInjector",
    "Footer",
    "IOStats",
    "IndexEntry",
    "RTable",
    "RTableBuilder",
    "io_category",
]
