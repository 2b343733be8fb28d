"""Out-of-core memory management: keep large data sets within a RAM budget by
swapping managed blocks to disk."""

from .config import ManagerConfig, SwapPolicy, load_config
from .core import (
    DEFERRED,
    IMMEDIATE,
    READ_ONLY,
    READ_WRITE,
    AccessMode,
    AdherenceGuard,
    Loading,
    ManagedHandle,
    MemoryManager,
)
from .diag import BudgetSnapshot, EventKind, Tracer, export_timeline
from .errors import *  # noqa: F401,F403
from .scheduler import CyclicScheduler, DummyStrategy
from .swapstore import ChunkSpan, FreeListAllocator

__version__ = "0.1.0"
