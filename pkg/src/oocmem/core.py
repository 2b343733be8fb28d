"""Managed blocks, adherence guards and the memory-budget contract."""
from __future__ import annotations

import enum
import logging
import os
import shutil
import struct
import tempfile
import threading
from array import array
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Sequence

from .aio import SWAP_OUT, BudgetLedger, TransferEngine, TransferRequest
from .config import ManagerConfig
from .diag import BudgetSnapshot, EventKind, Tracer
from .errors import (
    GroupExceedsRamLimit,
    HandleStillAdhered,
    InsufficientEvictableBytes,
    IoFailure,
    OutOfMemoryRequest,
    OutOfSwapSpace,
    SizeExceedsRamLimit,
    UnknownHandle,
)
from .scheduler import CyclicScheduler, Strategy
from .swapstore import ChunkSpan, SwapFiles, SwapStore

log = logging.getLogger(__name__)

RESIDENT = 0
PREEMPTIVE_RESIDENT = 1
SWAPPED = 2
SWAPPING_IN = 3
SWAPPING_OUT = 4
_FREE = 255

STATE_NAMES = {
    RESIDENT: "RESIDENT",
    PREEMPTIVE_RESIDENT: "PREEMPTIVE_RESIDENT",
    SWAPPED: "SWAPPED",
    SWAPPING_IN: "SWAPPING_IN",
    SWAPPING_OUT: "SWAPPING_OUT",
}
_IN_RAM = (RESIDENT, PREEMPTIVE_RESIDENT)

# bounded so a lost wakeup only costs latency
_WAIT_SLICE = 0.05


class AccessMode(enum.Enum):
    READ_ONLY = "ro"
    READ_WRITE = "rw"


class Loading(enum.Enum):
    IMMEDIATE = "immediate"
    DEFERRED = "deferred"


READ_ONLY = AccessMode.READ_ONLY
READ_WRITE = AccessMode.READ_WRITE
IMMEDIATE = Loading.IMMEDIATE
DEFERRED = Loading.DEFERRED


@dataclass(frozen=True)
class ManagedHandle:
    """Point-in-time description of one managed block."""

    id: int
    byte_len: int
    element_count: int
    element_size: int
    parent: int | None
    state: str
    dirty: bool
    clean_copy: tuple[ChunkSpan, ...] | None
    adherence_count: int
    pin_count: int


@dataclass
class ManagerStats:
    misses: int = 0
    prefetch_issued: int = 0
    preemptive_hits: int = 0
    blocked_waits: int = 0
    overcommit_waits: int = 0
    decayed: int = 0
    evictions: int = 0
    clean_evictions: int = 0
    bytes_written: int = 0
    bytes_read: int = 0


class AdherenceGuard:
    """Scoped pin on a managed block.

    Use as a context manager; :meth:`pull` returns a memoryview that stays
    valid and identical until the guard is released.
    """

    __slots__ = ("manager", "handle", "mode", "loading", "pulled", "_view", "released")

    def __init__(self, manager: "MemoryManager", handle: int, mode: AccessMode, loading: Loading):
        self.manager = manager
        self.handle = handle
        self.mode = mode
        self.loading = loading
        self.pulled = False
        self.released = False
        self._view: memoryview | None = None

    def pull(self) -> memoryview:
        return self.manager.pull(self)

    def release(self) -> None:
        self.manager.release(self)

    def __enter__(self) -> "AdherenceGuard":
        return self

    def __exit__(self, *exc) -> None:
        self.release()

    def __repr__(self) -> str:
        return (f"AdherenceGuard(handle={self.handle}, mode={self.mode.name}, "
                f"pulled={self.pulled}, released={self.released})")


class MemoryManager:
    """Keeps managed blocks within a RAM budget by swapping them to disk.

    One instance is meant to be shared by every thread of a process.  All
    bookkeeping happens under a single re-entrant lock; file IO runs on the
    transfer workers outside it.
    """

    def __init__(self, config: ManagerConfig, strategy: Strategy | None = None,
                 tracer: Tracer | None = None, prompt: Callable[[int], bool] | None = None,
                 prefetch: bool = True, strict: bool = False):
        self.config = config
        self.ram_limit = int(config.ram_limit_bytes)
        self._lock = threading.RLock()
        self._cv = threading.Condition(self._lock)
        self._group_lock = threading.Lock()
        self.tracer = tracer or Tracer(enabled=False)

        self._own_dir = None
        swap_dir = config.swap_dir
        if swap_dir is None:
            swap_dir = self._own_dir = tempfile.mkdtemp(prefix="oocmem-")

        self.ledger = BudgetLedger(self.ram_limit, strict=strict)
        self.store = SwapStore(SwapFiles(swap_dir, config.swap_file_size_bytes),
                               config.swap_file_size_bytes, config.swap_policy,
                               prompt=prompt, on_purge=self._on_purge)
        self.ledger.allocator = self.store.allocator
        self.engine = TransferEngine(self.store.files, self.ledger, config.worker_count,
                                     cv=self._cv, on_complete=self._on_complete)
        self.engine.record_outcomes = False
        self.store.engine = self.engine
        if strategy is None:
            strategy = CyclicScheduler(self.ram_limit, config.preemptive_budget_bytes,
                                       config.significance_level, prefetch=prefetch,
                                       evictable=self._evictable)
        elif hasattr(strategy, "_evictable"):
            strategy._evictable = self._evictable
        self.scheduler = strategy

        self.stats = ManagerStats()
        self.committed = 0

        # per-handle columns, indexed by handle id
        self._state = bytearray()
        self._len = array("q")
        self._esize = array("i")
        self._dirty = bytearray()
        self._payload: list[bytearray | None] = []
        self._free_ids: list[int] = []
        self._live = 0

        # sparse columns
        self._adherence: dict[int, int] = {}
        self._pins: dict[int, int] = {}
        self._parent: dict[int, int] = {}
        self._children: dict[int, list[int]] = {}
        self._token: dict[int, int] = {}
        self._errors: dict[int, BaseException] = {}
        self._queue: OrderedDict[int, bool] = OrderedDict()
        self._servicing = False
        self._closed = False

    # -- lifecycle -----------------------------------------------------------

    def close(self) -> None:
        with self._cv:
            if self._closed:
                return
            self._closed = True
            self._queue.clear()
        self.engine.shutdown(drain=False)
        self.store.close()
        if self._own_dir is not None:
            shutil.rmtree(self._own_dir, ignore_errors=True)

    def __enter__(self) -> "MemoryManager":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def overcommit(self) -> bool:
        return self.config.overcommit

    def set_overcommit(self, flag: bool) -> None:
        with self._cv:
            self.config.overcommit = bool(flag)

    # -- helpers -------------------------------------------------------------

    def _check(self, hid: int) -> None:
        if not (0 <= hid < len(self._state)) or self._state[hid] == _FREE:
            raise UnknownHandle(hid)

    def _trace(self, kind: EventKind, hid=None, nbytes=None, detail="") -> None:
        if self.tracer.enabled:
            self.tracer.record(kind, hid, nbytes, detail, self._snapshot_locked())

    def _snapshot_locked(self) -> BudgetSnapshot:
        led = self.ledger
        return BudgetSnapshot(
            main_memory_bytes=led.ram_used,
            swap_memory_bytes=led.swap_used,
            swapped_out_cumulative_bytes=self.engine.bytes_written,
            swapped_in_cumulative_bytes=self.engine.bytes_read,
            preemptive_used_bytes=getattr(self.scheduler, "used_bytes", 0),
            pending_in_bytes=led.ram_pending_in,
            pending_out_bytes=led.swap_pending_out,
        )

    def snapshot(self) -> BudgetSnapshot:
        with self._cv:
            return self._snapshot_locked()

    def _wait(self) -> None:
        self._cv.wait(_WAIT_SLICE)

    def _evictable(self, hid: int) -> bool:
        if self._pins.get(hid):
            return False
        st = self._state[hid]
        return st in _IN_RAM or (st == SWAPPED and hid in self._queue)

    # -- creation / destruction ---------------------------------------------

    def _new_id(self) -> int:
        if self._free_ids:
            return self._free_ids.pop()
        hid = len(self._state)
        self._state.append(_FREE)
        self._len.append(0)
        self._esize.append(0)
        self._dirty.append(0)
        self._payload.append(None)
        return hid

    def create_managed(self, element_count: int, element_size: int = 1, init=None,
                       parent: int | None = None) -> int:
        """Allocate a resident block of ``element_count * element_size`` bytes.

        ``init`` is an optional ``element_size``-byte pattern repeated over the
        block; otherwise the block is zero-filled.
        """
        if element_count <= 0 or element_size <= 0:
            raise ValueError("element_count and element_size must be positive")
        nbytes = element_count * element_size
        if nbytes > self.ram_limit:
            raise SizeExceedsRamLimit(f"{nbytes} bytes > RAM limit {self.ram_limit}")
        if init is not None:
            pattern = bytes(init)
            if len(pattern) != element_size:
                raise ValueError("fill pattern must be exactly element_size bytes")
            payload = bytearray(pattern) * element_count
        else:
            payload = bytearray(nbytes)
        with self._cv:
            if parent is not None:
                self._check(parent)
            self._reserve_fresh(nbytes)
            hid = self._new_id()
            self._state[hid] = RESIDENT
            self._len[hid] = nbytes
            self._esize[hid] = element_size
            self._dirty[hid] = 1
            self._payload[hid] = payload
            self._live += 1
            if parent is not None:
                self._parent[hid] = parent
                self._children.setdefault(parent, []).append(hid)
            self.scheduler.register(hid, nbytes)
            self._trace(EventKind.CREATE, hid, nbytes)
            return hid

    def create_array(self, shape: Sequence[int], element_size: int, init=None) -> int:
        """Multidimensional allocation collapsed to nested handles.

        All but the last dimension become blocks of 8-byte child handle ids;
        read them back with :meth:`child_ids`.
        """
        shape = tuple(int(s) for s in shape)
        if not shape:
            raise ValueError("shape must not be empty")
        return self._create_nested(shape, element_size, init, None)

    def _create_nested(self, shape, element_size, init, parent):
        if len(shape) == 1:
            return self.create_managed(shape[0], element_size, init, parent=parent)
        outer = self.create_managed(shape[0], 8, parent=parent)
        ids = [self._create_nested(shape[1:], element_size, init, outer)
               for _ in range(shape[0])]
        with self.adhere(outer, READ_WRITE) as g:
            g.pull()[:] = struct.pack(f"<{len(ids)}q", *ids)
        return outer

    def child_ids(self, hid: int) -> list[int]:
        with self.adhere(hid, READ_ONLY) as g:
            view = g.pull()
            return list(struct.unpack(f"<{len(view) // 8}q", view))

    def _reserve_fresh(self, nbytes: int) -> None:
        led = self.ledger
        while True:
            if led.headroom >= nbytes:
                led.add_resident(nbytes)
                return
            deficit = nbytes - led.headroom - led.freeing_soon
            if deficit > 0 and self._make_room(deficit):
                continue
            if deficit > 0 and self.engine.in_flight == 0:
                if not self.config.overcommit:
                    raise OutOfMemoryRequest(
                        f"cannot make {nbytes} bytes resident: remaining data is pinned")
                self.stats.overcommit_waits += 1
            self._wait()

    def destroy_managed(self, hid: int) -> None:
        with self._cv:
            self._check(hid)
            self._destroy_tree(hid)
            self._cv.notify_all()

    def _subtree(self, hid: int) -> list[int]:
        out = [hid]
        for child in self._children.get(hid, ()):
            out.extend(self._subtree(child))
        return out

    def _destroy_tree(self, hid: int) -> None:
        for h in self._subtree(hid):
            if self._adherence.get(h):
                raise HandleStillAdhered(h)
        for child in reversed(self._children.get(hid, [])):
            self._destroy_tree(child)
        self._destroy_one(hid)

    def _destroy_one(self, hid: int) -> None:
        while self._state[hid] in (SWAPPING_IN, SWAPPING_OUT):
            self._wait()
        if self._adherence.get(hid):
            raise HandleStillAdhered(hid)
        st = self._state[hid]
        nbytes = self._len[hid]
        self._queue.pop(hid, None)
        if st in _IN_RAM:
            self.ledger.drop_resident(nbytes)
        self.store.release(hid)
        self.scheduler.unregister(hid)
        self._trace(EventKind.DESTROY, hid, nbytes, "resident" if st in _IN_RAM else "swapped")
        parent = self._parent.pop(hid, None)
        if parent is not None and parent in self._children:
            self._children[parent].remove(hid)
            if not self._children[parent]:
                del self._children[parent]
        self._children.pop(hid, None)
        self._errors.pop(hid, None)
        self._state[hid] = _FREE
        self._payload[hid] = None
        self._dirty[hid] = 0
        self._len[hid] = 0
        self._free_ids.append(hid)
        self._live -= 1

    # -- adherence -------------------------------------------------------------

    def adhere(self, hid: int, mode: AccessMode = READ_WRITE,
               loading: Loading = IMMEDIATE) -> AdherenceGuard:
        """Declare use of ``hid``; IMMEDIATE loading starts a swap-in without blocking."""
        mode, loading = AccessMode(mode), Loading(loading)
        with self._cv:
            self._check(hid)
            self._adherence[hid] = self._adherence.get(hid, 0) + 1
            guard = AdherenceGuard(self, hid, mode, loading)
            self._trace(EventKind.ADHERE, hid, None, mode.value)
            if loading is IMMEDIATE:
                st = self._state[hid]
                if st == SWAPPING_OUT:
                    self._rescue(hid)
                elif st == SWAPPED and hid not in self._queue:
                    self._request_load(hid, demand=False)
                    self._service_queue(raise_errors=False)
            return guard

    def release(self, guard: AdherenceGuard) -> None:
        with self._cv:
            if guard.released:
                return
            guard.released = True
            hid = guard.handle
            if guard.pulled:
                self._unpin(hid)
            left = self._adherence[hid] - 1
            if left:
                self._adherence[hid] = left
            else:
                del self._adherence[hid]
            if guard._view is not None:
                try:
                    guard._view.release()
                except BufferError:
                    pass  # exported to e.g. numpy; the buffer outlives the guard
            self._trace(EventKind.RELEASE, hid)
            self._cv.notify_all()

    def _unpin(self, hid: int) -> None:
        left = self._pins[hid] - 1
        if left:
            self._pins[hid] = left
        else:
            del self._pins[hid]
            self.committed -= self._len[hid]

    def _pin(self, hids: list[int]) -> None:
        """Pin one reference per entry, waiting or failing if the pinned set would overflow."""
        waited = False
        while True:
            need = sum(self._len[h] for h in set(hids) if not self._pins.get(h))
            if self.committed + need <= self.ram_limit:
                break
            if not self.config.overcommit:
                raise OutOfMemoryRequest(
                    f"pinning {need} more bytes exceeds the RAM limit "
                    f"({self.committed} of {self.ram_limit} already pinned)")
            if not waited:
                waited = True
                self.stats.overcommit_waits += 1
                self._trace(EventKind.BLOCKED, hids[0], need, "overcommit")
            self._wait()
        if waited:
            self._trace(EventKind.UNBLOCKED, hids[0], None, "overcommit")
        for h in hids:
            count = self._pins.get(h, 0)
            if not count:
                self.committed += self._len[h]
            self._pins[h] = count + 1

    def pull(self, guard: AdherenceGuard) -> memoryview:
        """Return the block's contiguous data, blocking until it is resident."""
        if guard.released:
            raise ValueError("guard already released")
        if guard.pulled:
            return guard._view
        with self._cv:
            if guard.pulled:
                return guard._view
            hid = guard.handle
            self._pin([hid])
            try:
                self._make_resident(hid)
            except BaseException:
                self._unpin(hid)
                raise
            self._finish_pull(guard)
            return guard._view

    def pull_group(self, guards: Sequence[AdherenceGuard]) -> list[memoryview]:
        """Pull several guards as one unit under a global serialisation scope."""
        for g in guards:
            if g.released:
                raise ValueError("guard already released")
        distinct = {g.handle for g in guards}
        with self._cv:
            for h in distinct:
                self._check(h)
            total = sum(self._len[h] for h in distinct)
        if total > self.ram_limit:
            raise GroupExceedsRamLimit(f"group needs {total} bytes > {self.ram_limit}")
        with self._group_lock, self._cv:
            todo = [g for g in guards if not g.pulled]
            hids = [g.handle for g in todo]
            if todo:
                self._pin(hids)
                try:
                    for h in dict.fromkeys(hids):
                        if self._state[h] == SWAPPING_OUT:
                            self._rescue(h)
                        elif self._state[h] == SWAPPED and h not in self._queue:
                            self._request_load(h, demand=True)
                    for h in dict.fromkeys(hids):
                        self._make_resident(h)
                except BaseException:
                    for h in hids:
                        self._unpin(h)
                    raise
                for g in todo:
                    self._finish_pull(g)
            return [g._view for g in guards]

    def _finish_pull(self, guard: AdherenceGuard) -> None:
        hid = guard.handle
        if self.scheduler.is_preemptive(hid):
            self.stats.preemptive_hits += 1
            self._trace(EventKind.PREEMPTIVE_HIT, hid, self._len[hid])
        self.scheduler.touch(hid)
        self._state[hid] = RESIDENT
        if guard.mode is READ_WRITE:
            self._dirty[hid] = 1
            self.store.release(hid)
        view = memoryview(self._payload[hid])
        guard._view = view if guard.mode is READ_WRITE else view.toreadonly()
        guard.pulled = True
        self._trace(EventKind.PULL, hid, self._len[hid], guard.mode.value)

    def _make_resident(self, hid: int) -> None:
        blocked = False
        while True:
            err = self._errors.pop(hid, None)
            if err is not None:
                raise IoFailure(getattr(err, "errno", None) or 5,
                                f"swap-in of handle {hid} failed: {err}") from err
            st = self._state[hid]
            if st in _IN_RAM:
                break
            if st == SWAPPING_OUT:
                self._rescue(hid)
                break
            if st == SWAPPED:
                if hid in self._queue:
                    self._queue[hid] = True
                    self._queue.move_to_end(hid, last=False)
                else:
                    self._request_load(hid, demand=True)
                self._service_queue(raise_errors=True)
                if self._state[hid] != SWAPPED:
                    continue
            if not blocked:
                blocked = True
                self.stats.blocked_waits += 1
                self._trace(EventKind.BLOCKED, hid, self._len[hid], STATE_NAMES[st])
            self._wait()
        if blocked:
            self._trace(EventKind.UNBLOCKED, hid)

    # -- swapping ----------------------------------------------------------------

    def _request_load(self, hid: int, demand: bool) -> None:
        """Demand miss: plan the swap-in plus prefetch and queue the reads."""
        self.stats.misses += 1
        self._trace(EventKind.MISS, hid, self._len[hid])
        plan = self.scheduler.plan_swap_in(hid)
        for victim in self.scheduler.take_decayed():
            self.stats.decayed += 1
            self._trace(EventKind.DECAY, victim, self._len[victim])
            self._evict(victim)
        self._queue[hid] = demand
        if demand:
            self._queue.move_to_end(hid, last=False)
        for extra in plan[1:]:
            st = self._state[extra]
            self.stats.prefetch_issued += 1
            self._trace(EventKind.PREFETCH_ISSUE, extra, self._len[extra])
            if st == SWAPPING_OUT:
                self._rescue(extra, readmit=False)
            elif st == SWAPPED:
                self._queue[extra] = False

    def _service_queue(self, raise_errors: bool) -> None:
        """Submit queued swap-ins in order while RAM allows, evicting as needed."""
        if self._servicing or self._closed:
            return
        self._servicing = True
        led = self.ledger
        try:
            while self._queue:
                hid = next(iter(self._queue))
                if self._state[hid] != SWAPPED:
                    del self._queue[hid]
                    continue
                nbytes = self._len[hid]
                if led.headroom >= nbytes:
                    del self._queue[hid]
                    self._state[hid] = SWAPPING_IN
                    self._trace(EventKind.LOAD_SUBMIT, hid, nbytes)
                    self._token[hid] = self.store.load(hid, nbytes)
                    continue
                deficit = nbytes - led.headroom - led.freeing_soon
                if deficit <= 0:
                    break
                try:
                    progressed = self._make_room(deficit)
                except OutOfSwapSpace:
                    if raise_errors:
                        raise
                    log.warning("swap full while making room for handle %d", hid)
                    break
                if not progressed or led.headroom < nbytes:
                    break
        finally:
            self._servicing = False

    def _make_room(self, deficit: int) -> bool:
        try:
            victims = self.scheduler.make_room(deficit)
        except InsufficientEvictableBytes:
            return False
        for i, victim in enumerate(victims):
            try:
                self._evict(victim)
            except OutOfSwapSpace:
                for rest in victims[i:]:
                    if self._state[rest] in _IN_RAM:
                        self.scheduler.readmit(rest)
                raise
        return True

    def _evict(self, hid: int) -> None:
        st = self._state[hid]
        if st == SWAPPED:
            # queued read that never started
            self._queue.pop(hid, None)
            return
        nbytes = self._len[hid]
        clean = not self._dirty[hid] and self.store.has_spans(hid)
        self._state[hid] = SWAPPING_OUT
        self.stats.evictions += 1
        self._trace(EventKind.EVICT, hid, nbytes, "clean" if clean else "dirty")
        try:
            token = self.store.store(hid, self._payload[hid], nbytes, reuse_clean=clean)
        except OutOfSwapSpace:
            self._state[hid] = st
            self._trace(EventKind.POLICY_FIRED, hid, nbytes, "swap full")
            raise
        if clean:
            self.stats.clean_evictions += 1
        elif self._state[hid] == SWAPPING_OUT:
            self._trace(EventKind.STORE_SUBMIT, hid, nbytes)
            self._token[hid] = token

    def _rescue(self, hid: int, readmit: bool = True) -> None:
        """Take back a block whose swap-out is still in flight; its buffer never left RAM."""
        self.engine.rescue(self._token[hid])
        if readmit:
            self.scheduler.readmit(hid)
            self._state[hid] = RESIDENT
        else:
            self._state[hid] = (PREEMPTIVE_RESIDENT if self.scheduler.is_preemptive(hid)
                                else RESIDENT)

    def _on_purge(self, hid: int) -> None:
        self._dirty[hid] = 1
        self._trace(EventKind.PURGE, hid, self._len[hid])

    def _on_complete(self, req: TransferRequest) -> None:
        hid = req.handle
        if self._state[hid] == _FREE:
            return
        if self._token.get(hid) == req.token:
            del self._token[hid]
        n = req.byte_len
        if req.direction == SWAP_OUT:
            if req.clean:
                self._state[hid] = SWAPPED
                self._payload[hid] = None
                self._trace(EventKind.TRANSFER_DONE, hid, n, "out-clean")
            elif req.state == "DONE" and req.rescued:
                if self._dirty[hid] or self._state[hid] not in _IN_RAM:
                    self.store.allocator.free(req.spans)
                else:
                    self.store.attach(hid, req.spans, cached=True)
                self._trace(EventKind.TRANSFER_DONE, hid, n, "out-rescued")
            elif req.state == "DONE":
                self._state[hid] = SWAPPED
                self._payload[hid] = None
                self._dirty[hid] = 0
                self.store.attach(hid, req.spans)
                self._trace(EventKind.TRANSFER_DONE, hid, n, "out")
            else:
                self.store.allocator.free(req.spans)
                if not req.rescued:
                    self._state[hid] = RESIDENT
                    self.scheduler.readmit(hid)
                self._trace(EventKind.TRANSFER_DONE, hid, n, "failed")
        else:
            if req.state == "DONE":
                self._payload[hid] = req.result
                self._state[hid] = (PREEMPTIVE_RESIDENT if self.scheduler.is_preemptive(hid)
                                    else RESIDENT)
                self._dirty[hid] = 0
                self.store.cache(hid)
                self._trace(EventKind.TRANSFER_DONE, hid, n, "in")
            else:
                self._state[hid] = SWAPPED
                self.scheduler.mark_swapped(hid)
                self._errors[hid] = req.error
                self._trace(EventKind.TRANSFER_DONE, hid, n, "failed")
        req.result = None
        self.stats.bytes_written = self.engine.bytes_written
        self.stats.bytes_read = self.engine.bytes_read
        self._service_queue(raise_errors=False)

    # -- bulk operations and introspection --------------------------------------

    def flush(self) -> None:
        """Swap out every unpinned block and wait until all transfers finish."""
        with self._cv:
            while True:
                total = sum(self._len[h] for h, st in enumerate(self._state)
                            if st != _FREE and self._evictable(h))
                if total:
                    self._make_room(total)
                if not self.engine.in_flight:
                    break
                self._wait()

    def quiesce(self) -> None:
        """Wait until no transfer is in flight."""
        with self._cv:
            self._service_queue(raise_errors=True)
            while self.engine.in_flight:
                self._wait()

    def handles(self) -> list[int]:
        with self._cv:
            return [h for h, st in enumerate(self._state) if st != _FREE]

    def __len__(self) -> int:
        return self._live

    def info(self, hid: int) -> ManagedHandle:
        with self._cv:
            self._check(hid)
            spans = self.store.spans_of(hid)
            dirty = bool(self._dirty[hid])
            clean = tuple(spans) if spans and not dirty and self._state[hid] in _IN_RAM else None
            n, es = self._len[hid], self._esize[hid]
            return ManagedHandle(hid, n, n // es, es, self._parent.get(hid),
                                 STATE_NAMES[self._state[hid]], dirty, clean,
                                 self._adherence.get(hid, 0), self._pins.get(hid, 0))

    def state(self, hid: int) -> str:
        with self._cv:
            self._check(hid)
            return STATE_NAMES[self._state[hid]]

    def check_invariants(self) -> None:
        """Cross-check ledger, scheduler and per-handle state; raises AssertionError."""
        with self._cv:
            led = self.ledger
            assert led.ram_used + led.ram_pending_in <= self.ram_limit, led
            resident = pending = committed = 0
            for h, st in enumerate(self._state):
                if st == _FREE:
                    continue
                n = self._len[h]
                if st in _IN_RAM or st == SWAPPING_OUT:
                    resident += n
                    assert self._payload[h] is not None
                elif st == SWAPPING_IN:
                    pending += n
                if self._pins.get(h):
                    committed += n
                    assert st in _IN_RAM or st == SWAPPING_IN or st == SWAPPED, st
                if st in _IN_RAM and self.store.has_spans(h):
                    assert not self._dirty[h], f"handle {h} dirty with clean copy"
                if st == SWAPPED and h not in self._token:
                    assert self.store.has_spans(h), f"swapped handle {h} has no spans"
            assert resident == led.ram_used, (resident, led.ram_used)
            assert pending == led.ram_pending_in, (pending, led.ram_pending_in)
            assert committed == self.committed <= self.ram_limit
            assert led.swap_used == self.store.allocator.allocated_bytes
            if hasattr(self.scheduler, "check"):
                self.scheduler.check()


def manager_from_env(path: str | os.PathLike | None = None, **kwargs) -> MemoryManager:
    from .config import load_config

    return MemoryManager(load_config(path), **kwargs)
