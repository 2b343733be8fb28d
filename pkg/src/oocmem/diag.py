"""Event tracing, budget snapshots and timeline export."""
from __future__ import annotations

import csv
import enum
import json
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass
from typing import Iterable, NamedTuple

from .errors import IoFailure


class EventKind(enum.Enum):
    CREATE = "CREATE"
    DESTROY = "DESTROY"
    ADHERE = "ADHERE"
    PULL = "PULL"
    RELEASE = "RELEASE"
    TOUCH = "TOUCH"
    MISS = "MISS"
    PREFETCH_ISSUE = "PREFETCH_ISSUE"
    PREEMPTIVE_HIT = "PREEMPTIVE_HIT"
    DECAY = "DECAY"
    EVICT = "EVICT"
    STORE_SUBMIT = "STORE_SUBMIT"
    LOAD_SUBMIT = "LOAD_SUBMIT"
    TRANSFER_DONE = "TRANSFER_DONE"
    PURGE = "PURGE"
    POLICY_FIRED = "POLICY_FIRED"
    BLOCKED = "BLOCKED"
    UNBLOCKED = "UNBLOCKED"


@dataclass(frozen=True)
class BudgetSnapshot:
    main_memory_bytes: int = 0
    swap_memory_bytes: int = 0
    swapped_out_cumulative_bytes: int = 0
    swapped_in_cumulative_bytes: int = 0
    preemptive_used_bytes: int = 0
    pending_in_bytes: int = 0
    pending_out_bytes: int = 0

    def as_row(self) -> tuple[int, ...]:
        return tuple(asdict(self).values())


class TraceEvent(NamedTuple):
    timestamp: int  # ns since tracer start
    kind: EventKind
    handle: int | None
    bytes: int | None
    detail: str
    thread: int
    snapshot: BudgetSnapshot | None


TIMELINE_HEADER = ("time_ms,main_memory_bytes,swap_memory_bytes,swapped_out_cum,"
                   "swapped_in_cum,preemptive_bytes,pending_in,pending_out")


class Tracer:
    """Bounded in-memory event ring.

    When full, the oldest events are overwritten and counted as dropped.
    """

    def __init__(self, capacity: int = 100_000, enabled: bool = True):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.enabled = enabled
        self._ring: deque[TraceEvent] = deque(maxlen=capacity)
        self._lock = threading.Lock()
        self.recorded = 0
        self._t0 = time.monotonic_ns()

    @property
    def dropped(self) -> int:
        return max(self.recorded - len(self._ring), 0)

    def record(self, kind: EventKind, handle: int | None = None, nbytes: int | None = None,
               detail: str = "", snapshot: BudgetSnapshot | None = None) -> None:
        if not self.enabled:
            return
        ev = TraceEvent(time.monotonic_ns() - self._t0, kind, handle, nbytes,
                        detail, threading.get_ident(), snapshot)
        with self._lock:
            self.recorded += 1
            self._ring.append(ev)

    def events(self) -> list[TraceEvent]:
        return list(self._ring)

    def clear(self) -> None:
        with self._lock:
            self._ring.clear()
            self.recorded = 0

    def dump_jsonl(self, path) -> None:
        try:
            with open(path, "w") as fh:
                for ev in self.events():
                    row = {"timestamp": ev.timestamp, "kind": ev.kind.value,
                           "handle": ev.handle, "bytes": ev.bytes, "detail": ev.detail,
                           "thread": ev.thread}
                    if ev.snapshot is not None:
                        row["snapshot"] = asdict(ev.snapshot)
                    fh.write(json.dumps(row) + "\n")
        except OSError as exc:
            raise IoFailure(exc.errno, f"cannot write {path}") from exc


def timeline_rows(events: Iterable[TraceEvent], sample_period_ms: float) -> list[tuple]:
    """Sample the last known snapshot at every period boundary."""
    if sample_period_ms <= 0:
        raise ValueError("sample_period_ms must be positive")
    stamped = sorted((ev for ev in events if ev.snapshot is not None),
                     key=lambda ev: ev.timestamp)
    if not stamped:
        return [(0.0,) + BudgetSnapshot().as_row()]
    period_ns = sample_period_ms * 1e6
    end = stamped[-1].timestamp
    rows = []
    current = BudgetSnapshot()
    i = 0
    step = 0
    while True:
        t = step * period_ns
        while i < len(stamped) and stamped[i].timestamp <= t:
            current = stamped[i].snapshot
            i += 1
        rows.append((round(step * sample_period_ms, 6),) + current.as_row())
        if t >= end:
            break
        step += 1
    return rows


def export_timeline(events: Iterable[TraceEvent], path, sample_period_ms: float) -> int:
    """Write the sampled budget timeline as CSV; returns the number of data rows."""
    rows = timeline_rows(events, sample_period_ms)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(TIMELINE_HEADER + "\n")
            csv.writer(fh, lineterminator="\n").writerows(rows)
    except OSError as exc:
        raise IoFailure(exc.errno, f"cannot write {path}") from exc
    return len(rows)


def replay(events: Iterable[TraceEvent]) -> BudgetSnapshot:
    """Recompute resident and cumulative transfer bytes from event payloads alone.

    Fields that cannot be derived from events (pending and pre-emptive bytes)
    are taken from the last snapshot.
    """
    main = out_cum = in_cum = 0
    last = BudgetSnapshot()
    for ev in events:
        if ev.snapshot is not None:
            last = ev.snapshot
        k, n = ev.kind, ev.bytes or 0
        if k is EventKind.CREATE:
            main += n
        elif k is EventKind.DESTROY and ev.detail == "resident":
            main -= n
        elif k is EventKind.TRANSFER_DONE:
            if ev.detail == "in":
                main += n
                in_cum += n
            elif ev.detail == "out":
                main -= n
                out_cum += n
            elif ev.detail == "out-clean":
                main -= n
            elif ev.detail == "out-rescued":
                out_cum += n
    return BudgetSnapshot(main, last.swap_memory_bytes, out_cum, in_cum,
                          last.preemptive_used_bytes, last.pending_in_bytes,
                          last.pending_out_bytes)
