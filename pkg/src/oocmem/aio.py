"""Asynchronous transfer engine with double-booked budget accounting.

A pool of worker threads executes swap reads and writes with plain positional
file IO.  Bytes moving between RAM and disk are charged to both sides until
the transfer completes; :class:`BudgetLedger` holds those counters.
"""
from __future__ import annotations

import itertools
import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import RamReservationFailed, TransferFailed, WaitImpossible

log = logging.getLogger(__name__)

SWAP_IN = "SWAP_IN"
SWAP_OUT = "SWAP_OUT"

QUEUED = "QUEUED"
RUNNING = "RUNNING"
DONE = "DONE"
FAILED = "FAILED"


@dataclass
class BudgetLedger:
    ram_limit: int
    ram_used: int = 0
    ram_pending_in: int = 0
    swap_pending_out: int = 0
    freeing_soon: int = 0
    released_total: int = 0
    peak_ram: int = 0
    violations: int = 0
    strict: bool = False
    allocator: Any = field(default=None, repr=False)

    @property
    def swap_used(self) -> int:
        return 0 if self.allocator is None else self.allocator.allocated_bytes

    @property
    def headroom(self) -> int:
        return self.ram_limit - self.ram_used - self.ram_pending_in

    def check(self) -> None:
        total = self.ram_used + self.ram_pending_in
        if total > self.peak_ram:
            self.peak_ram = total
        bad = (total > self.ram_limit or self.ram_used < 0 or self.ram_pending_in < 0
               or self.freeing_soon < 0 or self.swap_pending_out < 0)
        if bad:
            self.violations += 1
            if self.strict:
                raise AssertionError(f"budget violated: {self}")

    def add_resident(self, nbytes: int) -> None:
        self.ram_used += nbytes
        self.check()

    def drop_resident(self, nbytes: int) -> None:
        self.ram_used -= nbytes
        self.released_total += nbytes
        self.check()


@dataclass(eq=False)
class TransferRequest:
    direction: str
    handle: int
    spans: list
    byte_len: int
    payload: Any = None
    clean: bool = False
    tag: Any = None
    token: int = -1
    state: str = QUEUED
    error: BaseException | None = None
    rescued: bool = False
    bytes_transferred: int = 0
    started: float = 0.0
    finished: float = 0.0
    result: Any = None


class TransferEngine:
    """Worker pool that runs transfers outside the caller's critical section.

    ``cv`` is the condition of the owning manager; completion bookkeeping and
    the ``on_complete`` callback run while holding its lock.
    """

    def __init__(self, io, ledger: BudgetLedger, workers: int = 1,
                 cv: threading.Condition | None = None,
                 on_complete: Callable[[TransferRequest], None] | None = None):
        self.io = io
        self.ledger = ledger
        self.cv = cv or threading.Condition(threading.RLock())
        self._work = threading.Condition(self.cv._lock)
        self.on_complete = on_complete
        self._tokens = itertools.count()
        self._queue: deque[TransferRequest] = deque()
        self._live: dict[int, TransferRequest] = {}
        self._failed: dict[int, TransferRequest] = {}
        self._outcomes: deque[tuple[int, str]] = deque()
        self._next_token = 0
        self._stopping = False
        self._closed = False
        self.history: list[tuple[int, str, int, float, float]] | None = None
        self.record_outcomes = True
        self.bytes_written = 0
        self.bytes_read = 0
        self._threads = [
            threading.Thread(target=self._worker, name=f"oocmem-io-{i}", daemon=True)
            for i in range(workers)
        ]
        for t in self._threads:
            t.start()

    @property
    def in_flight(self) -> int:
        return len(self._live)

    @property
    def queue_length(self) -> int:
        return len(self._queue)

    def keep_history(self) -> None:
        """Record (token, direction, handle, start, end) per finished transfer."""
        self.history = []

    # -- submission --------------------------------------------------------

    def submit(self, req: TransferRequest) -> int:
        with self.cv:
            if self._stopping:
                raise TransferFailed("engine is shut down")
            led = self.ledger
            if req.direction == SWAP_IN:
                if led.ram_used + led.ram_pending_in + req.byte_len > led.ram_limit:
                    raise RamReservationFailed(
                        f"{req.byte_len} bytes requested, {led.headroom} available")
                led.ram_pending_in += req.byte_len
            elif req.direction != SWAP_OUT:
                raise ValueError(f"bad direction {req.direction!r}")
            req.token = next(self._tokens)
            self._next_token = req.token + 1
            if req.direction == SWAP_OUT and req.clean:
                # reuse of a clean copy: nothing to write, RAM frees now
                req.state = DONE
                req.started = req.finished = time.monotonic()
                led.drop_resident(req.byte_len)
                self._deliver(req)
                return req.token
            if req.direction == SWAP_OUT:
                led.swap_pending_out += req.byte_len
                led.freeing_soon += req.byte_len
            led.check()
            self._live[req.token] = req
            self._queue.append(req)
            self._work.notify()
            return req.token

    def rescue(self, token: int) -> bool:
        """Keep the RAM of an in-flight swap-out; the write still completes."""
        with self.cv:
            req = self._live.get(token)
            if req is None or req.direction != SWAP_OUT or req.rescued:
                return False
            req.rescued = True
            self.ledger.freeing_soon -= req.byte_len
            self.ledger.check()
            return True

    # -- workers -----------------------------------------------------------

    def _worker(self) -> None:
        while True:
            with self.cv:
                while not self._queue and not self._stopping:
                    self._work.wait()
                if not self._queue:
                    return
                req = self._queue.popleft()
                req.state = RUNNING
                req.started = time.monotonic()
            try:
                if req.direction == SWAP_OUT:
                    req.bytes_transferred = self.io.write(req.spans, req.payload)
                else:
                    req.result = self.io.read(req.spans, req.byte_len)
                    req.bytes_transferred = req.byte_len
                req.state = DONE
            except BaseException as exc:  # delivered as an outcome
                log.warning("transfer %d failed: %s", req.token, exc)
                req.error = exc
                req.state = FAILED
            req.finished = time.monotonic()
            req.payload = None
            with self.cv:
                self._finish(req)

    def _finish(self, req: TransferRequest) -> None:
        led = self.ledger
        self._live.pop(req.token, None)
        if req.direction == SWAP_IN:
            led.ram_pending_in -= req.byte_len
            if req.state == DONE:
                led.ram_used += req.byte_len
                self.bytes_read += req.byte_len
        else:
            led.swap_pending_out -= req.byte_len
            if not req.rescued:
                led.freeing_soon -= req.byte_len
                if req.state == DONE:
                    led.drop_resident(req.byte_len)
            if req.state == DONE:
                self.bytes_written += req.bytes_transferred
        led.check()
        if req.state == FAILED:
            self._failed[req.token] = req
        self._deliver(req)

    def _deliver(self, req: TransferRequest) -> None:
        if self.record_outcomes:
            self._outcomes.append((req.token, req.state))
        if self.history is not None:
            self.history.append((req.token, req.direction, req.handle,
                                 req.started, req.finished))
        if self.on_complete is not None:
            self.on_complete(req)
        self.cv.notify_all()

    # -- completion side ---------------------------------------------------

    def poll_completions(self) -> list[tuple[int, str]]:
        with self.cv:
            out = list(self._outcomes)
            self._outcomes.clear()
            return out

    def is_done(self, token: int) -> bool:
        with self.cv:
            return token < self._next_token and token not in self._live

    def wait_for(self, token: int | None = None, bytes_freeing: int | None = None,
                 timeout: float | None = None) -> None:
        """Block until ``token`` completes or ``bytes_freeing`` bytes of RAM are released."""
        assert not self.cv._is_owned(), "wait_for called inside the manager lock"
        if (token is None) == (bytes_freeing is None):
            raise ValueError("pass exactly one of token / bytes_freeing")
        deadline = None if timeout is None else time.monotonic() + timeout
        with self.cv:
            if token is not None:
                if token >= self._next_token or token < 0:
                    raise KeyError(token)
                while token in self._live:
                    self._timed_wait(deadline)
                failed = self._failed.get(token)
                if failed is not None:
                    raise TransferFailed(f"transfer {token} failed: {failed.error}") \
                        from failed.error
                return
            target = self.ledger.released_total + bytes_freeing
            while self.ledger.released_total < target:
                missing = target - self.ledger.released_total
                if missing > self.ledger.freeing_soon:
                    raise WaitImpossible(
                        f"{missing} bytes wanted, {self.ledger.freeing_soon} bytes in flight")
                self._timed_wait(deadline)

    def _timed_wait(self, deadline) -> None:
        if deadline is None:
            self.cv.wait()
            return
        left = deadline - time.monotonic()
        if left <= 0:
            raise TimeoutError("transfer wait timed out")
        self.cv.wait(left)

    def shutdown(self, drain: bool = True) -> None:
        with self.cv:
            if self._closed:
                return
            self._closed = True
            if not drain:
                while self._queue:
                    req = self._queue.pop()
                    req.state = FAILED
                    req.error = TransferFailed("cancelled")
                    req.payload = None
                    self._finish(req)
            self._stopping = True
            self._work.notify_all()
        for t in self._threads:
            t.join()
