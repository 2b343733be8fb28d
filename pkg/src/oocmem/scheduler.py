"""Cyclic eviction and pre-emptive prefetch strategy.

All registered handles live on one circular doubly linked list. Walking
*forward* (``next``) from the active cursor visits, in order:

* the resident run, most recently touched first and ending at the
  counteractive cursor (the least recently touched resident node),
* the swapped run (on disk or in flight),
* the pre-emptive run (loaded speculatively, not touched yet),

and then closes back at the active node.  The expected access order is the
``prev`` direction: the node expected after ``active`` is ``prev(active)``,
so a sequential scan only ever advances the cursor and never relinks.

Links are kept in flat integer arrays indexed by handle id so that per-handle
bookkeeping stays a few dozen bytes.
"""
from __future__ import annotations

import abc
from array import array
from fractions import Fraction
from typing import Callable, Iterator

from .errors import (
    DuplicateRegistration,
    InsufficientEvictableBytes,
    NotResident,
    NotSwapped,
    UnknownHandle,
)

NIL = -1

# zones
ABSENT = 0
ACTIVE = 1
SWAPPED = 2
PREEMPTIVE = 3

ZONE_NAMES = {ACTIVE: "ACTIVE_REGION", SWAPPED: "SWAPPED", PREEMPTIVE: "PREEMPTIVE"}


def decay_fires(probability: Fraction, hits: int, significance) -> bool:
    """True when ``probability ** hits`` lies strictly below the significance level."""
    if isinstance(probability, float):
        probability = str(probability)
    return Fraction(probability) ** hits < Fraction(str(significance))


class Strategy(abc.ABC):
    """Interface the manager drives; swap in alternatives for testing."""

    prefetch_enabled = False

    @abc.abstractmethod
    def register(self, hid: int, byte_len: int) -> None: ...

    @abc.abstractmethod
    def unregister(self, hid: int) -> None: ...

    @abc.abstractmethod
    def touch(self, hid: int) -> None: ...

    @abc.abstractmethod
    def make_room(self, bytes_needed: int) -> list[int]: ...

    @abc.abstractmethod
    def plan_swap_in(self, hid: int) -> list[int]: ...

    @abc.abstractmethod
    def evaluate_decay(self) -> int: ...

    def take_decayed(self) -> list[int]:
        return []

    def readmit(self, hid: int) -> None:
        """A swapped node became resident again without a disk read."""

    def mark_swapped(self, hid: int) -> None:
        """A resident or pre-emptive node is back on disk outside make_room."""

    def is_preemptive(self, hid: int) -> bool:
        return False


class CyclicScheduler(Strategy):
    def __init__(self, ram_limit_bytes: int, budget_bytes: int,
                 significance_level: float = 0.01, prefetch: bool = True,
                 evictable: Callable[[int], bool] | None = None):
        if budget_bytes < 0 or ram_limit_bytes <= 0:
            raise ValueError("budget and RAM limit must be positive")
        self.ram_limit_bytes = ram_limit_bytes
        self.budget_bytes = budget_bytes
        self.significance_level = significance_level
        self.prefetch_enabled = prefetch
        self._evictable = evictable or (lambda hid: True)

        self._next = array("q")
        self._prev = array("q")
        self._size = array("q")
        self._zone = bytearray()

        self.active = NIL
        self.counteractive = NIL
        self.count = 0

        self.used_bytes = 0
        self.hits_since_miss = 0
        self.swap_used_bytes = 0
        self.relinks = 0
        self._decayed: list[int] = []

    # -- list primitives ---------------------------------------------------

    def _grow(self, hid: int) -> None:
        missing = hid + 1 - len(self._zone)
        if missing > 0:
            self._next.extend([NIL] * missing)
            self._prev.extend([NIL] * missing)
            self._size.extend([0] * missing)
            self._zone.extend(bytes(missing))

    def _known(self, hid: int) -> None:
        if not (0 <= hid < len(self._zone)) or self._zone[hid] == ABSENT:
            raise UnknownHandle(hid)

    def _unlink(self, node: int) -> None:
        nxt, prv = self._next[node], self._prev[node]
        self._next[prv] = nxt
        self._prev[nxt] = prv

    def _insert_before(self, node: int, anchor: int) -> None:
        prv = self._prev[anchor]
        self._next[prv] = node
        self._prev[node] = prv
        self._next[node] = anchor
        self._prev[anchor] = node

    def _insert_after(self, node: int, anchor: int) -> None:
        self._insert_before(node, self._next[anchor])

    def _move_before(self, node: int, anchor: int) -> None:
        if node == anchor or self._next[node] == anchor:
            return
        self._unlink(node)
        self._insert_before(node, anchor)
        self.relinks += 1

    def _move_after(self, node: int, anchor: int) -> None:
        if node == anchor or self._prev[node] == anchor:
            return
        self._unlink(node)
        self._insert_after(node, anchor)
        self.relinks += 1

    def _preemptive_run_start(self) -> int:
        """First node of the pre-emptive run in forward order, or NIL."""
        if self.active == NIL:
            return NIL
        node = self._prev[self.active]
        if self._zone[node] != PREEMPTIVE or node == self.active:
            return NIL
        while True:
            before = self._prev[node]
            if self._zone[before] != PREEMPTIVE or before == self.active:
                return node
            node = before

    # -- queries -----------------------------------------------------------

    def __len__(self) -> int:
        return self.count

    def __contains__(self, hid: int) -> bool:
        return 0 <= hid < len(self._zone) and self._zone[hid] != ABSENT

    def zone(self, hid: int) -> str:
        self._known(hid)
        return ZONE_NAMES[self._zone[hid]]

    def is_preemptive(self, hid: int) -> bool:
        return hid in self and self._zone[hid] == PREEMPTIVE

    def forward(self, start: int | None = None) -> Iterator[int]:
        """Nodes in forward order starting at ``start`` (default: active)."""
        start = self.active if start is None else start
        if start == NIL:
            return
        node = start
        for _ in range(self.count):
            yield node
            node = self._next[node]

    def access_order(self) -> list[int]:
        """Nodes in expected access order: active first, then ``prev`` links."""
        out = []
        node = self.active
        for _ in range(self.count):
            out.append(node)
            node = self._prev[node]
        return out

    def check(self) -> None:
        """Assert structural and zone invariants; used by tests and debug runs."""
        if self.count == 0:
            assert self.active == NIL and self.counteractive == NIL
            return
        seen = set()
        node = self.active
        for _ in range(self.count):
            assert node not in seen, "node visited twice"
            seen.add(node)
            assert self._prev[self._next[node]] == node, "prev/next mismatch"
            assert self._zone[node] != ABSENT
            node = self._next[node]
        assert node == self.active, "cycle does not close after N steps"
        zones = [self._zone[n] for n in self.forward()]
        order = {ACTIVE: 0, SWAPPED: 1, PREEMPTIVE: 2}
        ranks = [order[z] for z in zones]
        assert ranks == sorted(ranks), f"zone layout broken: {zones}"
        n_active = zones.count(ACTIVE)
        if n_active:
            assert self.counteractive == list(self.forward())[n_active - 1]
        else:
            assert self.counteractive == NIL
        pre = sum(self._size[n] for n in self.forward() if self._zone[n] == PREEMPTIVE)
        assert pre == self.used_bytes, (pre, self.used_bytes)
        assert 0 <= self.used_bytes <= self.budget_bytes

    # -- strategy operations -------------------------------------------------

    def register(self, hid: int, byte_len: int) -> None:
        if hid in self:
            raise DuplicateRegistration(hid)
        self._grow(hid)
        self._size[hid] = byte_len
        self._zone[hid] = ACTIVE
        if self.count == 0:
            self._next[hid] = self._prev[hid] = hid
            self.counteractive = hid
        else:
            self._insert_before(hid, self.active)
            if self.counteractive == NIL:
                self.counteractive = hid
        self.active = hid
        self.count += 1

    def unregister(self, hid: int) -> None:
        self._known(hid)
        zone = self._zone[hid]
        if zone == PREEMPTIVE:
            self.used_bytes -= self._size[hid]
        if self.count == 1:
            self.active = self.counteractive = NIL
        else:
            if hid == self.counteractive:
                self.counteractive = NIL if hid == self.active else self._prev[hid]
            if hid == self.active:
                # fall back to the previously active node
                self.active = self._next[hid]
            self._unlink(hid)
        self._zone[hid] = ABSENT
        self._next[hid] = self._prev[hid] = NIL
        self.count -= 1

    def touch(self, hid: int) -> None:
        self._known(hid)
        zone = self._zone[hid]
        if zone == SWAPPED:
            raise NotResident(hid)
        if hid == self.active:
            return
        if hid == self._prev[self.active]:
            # sequential access: only the cursor moves
            if zone == ACTIVE:
                # the whole cycle is resident; hid was the counteractive tail
                self.counteractive = self._prev[hid]
        else:
            if hid == self.counteractive:
                self.counteractive = self._prev[hid]
            self._move_before(hid, self.active)
        self.active = hid
        if zone == PREEMPTIVE:
            self._zone[hid] = ACTIVE
            self.used_bytes -= self._size[hid]
            self.hits_since_miss += 1
            if self.counteractive == NIL:
                self.counteractive = hid

    def _retire_active(self, hid: int) -> None:
        """Move an ACTIVE node to the head of the swapped run."""
        if hid == self.counteractive:
            self.counteractive = NIL if hid == self.active else self._prev[hid]
        else:
            if hid == self.active:
                self.active = self._next[hid]
            self._move_after(hid, self.counteractive)
        self._zone[hid] = SWAPPED

    def _retire_preemptive(self, hid: int) -> None:
        """Move a PREEMPTIVE node to the tail of the swapped run."""
        start = self._preemptive_run_start()
        if hid != start:
            self._move_before(hid, start)
        self._zone[hid] = SWAPPED
        self.used_bytes -= self._size[hid]

    def make_room(self, bytes_needed: int) -> list[int]:
        """Pick least recently touched unpinned resident nodes covering ``bytes_needed``.

        Pre-emptive nodes (oldest first) are only taken once the resident run
        is exhausted.  Nothing changes if the request cannot be covered.
        """
        if bytes_needed <= 0:
            return []
        victims, pre_victims, total = [], [], 0
        if self.counteractive != NIL:
            node = self.counteractive
            while True:
                if self._evictable(node):
                    victims.append(node)
                    total += self._size[node]
                    if total >= bytes_needed:
                        break
                if node == self.active:
                    break
                node = self._prev[node]
        if total < bytes_needed:
            for node in self._preemptive_nodes():
                if self._evictable(node):
                    pre_victims.append(node)
                    total += self._size[node]
                    if total >= bytes_needed:
                        break
        if total < bytes_needed:
            raise InsufficientEvictableBytes(
                f"need {bytes_needed} bytes, only {total} evictable")
        for hid in victims:
            self._retire_active(hid)
        for hid in pre_victims:
            self._retire_preemptive(hid)
        return victims + pre_victims

    def _preemptive_nodes(self) -> list[int]:
        start = self._preemptive_run_start()
        out = []
        node = start
        while node != NIL and self._zone[node] == PREEMPTIVE and node != self.active:
            out.append(node)
            node = self._next[node]
        return out

    def evaluate_decay(self) -> int:
        if self.ram_limit_bytes <= 0:
            return 0
        probability = Fraction(self.budget_bytes, self.ram_limit_bytes)
        if decay_fires(probability, self.hits_since_miss, self.significance_level):
            return max(2 * (self.budget_bytes - self.used_bytes), 1)
        return 0

    def _decay(self, nbytes: int) -> list[int]:
        out, freed = [], 0
        for node in self._preemptive_nodes():
            if freed >= nbytes:
                break
            if self._evictable(node):
                out.append(node)
                freed += self._size[node]
        for node in out:
            self._retire_preemptive(node)
        return out

    def take_decayed(self) -> list[int]:
        out, self._decayed = self._decayed, []
        return out

    def plan_swap_in(self, hid: int) -> list[int]:
        """Handle a demand miss on ``hid``; returns ``[hid, *prefetch]``."""
        self._known(hid)
        if self._zone[hid] != SWAPPED:
            raise NotSwapped(hid)
        decay = self.evaluate_decay()
        if decay:
            self._decayed.extend(self._decay(decay))
        self.hits_since_miss = 0

        candidates = []
        if self.prefetch_enabled:
            added = 0
            node = self._prev[hid]
            while (node != hid and self._zone[node] == SWAPPED
                   and self.used_bytes + added + self._size[node] <= self.budget_bytes):
                candidates.append(node)
                added += self._size[node]
                node = self._prev[node]

        self._promote(hid)
        anchor = hid
        for node in candidates:
            self._move_before(node, anchor)
            self._zone[node] = PREEMPTIVE
            self.used_bytes += self._size[node]
            anchor = node
        return [hid] + candidates

    def _promote(self, hid: int) -> None:
        self._move_before(hid, self.active)
        self.active = hid
        self._zone[hid] = ACTIVE
        if self.counteractive == NIL:
            self.counteractive = hid

    def readmit(self, hid: int) -> None:
        self._known(hid)
        zone = self._zone[hid]
        if zone == PREEMPTIVE:
            self.used_bytes -= self._size[hid]
        if zone != ACTIVE:
            self._promote(hid)

    def mark_swapped(self, hid: int) -> None:
        self._known(hid)
        zone = self._zone[hid]
        if zone == ACTIVE:
            self._retire_active(hid)
        elif zone == PREEMPTIVE:
            self._retire_preemptive(hid)


class DummyStrategy(Strategy):
    """Registration-order eviction with no prefetch; a stand-in for tests."""

    def __init__(self, evictable: Callable[[int], bool] | None = None):
        self._sizes: dict[int, int] = {}
        self._resident: dict[int, None] = {}
        self._evictable = evictable or (lambda hid: True)

    def register(self, hid, byte_len):
        if hid in self._sizes:
            raise DuplicateRegistration(hid)
        self._sizes[hid] = byte_len
        self._resident[hid] = None

    def unregister(self, hid):
        if hid not in self._sizes:
            raise UnknownHandle(hid)
        del self._sizes[hid]
        self._resident.pop(hid, None)

    def touch(self, hid):
        if hid not in self._resident:
            raise NotResident(hid)

    def make_room(self, bytes_needed):
        out, total = [], 0
        for hid in self._resident:
            if total >= bytes_needed:
                break
            if self._evictable(hid):
                out.append(hid)
                total += self._sizes[hid]
        if total < bytes_needed:
            raise InsufficientEvictableBytes(bytes_needed)
        for hid in out:
            del self._resident[hid]
        return out

    def plan_swap_in(self, hid):
        if hid not in self._sizes:
            raise UnknownHandle(hid)
        if hid in self._resident:
            raise NotSwapped(hid)
        self._resident[hid] = None
        return [hid]

    def evaluate_decay(self):
        return 0

    def readmit(self, hid):
        self._resident[hid] = None

    def mark_swapped(self, hid):
        self._resident.pop(hid, None)
