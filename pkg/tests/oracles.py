"""Brute-force reference models used as independent oracles by the tests."""
from __future__ import annotations

import random
import re

_FREE_RUN = re.compile(rb"\x00+")


class BitmapAllocator:
    """Byte-granular first-fit allocator over a bitmap per file.

    Free regions are found by scanning the bitmap for maximal zero runs, so
    it shares no bookkeeping with the free-list implementation under test.
    """

    def __init__(self, file_size: int, files: int):
        self.file_size = file_size
        self.maps = [bytearray(file_size) for _ in range(files)]

    def add_file(self):
        self.maps.append(bytearray(self.file_size))

    def runs(self, f):
        return [(m.start(), m.end() - m.start()) for m in _FREE_RUN.finditer(self.maps[f])]

    def free_bytes(self):
        return sum(m.count(0) for m in self.maps)

    def allocate(self, n):
        for f in range(len(self.maps)):
            for off, length in self.runs(f):
                if length >= n:
                    self._mark(f, off, n, 1)
                    return [(f, off, n)]
        if n > self.free_bytes():
            return None
        spans, left = [], n
        for f in range(len(self.maps)):
            for off, length in self.runs(f):
                take = min(left, length)
                self._mark(f, off, take, 1)
                spans.append((f, off, take))
                left -= take
                if not left:
                    return spans
        raise AssertionError("unreachable")

    def free(self, spans):
        for f, off, n in spans:
            assert all(self.maps[f][off:off + n]), "oracle double free"
            self._mark(f, off, n, 0)

    def _mark(self, f, off, n, value):
        self.maps[f][off:off + n] = bytes([value]) * n


class ReferenceLRU:
    """Timestamped model of eviction: victims are the least recently touched
    unpinned resident handles, chosen one at a time by a full scan."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.size: dict[int, int] = {}
        self.last: dict[int, int] = {}
        self.resident: set[int] = set()
        self.pinned: set[int] = set()
        self.clock = 0
        self.misses = 0
        self.victims: list[int] = []

    def _tick(self):
        self.clock += 1
        return self.clock

    def used(self):
        return sum(self.size[h] for h in self.resident)

    def _room_for(self, n, exclude=()):
        out = []
        while self.used() + n > self.capacity:
            candidates = [h for h in self.resident if h not in self.pinned and h not in exclude]
            if not candidates:
                raise MemoryError("nothing evictable")
            victim = min(candidates, key=self.last.__getitem__)
            self.resident.discard(victim)
            out.append(victim)
        self.victims.extend(out)
        return out

    def create(self, h, n):
        victims = self._room_for(n)
        self.size[h] = n
        self.resident.add(h)
        self.last[h] = self._tick()
        return victims

    def access(self, h):
        victims = []
        if h not in self.resident:
            self.misses += 1
            victims = self._room_for(self.size[h], exclude=(h,))
            self.resident.add(h)
        self.last[h] = self._tick()
        return victims

    def destroy(self, h):
        self.resident.discard(h)
        self.pinned.discard(h)
        del self.size[h], self.last[h]


def synthetic_trace(seed, events, capacity):
    """Create/access/pin/unpin/destroy events with a drifting working set."""
    rng = random.Random(seed)
    live, pinned, out = [], set(), []
    nid = 0
    for _ in range(events):
        r = rng.random()
        if r < 0.08 or len(live) < 4:
            out.append(("create", nid, rng.randint(1, capacity // 5)))
            live.append(nid)
            nid += 1
        elif r < 0.12 and len(live) > 4:
            h = rng.choice([x for x in live if x not in pinned] or live)
            if h in pinned:
                continue
            live.remove(h)
            out.append(("destroy", h, 0))
        elif r < 0.18:
            if pinned and (len(pinned) >= 2 or rng.random() < 0.5):
                h = rng.choice(sorted(pinned))
                pinned.discard(h)
                out.append(("unpin", h, 0))
            else:
                free = [x for x in live if x not in pinned]
                h = rng.choice(free)
                out.append(("pin", h, 0))
                pinned.add(h)
        else:
            if rng.random() < 0.6:
                h = live[max(0, len(live) - 1 - int(rng.expovariate(0.25)))]
            else:
                h = rng.choice(live)
            out.append(("access", h, 0))
    return out
