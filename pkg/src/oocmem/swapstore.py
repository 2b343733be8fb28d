"""Disk-backed storage for swapped blocks.

Swap files are raw byte blobs; every bit of layout lives in memory.  A block
may be spread over several :class:`ChunkSpan` regions when the free list is
fragmented.
"""
from __future__ import annotations

import bisect
import logging
import os
import shutil
from array import array
from collections import OrderedDict
from typing import Callable, Iterable, NamedTuple

from .aio import SWAP_IN, SWAP_OUT, TransferRequest
from .config import SwapPolicy
from .errors import DoubleFree, IoFailure, SwapFull, UnknownSpan

log = logging.getLogger(__name__)


class ChunkSpan(NamedTuple):
    file_index: int
    offset: int
    length: int


class FreeListAllocator:
    """First-fit allocator over a growing set of equally sized swap files.

    Each file keeps its free regions as two parallel sorted lists (offsets and
    lengths).  Adjacent free regions are always merged.
    """

    def __init__(self, file_size: int, files: int = 0):
        if file_size <= 0:
            raise ValueError("file_size must be positive")
        self.file_size = file_size
        self._offs: list[list[int]] = []
        self._lens: list[list[int]] = []
        self.allocated_bytes = 0
        for _ in range(files):
            self.add_file()

    @property
    def file_count(self) -> int:
        return len(self._offs)

    @property
    def provisioned_bytes(self) -> int:
        return self.file_size * self.file_count

    @property
    def free_bytes(self) -> int:
        return self.provisioned_bytes - self.allocated_bytes

    def add_file(self) -> int:
        self._offs.append([0])
        self._lens.append([self.file_size])
        return len(self._offs) - 1

    def free_list(self, file_index: int) -> list[tuple[int, int]]:
        return list(zip(self._offs[file_index], self._lens[file_index]))

    def allocate(self, nbytes: int) -> list[ChunkSpan] | None:
        """First fit, else split greedily over gaps in scan order; None if it cannot fit."""
        if nbytes <= 0:
            raise ValueError("allocation size must be positive")
        for f, lens in enumerate(self._lens):
            for i, length in enumerate(lens):
                if length >= nbytes:
                    return [self._take(f, i, nbytes)]
        if nbytes > self.free_bytes:
            return None
        spans, remaining = [], nbytes
        for f in range(self.file_count):
            while remaining and self._lens[f]:
                take = min(remaining, self._lens[f][0])
                spans.append(self._take(f, 0, take))
                remaining -= take
            if not remaining:
                break
        return spans

    def _take(self, f: int, i: int, nbytes: int) -> ChunkSpan:
        offs, lens = self._offs[f], self._lens[f]
        span = ChunkSpan(f, offs[i], nbytes)
        if lens[i] == nbytes:
            del offs[i], lens[i]
        else:
            offs[i] += nbytes
            lens[i] -= nbytes
        self.allocated_bytes += nbytes
        return span

    def free(self, spans: Iterable[ChunkSpan]) -> None:
        spans = list(spans)
        for span in spans:
            self._validate(span)
        for f, off, length in spans:
            offs, lens = self._offs[f], self._lens[f]
            i = bisect.bisect_left(offs, off)
            merge_left = i > 0 and offs[i - 1] + lens[i - 1] == off
            merge_right = i < len(offs) and off + length == offs[i]
            if merge_left and merge_right:
                lens[i - 1] += length + lens[i]
                del offs[i], lens[i]
            elif merge_left:
                lens[i - 1] += length
            elif merge_right:
                offs[i] = off
                lens[i] += length
            else:
                offs.insert(i, off)
                lens.insert(i, length)
            self.allocated_bytes -= length

    def _validate(self, span: ChunkSpan) -> None:
        f, off, length = span
        if not (0 <= f < self.file_count) or length <= 0 or off < 0 \
                or off + length > self.file_size:
            raise UnknownSpan(span)
        offs, lens = self._offs[f], self._lens[f]
        i = bisect.bisect_right(offs, off)
        if i > 0 and offs[i - 1] + lens[i - 1] > off:
            raise DoubleFree(span)
        if i < len(offs) and offs[i] < off + length:
            raise DoubleFree(span)


class SwapFiles:
    """The swap file pool; positional IO so workers never share a file cursor."""

    def __init__(self, directory: str | os.PathLike, file_size: int):
        self.directory = os.fspath(directory)
        self.file_size = file_size
        self._fds: list[int] = []
        self.paths: list[str] = []
        os.makedirs(self.directory, exist_ok=True)

    def add_file(self) -> int:
        index = len(self._fds)
        path = os.path.join(self.directory, f"oocmem-{os.getpid()}-{index}.swap")
        fd = os.open(path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o600)
        try:
            os.ftruncate(fd, self.file_size)  # sparse
        except OSError:
            os.close(fd)
            raise
        self._fds.append(fd)
        self.paths.append(path)
        return index

    def disk_free(self) -> int:
        return shutil.disk_usage(self.directory).free

    def write(self, spans: Iterable[ChunkSpan], payload) -> int:
        view = memoryview(payload).cast("B")
        pos = 0
        for f, off, length in spans:
            chunk = view[pos:pos + length]
            done = 0
            try:
                while done < length:
                    done += os.pwrite(self._fds[f], chunk[done:], off + done)
            except OSError as exc:
                raise IoFailure(exc.errno, f"write failed: {self.paths[f]} @ {off + done}") from exc
            pos += length
        return pos

    def read(self, spans: Iterable[ChunkSpan], nbytes: int) -> bytearray:
        buf = bytearray(nbytes)
        view = memoryview(buf)
        pos = 0
        for f, off, length in spans:
            done = 0
            try:
                while done < length:
                    got = os.preadv(self._fds[f], [view[pos + done:pos + length]], off + done)
                    if got == 0:
                        raise OSError(5, "unexpected end of swap file")
                    done += got
            except OSError as exc:
                raise IoFailure(exc.errno, f"read failed: {self.paths[f]} @ {off + done}") from exc
            pos += length
        return buf

    def close(self, remove: bool = True) -> None:
        for fd in self._fds:
            os.close(fd)
        if remove:
            for path in self.paths:
                try:
                    os.unlink(path)
                except FileNotFoundError:
                    pass
        self._fds.clear()
        self.paths.clear()


_NONE = -1
_MULTI = -2


class SwapStore:
    """Span ownership per handle, the clean-copy cache and full-swap policies.

    Single-span placements, by far the common case, are stored in flat arrays;
    split placements go to a side table.
    """

    def __init__(self, files: SwapFiles, file_size: int,
                 policy: SwapPolicy = SwapPolicy.FAIL,
                 prompt: Callable[[int], bool] | None = None,
                 on_purge: Callable[[int], None] | None = None,
                 initial_files: int = 1):
        self.files = files
        self.allocator = FreeListAllocator(file_size)
        self.policy = SwapPolicy.parse(policy)
        self.prompt = prompt
        self.on_purge = on_purge
        self.engine = None  # wired by the manager
        self._span_file = array("i")
        self._span_off = array("q")
        self._span_len = array("q")
        self._multi: dict[int, tuple[ChunkSpan, ...]] = {}
        self._cache: OrderedDict[int, None] = OrderedDict()
        self.policy_fired = 0
        for _ in range(initial_files):
            self._provision()

    def _provision(self) -> int:
        index = self.files.add_file()
        self.allocator.add_file()
        return index

    # -- span bookkeeping ------------------------------------------------

    def _grow(self, hid: int) -> None:
        missing = hid + 1 - len(self._span_file)
        if missing > 0:
            self._span_file.extend([_NONE] * missing)
            self._span_off.extend([0] * missing)
            self._span_len.extend([0] * missing)

    def has_spans(self, hid: int) -> bool:
        return hid < len(self._span_file) and self._span_file[hid] != _NONE

    def spans_of(self, hid: int) -> list[ChunkSpan]:
        if not self.has_spans(hid):
            return []
        f = self._span_file[hid]
        if f == _MULTI:
            return list(self._multi[hid])
        return [ChunkSpan(f, self._span_off[hid], self._span_len[hid])]

    def attach(self, hid: int, spans: list[ChunkSpan], cached: bool = False) -> None:
        """Record ``spans`` as the on-disk copy of ``hid``."""
        self._grow(hid)
        if self.has_spans(hid):
            self.release(hid)
        if len(spans) == 1:
            f, off, length = spans[0]
            self._span_file[hid] = f
            self._span_off[hid] = off
            self._span_len[hid] = length
        else:
            self._span_file[hid] = _MULTI
            self._multi[hid] = tuple(spans)
        if cached:
            self._cache[hid] = None

    def release(self, hid: int) -> int:
        """Free every span owned by ``hid``; returns the bytes freed."""
        spans = self.spans_of(hid)
        self._cache.pop(hid, None)
        if not spans:
            return 0
        self._span_file[hid] = _NONE
        self._multi.pop(hid, None)
        self.allocator.free(spans)
        return sum(s.length for s in spans)

    def cache(self, hid: int) -> None:
        if self.has_spans(hid):
            self._cache[hid] = None
            self._cache.move_to_end(hid)

    def uncache(self, hid: int) -> None:
        self._cache.pop(hid, None)

    def is_cached(self, hid: int) -> bool:
        return hid in self._cache

    @property
    def cached_bytes(self) -> int:
        return sum(sum(s.length for s in self.spans_of(h)) for h in self._cache)

    # -- allocation ---------------------------------------------------------

    def purge_clean_copies(self, bytes_wanted: int) -> int:
        """Drop disk copies of resident data, oldest first."""
        freed = 0
        while freed < bytes_wanted and self._cache:
            hid, _ = self._cache.popitem(last=False)
            freed += self.release(hid)
            if self.on_purge is not None:
                self.on_purge(hid)
        return freed

    def allocate_spans(self, nbytes: int) -> list[ChunkSpan]:
        spans = self.allocator.allocate(nbytes)
        if spans is not None:
            return spans
        if self._cache:
            self.purge_clean_copies(nbytes - self.allocator.free_bytes)
            spans = self.allocator.allocate(nbytes)
            if spans is not None:
                return spans
        self.policy_fired += 1
        while spans is None:
            if not self._may_extend(nbytes):
                raise SwapFull(
                    f"no swap space for {nbytes} bytes "
                    f"({self.allocator.free_bytes} free, policy {self.policy.value})")
            log.info("extending swap with file %d", self.allocator.file_count)
            self._provision()
            spans = self.allocator.allocate(nbytes)
        return spans

    def _may_extend(self, nbytes: int) -> bool:
        if self.policy is SwapPolicy.FAIL:
            return False
        if self.policy is SwapPolicy.INTERACTIVE:
            return self.prompt is not None and bool(self.prompt(nbytes))
        try:
            return self.files.disk_free() >= self.files.file_size
        except OSError:
            return False

    # -- transfers -----------------------------------------------------------

    def store(self, hid: int, payload, byte_len: int, reuse_clean: bool, **extra):
        """Submit a swap-out; clean copies are reused without writing."""
        if reuse_clean and self.has_spans(hid):
            self.uncache(hid)
            req = TransferRequest(SWAP_OUT, hid, [], byte_len, clean=True, **extra)
        else:
            if self.has_spans(hid):
                self.release(hid)
            spans = self.allocate_spans(byte_len)
            req = TransferRequest(SWAP_OUT, hid, spans, byte_len, payload=payload, **extra)
        return self.engine.submit(req)

    def load(self, hid: int, byte_len: int, **extra):
        spans = self.spans_of(hid)
        if not spans:
            raise IoFailure(2, f"handle {hid} has no swap copy")
        return self.engine.submit(TransferRequest(SWAP_IN, hid, spans, byte_len, **extra))

    def close(self) -> None:
        self.files.close()
