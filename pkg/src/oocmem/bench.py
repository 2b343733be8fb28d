"""Benchmark scenarios run against the public manager interface, plus the
``oocmem-bench`` command line tool."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import random
import re
import struct
import sys
import threading
import time
import zlib
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import ManagerConfig, SwapPolicy
from .core import DEFERRED, IMMEDIATE, READ_ONLY, READ_WRITE, MemoryManager
from .diag import Tracer, export_timeline
from .errors import ConfigError, IoFailure, OocmemError

MiB = 1 << 20

SCENARIOS = ("sequential_scan", "random_access", "nbody_accumulate",
             "matrix_transpose", "const_vs_mut", "preemptive_onoff")

CSV_COLUMNS = ("scenario", "phase", "wall_time_ms", "miss_count", "prefetch_hit_count",
               "blocked_wait_count", "bytes_written", "bytes_read", "peak_resident_bytes",
               "budget_violations")


class ScenarioFailure(Exception):
    """A scenario observed data that differs from what it wrote."""


@dataclass
class BenchConfig:
    ram_limit: int = 64 * MiB
    data_bytes: int = 256 * MiB
    element_bytes: int = 1 * MiB
    load: int = 10
    compute_ms: float = 0.0
    seed: int = 0
    threads: int = 1
    preemptive: bool = True
    policy: SwapPolicy = SwapPolicy.AUTOEXTEND
    passes: int = 2
    swap_dir: str | None = None
    swap_file_size: int = 64 * MiB
    workers: int = 2
    timeline: str | None = None
    sample_ms: float = 5.0
    baseline: bool = False

    def __post_init__(self):
        self.policy = SwapPolicy.parse(self.policy)
        for name in ("ram_limit", "data_bytes", "element_bytes", "threads", "passes",
                     "swap_file_size", "workers"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.load <= 100:
            raise ConfigError("load must be a percentage")
        if self.compute_ms < 0 or self.sample_ms <= 0:
            raise ConfigError("times must be positive")
        if self.element_bytes % 8:
            raise ConfigError("element_bytes must be a multiple of 8")
        if self.element_bytes > self.ram_limit:
            raise ConfigError("element_bytes exceeds the RAM limit")

    @property
    def count(self) -> int:
        return max(self.data_bytes // self.element_bytes, 1)

    def manager_config(self) -> ManagerConfig:
        return ManagerConfig(ram_limit_bytes=self.ram_limit, swap_dir=self.swap_dir,
                             swap_file_size_bytes=self.swap_file_size,
                             swap_policy=self.policy, worker_count=self.workers)


@dataclass
class Report:
    scenario: str
    wall_time_ms: float = 0.0
    miss_count: int = 0
    prefetch_hit_count: int = 0
    blocked_wait_count: int = 0
    bytes_written: int = 0
    bytes_read: int = 0
    peak_resident_bytes: int = 0
    budget_violations: int = 0
    ram_limit_bytes: int = 0
    phases: dict[str, dict] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _counters(mm: MemoryManager | None) -> dict:
    if mm is None:
        return dict(miss_count=0, prefetch_hit_count=0, blocked_wait_count=0,
                    bytes_written=0, bytes_read=0)
    s = mm.stats
    return dict(miss_count=s.misses, prefetch_hit_count=s.preemptive_hits,
                blocked_wait_count=s.blocked_waits, bytes_written=mm.engine.bytes_written,
                bytes_read=mm.engine.bytes_read)


class _Run:
    """Holds the manager of one scenario run and records phase deltas."""

    def __init__(self, cfg: BenchConfig, mm: MemoryManager | None):
        self.cfg = cfg
        self.mm = mm
        self.phases: dict[str, dict] = {}
        self.expected: dict[int, int] = {}
        self.rng = random.Random(cfg.seed)

    @contextmanager
    def phase(self, name: str):
        before = _counters(self.mm)
        t0 = time.perf_counter()
        yield
        wall = (time.perf_counter() - t0) * 1e3
        after = _counters(self.mm)
        row = {k: after[k] - before[k] for k in after}
        row["wall_time_ms"] = wall
        self.phases[name] = row

    def compute(self, view, writable: bool = False) -> None:
        """Synthetic work: read ``load`` percent of the block, then pad to ``compute_ms``."""
        t0 = time.perf_counter()
        n = len(view) * self.cfg.load // 100
        if n:
            int(np.frombuffer(view, dtype=np.uint8, count=n).sum(dtype=np.uint64))
        pad = self.cfg.compute_ms / 1e3 - (time.perf_counter() - t0)
        if pad > 0:
            time.sleep(pad)

    def verify(self, hid: int, view) -> None:
        got = zlib.crc32(view)
        if got != self.expected[hid]:
            raise ScenarioFailure(f"handle {hid}: checksum {got:#x} != {self.expected[hid]:#x}")

    def create_filled(self, index: int) -> int:
        """Block whose 8-byte elements all hold a value derived from ``index``."""
        pattern = struct.pack("<Q", (self.cfg.seed * 1_000_003 + index * 2_654_435_761)
                              & 0xFFFF_FFFF_FFFF_FFFF)
        n = self.cfg.element_bytes // 8
        hid = self.mm.create_managed(n, 8, init=pattern)
        self.expected[hid] = zlib.crc32(pattern * n)
        return hid

    def spread(self, work: Callable[[int, list], None], items: list) -> None:
        """Run ``work(thread_index, chunk)`` over ``items`` split across threads."""
        k = self.cfg.threads
        if k == 1:
            work(0, items)
            return
        errors: list[BaseException] = []

        def target(t, chunk):
            try:
                work(t, chunk)
            except BaseException as exc:
                errors.append(exc)

        threads = [threading.Thread(target=target, args=(t, items[t::k])) for t in range(k)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        if errors:
            raise errors[0]


# -- scenarios ----------------------------------------------------------------


def _scan(run: _Run, handles: list[int]) -> None:
    mm = run.mm

    def work(_t, chunk):
        for hid in chunk:
            with mm.adhere(hid, READ_ONLY, IMMEDIATE) as g:
                view = g.pull()
                run.verify(hid, view)
                run.compute(view)

    for p in range(run.cfg.passes):
        with run.phase(f"scan{p}"):
            run.spread(work, handles)


def sequential_scan(run: _Run) -> None:
    with run.phase("allocate"):
        handles = [run.create_filled(i) for i in range(run.cfg.count)]
    _scan(run, handles)


def random_access(run: _Run) -> None:
    mm, cfg = run.mm, run.cfg
    with run.phase("allocate"):
        handles = [run.create_filled(i) for i in range(cfg.count)]
    lock = threading.Lock()

    def work(t, chunk):
        rng = random.Random(cfg.seed * 7919 + t)
        for step in range(cfg.passes * len(chunk)):
            hid = rng.choice(chunk)
            with mm.adhere(hid, READ_WRITE, DEFERRED) as g:
                view = g.pull()
                run.verify(hid, view)
                off = rng.randrange(len(view) // 8) * 8
                view[off:off + 8] = struct.pack("<Q", step)
                crc = zlib.crc32(view)
                run.compute(view)
            with lock:
                run.expected[hid] = crc

    with run.phase("access"):
        run.spread(work, handles)
    with run.phase("verify"):
        for hid in handles:
            with mm.adhere(hid, READ_ONLY, DEFERRED) as g:
                run.verify(hid, g.pull())


def nbody_accumulate(run: _Run) -> None:
    """Trajectory recording: every step appends a position and a velocity array."""
    cfg, mm = run.cfg, run.mm
    n = cfg.element_bytes // 8
    steps = max(cfg.data_bytes // (2 * cfg.element_bytes), 1)
    dt = 1e-3
    rng = np.random.default_rng(cfg.seed)
    history: list[tuple] = []
    crcs: list[tuple[int, int]] = []

    def new_block():
        if mm is None:
            return bytearray(cfg.element_bytes)
        return mm.create_managed(n, 8)

    @contextmanager
    def views(prev, cur):
        if mm is None:
            yield [memoryview(b) for b in prev + cur]
            return
        guards = [mm.adhere(h, READ_ONLY, DEFERRED) for h in prev]
        guards += [mm.adhere(h, READ_WRITE, DEFERRED) for h in cur]
        try:
            yield mm.pull_group(guards)
        finally:
            for g in guards:
                g.release()

    with run.phase("integrate"):
        for step in range(steps):
            cur = (new_block(), new_block())
            prev = history[-1] if history else ()
            with views(prev, cur) as vs:
                arrays = [np.frombuffer(v, dtype=np.float64) for v in vs]
                if prev:
                    x0, v0, x1, v1 = arrays
                    np.multiply(x0, -dt, out=v1)
                    v1 += v0
                    np.multiply(v1, dt, out=x1)
                    x1 += x0
                else:
                    x1, v1 = arrays
                    x1[:] = rng.standard_normal(n)
                    v1[:] = rng.standard_normal(n)
                crcs.append((zlib.crc32(vs[-2]), zlib.crc32(vs[-1])))
                del arrays
            history.append(cur)
    with run.phase("verify"):
        for (xh, vh), (cx, cv) in zip(history, crcs):
            with views((xh, vh), ()) as (xv, vv):
                if zlib.crc32(xv) != cx or zlib.crc32(vv) != cv:
                    raise ScenarioFailure("trajectory array changed after write")


def matrix_transpose(run: _Run) -> None:
    """Blockwise transpose of an out-of-core matrix into a second one."""
    cfg, mm = run.cfg, run.mm
    side = math.isqrt(cfg.element_bytes // 8)
    if side == 0:
        raise ConfigError("element_bytes too small for a matrix block")
    blocks = max(math.isqrt(cfg.data_bytes // 2 // (side * side * 8)), 1)
    rng = np.random.default_rng(cfg.seed)
    a = [[0] * blocks for _ in range(blocks)]
    b = [[0] * blocks for _ in range(blocks)]

    with run.phase("allocate"):
        for i in range(blocks):
            for j in range(blocks):
                hid = mm.create_managed(side * side, 8)
                with mm.adhere(hid, READ_WRITE, DEFERRED) as g:
                    np.frombuffer(g.pull(), dtype=np.float64)[:] = rng.standard_normal(side * side)
                a[i][j] = hid
    with run.phase("transpose"):
        for i in range(blocks):
            for j in range(blocks):
                dst = mm.create_managed(side * side, 8)
                src_g = mm.adhere(a[i][j], READ_ONLY, DEFERRED)
                dst_g = mm.adhere(dst, READ_WRITE, DEFERRED)
                try:
                    src, out = mm.pull_group([src_g, dst_g])
                    m = np.frombuffer(src, dtype=np.float64).reshape(side, side)
                    np.frombuffer(out, dtype=np.float64).reshape(side, side)[:] = m.T
                    run.compute(src)
                    del m
                finally:
                    src_g.release()
                    dst_g.release()
                b[j][i] = dst
    with run.phase("verify"):
        for i in range(blocks):
            for j in range(blocks):
                ga = mm.adhere(a[i][j], READ_ONLY, DEFERRED)
                gb = mm.adhere(b[j][i], READ_ONLY, DEFERRED)
                try:
                    va, vb = mm.pull_group([ga, gb])
                    ma = np.frombuffer(va, dtype=np.float64).reshape(side, side)
                    mb = np.frombuffer(vb, dtype=np.float64).reshape(side, side)
                    ok = np.array_equal(ma.T, mb)
                    del ma, mb
                finally:
                    ga.release()
                    gb.release()
                if not ok:
                    raise ScenarioFailure(f"block ({i},{j}) not transposed")


def const_vs_mut(run: _Run) -> None:
    """Two identical read passes, one through const guards and one through mutable ones."""
    mm = run.mm
    with run.phase("allocate"):
        handles = [run.create_filled(i) for i in range(run.cfg.count)]
        mm.flush()
    for name, mode in (("const", READ_ONLY), ("mutable", READ_WRITE)):
        with run.phase(name):
            for hid in handles:
                with mm.adhere(hid, mode, IMMEDIATE) as g:
                    view = g.pull()
                    run.verify(hid, view)
                    run.compute(view)
            mm.flush()


def preemptive_onoff(run: _Run) -> None:
    """Sequential scans with prefetching enabled and disabled, on fresh managers."""
    for label, flag in (("on", True), ("off", False)):
        sub = run_scenario("sequential_scan", dataclasses.replace(run.cfg, preemptive=flag,
                                                                 timeline=None))
        run.phases[f"prefetch_{label}"] = {
            k: getattr(sub, k) for k in ("wall_time_ms", "miss_count", "prefetch_hit_count",
                                         "blocked_wait_count", "bytes_written", "bytes_read")}
        for name, row in sub.phases.items():
            run.phases[f"{label}:{name}"] = row
        run.subreports.append(sub)


_RUNNERS = {
    "sequential_scan": sequential_scan,
    "random_access": random_access,
    "nbody_accumulate": nbody_accumulate,
    "matrix_transpose": matrix_transpose,
    "const_vs_mut": const_vs_mut,
    "preemptive_onoff": preemptive_onoff,
}


def run_scenario(name: str, cfg: BenchConfig | None = None, tracer: Tracer | None = None,
                 prompt: Callable[[int], bool] | None = None) -> Report:
    """Run one scenario on a fresh manager and return its report.

    ``cfg.baseline`` runs ``nbody_accumulate`` on plain bytearrays instead, which
    is the reference for measuring manager overhead.
    """
    if name not in _RUNNERS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    cfg = cfg or BenchConfig()
    report = Report(name, ram_limit_bytes=cfg.ram_limit)
    if name == "preemptive_onoff":
        run = _Run(cfg, None)
        run.subreports = []
        t0 = time.perf_counter()
        preemptive_onoff(run)
        report.wall_time_ms = (time.perf_counter() - t0) * 1e3
        on = run.subreports[0]
        for k in ("miss_count", "prefetch_hit_count", "blocked_wait_count", "bytes_written",
                  "bytes_read"):
            setattr(report, k, getattr(on, k))
        report.peak_resident_bytes = max(r.peak_resident_bytes for r in run.subreports)
        report.budget_violations = sum(r.budget_violations for r in run.subreports)
        report.phases = run.phases
        return report
    if cfg.baseline:
        if name != "nbody_accumulate":
            raise ConfigError("the raw baseline exists only for nbody_accumulate")
        run = _Run(cfg, None)
        t0 = time.perf_counter()
        nbody_accumulate(run)
        report.wall_time_ms = (time.perf_counter() - t0) * 1e3
        report.phases = run.phases
        return report

    if tracer is None and cfg.timeline:
        tracer = Tracer(capacity=2_000_000)
    mm = MemoryManager(cfg.manager_config(), tracer=tracer, prompt=prompt,
                       prefetch=cfg.preemptive)
    try:
        run = _Run(cfg, mm)
        t0 = time.perf_counter()
        _RUNNERS[name](run)
        report.wall_time_ms = (time.perf_counter() - t0) * 1e3
        mm.quiesce()
        for k, v in _counters(mm).items():
            setattr(report, k, v)
        report.peak_resident_bytes = mm.ledger.peak_ram
        report.budget_violations = mm.ledger.violations
        report.phases = run.phases
        if cfg.timeline:
            export_timeline(mm.tracer.events(), cfg.timeline, cfg.sample_ms)
    finally:
        mm.close()
    return report


# -- output ---------------------------------------------------------------------


def _csv_rows(report: Report):
    total = {c: getattr(report, c) for c in CSV_COLUMNS[2:]}
    yield {"scenario": report.scenario, "phase": "total", **total}
    for phase, row in report.phases.items():
        yield {"scenario": report.scenario, "phase": phase,
               **{c: row.get(c, "") for c in CSV_COLUMNS[2:]}}


def format_report(report: Report, fmt: str = "text") -> str:
    if fmt == "json":
        return json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(_csv_rows(report))
        return buf.getvalue()
    if fmt != "text":
        raise ConfigError(f"unknown format {fmt!r}")
    lines = [f"scenario: {report.scenario}"]
    for f in dataclasses.fields(report):
        if f.name not in ("scenario", "phases"):
            value = getattr(report, f.name)
            lines.append(f"{f.name}: {value:.3f}" if isinstance(value, float)
                         else f"{f.name}: {value}")
    lines.append("phases:")
    for phase, row in report.phases.items():
        cells = " ".join(f"{k}={v:.3f}" if isinstance(v, float) else f"{k}={v}"
                         for k, v in row.items())
        lines.append(f"  {phase}: {cells}")
    return "\n".join(lines) + "\n"


def emit_report(report: Report, fmt: str = "text", out=None) -> None:
    """Write the report to ``out`` (a path, a text stream, or stdout)."""
    text = format_report(report, fmt)
    if out is None:
        out = sys.stdout
    if hasattr(out, "write"):
        out.write(text)
        return
    try:
        with open(out, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(exc.errno, f"cannot write {out}") from exc


# -- command line -----------------------------------------------------------------

_SIZE = re.compile(r"^\s*(\d+)\s*([kmgt]?)(i?b?)\s*$", re.IGNORECASE)


def parse_size(text: str) -> int:
    """``4096``, ``64M``, ``64MiB`` and ``1g`` style byte counts (binary units)."""
    m = _SIZE.match(str(text))
    if not m:
        raise argparse.ArgumentTypeError(f"not a byte size: {text!r}")
    return int(m.group(1)) << (10 * "_kmgt".index(m.group(2).lower() or "_"))


def _on_off(text: str) -> bool:
    if text.lower() in ("on", "off"):
        return text.lower() == "on"
    raise argparse.ArgumentTypeError("expected on or off")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="oocmem-bench",
        description="Run an out-of-core memory scenario and report timings and IO counts.",
        epilog="csv columns: " + ",".join(CSV_COLUMNS) + ". The first row is the "
               "whole run (phase=total), then one row per phase.")
    d = BenchConfig()
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("--ram-limit", type=parse_size, default=d.ram_limit, metavar="BYTES")
    p.add_argument("--data-bytes", type=parse_size, default=d.data_bytes, metavar="BYTES")
    p.add_argument("--element-bytes", type=parse_size, default=d.element_bytes, metavar="BYTES",
                   help="size of one managed block")
    p.add_argument("--load", type=int, default=d.load, metavar="PERCENT",
                   help="share of each block read by the synthetic compute step")
    p.add_argument("--compute-ms", type=float, default=d.compute_ms,
                   help="minimum compute time per block access")
    p.add_argument("--seed", type=int, default=d.seed, metavar="N")
    p.add_argument("--threads", type=int, default=d.threads, metavar="N")
    p.add_argument("--passes", type=int, default=d.passes, metavar="N")
    p.add_argument("--preemptive", type=_on_off, default=True, metavar="on|off")
    p.add_argument("--policy", choices=[s.value for s in SwapPolicy], default="autoextend")
    p.add_argument("--swap-dir", default=None)
    p.add_argument("--baseline", action="store_true",
                   help="nbody_accumulate on plain arrays, without the manager")
    p.add_argument("--timeline", metavar="PATH", default=None)
    p.add_argument("--sample-ms", type=float, default=d.sample_ms)
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    p.add_argument("--output", metavar="PATH", default=None)
    return p


def _interactive_prompt(nbytes: int) -> bool:
    try:
        answer = input(f"swap space is full ({nbytes} bytes needed). Add a swap file? [y/N] ")
    except EOFError:
        return False
    return answer.strip().lower() in ("y", "yes")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = BenchConfig(ram_limit=args.ram_limit, data_bytes=args.data_bytes,
                          element_bytes=args.element_bytes, load=args.load,
                          compute_ms=args.compute_ms, seed=args.seed, threads=args.threads,
                          passes=args.passes, preemptive=args.preemptive, policy=args.policy,
                          swap_dir=args.swap_dir, timeline=args.timeline,
                          sample_ms=args.sample_ms, baseline=args.baseline)
        cfg.manager_config()
    except ConfigError as exc:
        print(f"oocmem-bench: config error: {exc}", file=sys.stderr)
        return 2
    try:
        report = run_scenario(args.scenario, cfg, prompt=_interactive_prompt)
        emit_report(report, args.format, args.output)
    except ConfigError as exc:
        print(f"oocmem-bench: config error: {exc}", file=sys.stderr)
        return 2
    except (ScenarioFailure, OocmemError, OSError) as exc:
        print(f"oocmem-bench: {args.scenario} failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
