import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from oocmem import ManagerConfig, MemoryManager, Tracer  # noqa: E402


@pytest.fixture
def make_manager(tmp_path):
    """Factory for managers with strict ledger checks, closed after the test."""
    made = []

    def factory(ram=1000, tracer=None, prefetch=True, strategy=None, prompt=None, **cfg):
        cfg.setdefault("swap_dir", str(tmp_path / f"swap{len(made)}"))
        cfg.setdefault("swap_file_size_bytes", 1 << 16)
        mm = MemoryManager(ManagerConfig(ram_limit_bytes=ram, **cfg),
                           tracer=tracer if tracer is not None else Tracer(),
                           prefetch=prefetch, strategy=strategy, prompt=prompt, strict=True)
        made.append(mm)
        return mm

    yield factory
    for mm in made:
        mm.close()


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(acceptance_log.LINES):
            terminalreporter.write_line(acceptance_log.LINES[n])
