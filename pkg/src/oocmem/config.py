"""Manager configuration: key=value files with OOCMEM_* environment overrides."""
from __future__ import annotations

import dataclasses
import enum
import os
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Mapping

from .errors import ConfigError

ENV_PREFIX = "OOCMEM_"


class SwapPolicy(enum.Enum):
    FAIL = "fail"
    INTERACTIVE = "interactive"
    AUTOEXTEND = "autoextend"

    @classmethod
    def parse(cls, value) -> "SwapPolicy":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ConfigError(f"unknown swap policy {value!r}") from None


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


@dataclass
class ManagerConfig:
    ram_limit_bytes: int
    preemptive_fraction: float = 0.10
    significance_level: float = 0.01
    swap_dir: str | None = None
    swap_file_size_bytes: int = 64 << 20
    swap_policy: SwapPolicy = SwapPolicy.AUTOEXTEND
    overcommit: bool = False
    worker_count: int = 2

    def __post_init__(self):
        self.swap_policy = SwapPolicy.parse(self.swap_policy)
        self.validate()

    def validate(self) -> None:
        if int(self.ram_limit_bytes) <= 0:
            raise ConfigError("ram_limit_bytes must be positive")
        if not 0 < self.preemptive_fraction <= 1:
            raise ConfigError("preemptive_fraction must lie in (0, 1]")
        if not 0 < self.significance_level < 1:
            raise ConfigError("significance_level must lie in (0, 1)")
        if self.preemptive_budget_bytes < 1:
            raise ConfigError("pre-emptive budget rounds to zero bytes")
        if int(self.swap_file_size_bytes) <= 0:
            raise ConfigError("swap_file_size_bytes must be positive")
        if int(self.worker_count) <= 0:
            raise ConfigError("worker_count must be positive")

    @property
    def preemptive_budget_bytes(self) -> int:
        # decimal parse keeps 0.1 * 1000 == 100 exactly
        return int(Fraction(str(self.preemptive_fraction)) * int(self.ram_limit_bytes))

    def replace(self, **changes) -> "ManagerConfig":
        return dataclasses.replace(self, **changes)


_CONVERTERS = {
    "ram_limit_bytes": int,
    "preemptive_fraction": float,
    "significance_level": float,
    "swap_dir": str,
    "swap_file_size_bytes": int,
    "swap_policy": SwapPolicy.parse,
    "overcommit": _parse_bool,
    "worker_count": int,
}

CONFIG_KEYS = tuple(_CONVERTERS)


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value")
        if key not in _CONVERTERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def load_config(path: str | os.PathLike | None = None,
                env: Mapping[str, str] | None = None, **overrides) -> ManagerConfig:
    """Build a config from an optional file, then the environment, then kwargs."""
    values: dict = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text()))
    env = os.environ if env is None else env
    for key in CONFIG_KEYS:
        name = ENV_PREFIX + key.upper()
        if name in env:
            values[key] = env[name]
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "ram_limit_bytes" not in values:
        raise ConfigError("ram_limit_bytes is required")
    try:
        converted = {k: _CONVERTERS[k](v) for k, v in values.items()}
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return ManagerConfig(**converted)
