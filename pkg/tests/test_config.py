import pytest

from oocmem.config import CONFIG_KEYS, ManagerConfig, SwapPolicy, load_config, \
    parse_config_text
from oocmem.errors import ConfigError


def test_defaults():
    c = ManagerConfig(ram_limit_bytes=1000)
    assert c.preemptive_fraction == 0.10 and c.significance_level == 0.01
    assert c.overcommit is False and c.preemptive_budget_bytes == 100


def test_keys_are_exact():
    assert CONFIG_KEYS == ("ram_limit_bytes", "preemptive_fraction", "significance_level",
                           "swap_dir", "swap_file_size_bytes", "swap_policy", "overcommit",
                           "worker_count")


def test_file_then_env_then_kwargs(tmp_path):
    path = tmp_path / "oocmem.conf"
    path.write_text("# budget\nram_limit_bytes = 4096\nswap_policy=fail\noverCommit=1\n"
                    .replace("overCommit", "overcommit"))
    env = {"OOCMEM_RAM_LIMIT_BYTES": "8192", "OOCMEM_WORKER_COUNT": "3"}
    c = load_config(path, env=env, worker_count=5)
    assert c.ram_limit_bytes == 8192
    assert c.swap_policy is SwapPolicy.FAIL
    assert c.overcommit is True
    assert c.worker_count == 5


@pytest.mark.parametrize("text", ["ram_limit_bytes", "bogus=1", "ram_limit_bytes=abc"])
def test_bad_files(tmp_path, text):
    path = tmp_path / "c"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path, env={})


@pytest.mark.parametrize("kw", [
    dict(ram_limit_bytes=0),
    dict(ram_limit_bytes=100, preemptive_fraction=0),
    dict(ram_limit_bytes=100, preemptive_fraction=1.5),
    dict(ram_limit_bytes=100, significance_level=1),
    dict(ram_limit_bytes=5, preemptive_fraction=0.1),  # budget rounds to zero bytes
    dict(ram_limit_bytes=100, worker_count=0),
    dict(ram_limit_bytes=100, swap_policy="sometimes"),
])
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        ManagerConfig(**kw)


def test_missing_ram_limit():
    with pytest.raises(ConfigError):
        load_config(env={})


def test_comments_and_blank_lines():
    assert parse_config_text("\n# x\nswap_dir = /tmp/a # trailing\n") == {"swap_dir": "/tmp/a"}
