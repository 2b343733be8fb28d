import csv
import dataclasses
import io
import json

import pytest

from oocmem import bench
from oocmem.bench import BenchConfig, Report, emit_report, format_report, main, parse_size, \
    run_scenario

KiB = 1024


def small(**kw):
    base = dict(ram_limit=256 * KiB, data_bytes=1024 * KiB, element_bytes=16 * KiB)
    base.update(kw)
    return BenchConfig(**base)


COUNTS = ("miss_count", "prefetch_hit_count", "blocked_wait_count", "bytes_written",
          "bytes_read")


@pytest.mark.parametrize("name", bench.SCENARIOS)
def test_every_scenario_runs_within_budget(name):
    r = run_scenario(name, small())
    assert r.peak_resident_bytes <= r.ram_limit_bytes
    assert r.budget_violations == 0
    assert r.phases


def test_scan_that_fits_never_misses():
    r = run_scenario("sequential_scan", small(data_bytes=256 * KiB))
    assert r.miss_count == 0 and r.bytes_written == 0


def test_const_pass_writes_nothing():
    r = run_scenario("const_vs_mut", small())
    assert r.phases["const"]["bytes_written"] == 0
    assert r.phases["mutable"]["bytes_written"] == 1024 * KiB


def test_seeded_runs_have_identical_counts():
    a = run_scenario("random_access", small(seed=3))
    b = run_scenario("random_access", small(seed=3))
    assert [getattr(a, k) for k in COUNTS] == [getattr(b, k) for k in COUNTS]


def test_nbody_baseline_has_no_io():
    r = run_scenario("nbody_accumulate", small(baseline=True))
    assert r.bytes_written == r.bytes_read == 0 and r.wall_time_ms > 0


def test_threads_flag():
    r = run_scenario("random_access", small(threads=4))
    assert r.budget_violations == 0


def test_timeline_written(tmp_path):
    path = tmp_path / "timeline.csv"
    run_scenario("matrix_transpose", small(timeline=str(path), sample_ms=1.0))
    rows = list(csv.DictReader(open(path)))
    assert len(rows) > 1
    assert all(int(r["main_memory_bytes"]) <= 256 * KiB for r in rows)


def test_text_report_has_every_field():
    r = run_scenario("sequential_scan", small(data_bytes=64 * KiB))
    text = format_report(r, "text")
    for f in dataclasses.fields(Report):
        assert f.name in text


def test_json_round_trip():
    r = run_scenario("sequential_scan", small(data_bytes=64 * KiB))
    assert json.loads(format_report(r, "json")) == json.loads(json.dumps(r.as_dict()))


def test_csv_of_paired_runs_lines_up():
    a = run_scenario("sequential_scan", small(preemptive=True))
    b = run_scenario("sequential_scan", small(preemptive=False))
    ra = list(csv.DictReader(io.StringIO(format_report(a, "csv"))))
    rb = list(csv.DictReader(io.StringIO(format_report(b, "csv"))))
    assert [r["phase"] for r in ra] == [r["phase"] for r in rb]
    assert list(ra[0]) == list(rb[0]) == list(bench.CSV_COLUMNS)


def test_emit_to_path_and_bad_path(tmp_path):
    r = Report("x")
    emit_report(r, "json", tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["scenario"] == "x"
    from oocmem.errors import IoFailure

    with pytest.raises(IoFailure):
        emit_report(r, "json", tmp_path / "nope" / "r.json")


@pytest.mark.parametrize("text,value", [("4096", 4096), ("64K", 64 * KiB), ("2MiB", 2 << 20),
                                        ("1g", 1 << 30)])
def test_parse_size(text, value):
    assert parse_size(text) == value


def test_cli_success(capsys):
    code = main(["sequential_scan", "--ram-limit", "64K", "--data-bytes", "128K",
                 "--element-bytes", "16K", "--format", "json"])
    assert code == 0
    assert json.loads(capsys.readouterr().out)["scenario"] == "sequential_scan"


def test_cli_config_error(capsys):
    assert main(["sequential_scan", "--ram-limit", "1K", "--element-bytes", "4K"]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_bad_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["sequential_scan", "--preemptive", "maybe"])
    assert exc.value.code == 2


def test_cli_scenario_failure(monkeypatch, capsys):
    def broken(run):
        raise bench.ScenarioFailure("checksum mismatch")

    monkeypatch.setitem(bench._RUNNERS, "sequential_scan", broken)
    assert main(["sequential_scan", "--ram-limit", "64K", "--data-bytes", "64K",
                 "--element-bytes", "16K"]) == 1
    assert "checksum mismatch" in capsys.readouterr().err


def test_verify_catches_corruption():
    run = bench._Run(small(), None)
    run.expected[0] = 1
    with pytest.raises(bench.ScenarioFailure):
        run.verify(0, b"abc")
