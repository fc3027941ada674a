from __future__ import annotations

import csv
import io
import json
import random
import re
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from patchflow.engine import simulate
from patchflow.metrics import (
    MetricsCollector,
    MetricsError,
    export,
    percentile,
    read_csv,
    to_csv,
    to_json,
    utilization,
)
from patchflow.model import LatencyBreakdown, RecognitionRecord, validate_scenario
from tests.helpers import load_reference, random_scenario


def record(pid: str, frame_id: int, captured: int, done: int) -> tuple[RecognitionRecord, LatencyBreakdown]:
    rec = RecognitionRecord(
        patch_id=pid, plate_text=pid, processed_by="e1", completed_at=done,
        end_to_end_latency=done - captured, camera_id="cam1", frame_id=frame_id,
        extracted_at=captured, hops=("e1",),
    )
    return rec, LatencyBreakdown(0, 0, 0, 0, done - captured)


def test_single_completion_summary():
    mc = MetricsCollector(1_000_000, "collaborative")
    mc.expect_frame("cam1", 0, 200_000, 1)
    mc.record_completion(*record("a", 0, 200_000, 300_000))
    lat = mc.report().latency
    assert lat.mean == lat.p50 == lat.max == 100_000


def test_empty_report():
    rep = MetricsCollector(1_000_000, "edge-only").report()
    assert rep.throughput_fps == 0
    assert rep.latency.count == 0
    assert rep.latency.p50 is None and rep.latency.p95 is None and rep.latency.mean is None


def test_multi_patch_frame_uses_last_patch():
    mc = MetricsCollector(1_000_000, "collaborative")
    mc.expect_frame("cam1", 0, 200_000, 2)
    assert mc.record_completion(*record("a", 0, 200_000, 500_000)) is None
    done = mc.record_completion(*record("b", 0, 200_000, 400_000))
    assert done.completed_at == 400_000 and mc.report().latency.max == 200_000


def test_breakdown_must_sum():
    mc = MetricsCollector(1_000_000, "collaborative")
    rec, _ = record("a", 0, 0, 10)
    with pytest.raises(MetricsError):
        mc.record_completion(rec, LatencyBreakdown(0, 0, 0, 0, 9))


@pytest.mark.parametrize("seed", range(5))
def test_percentile_sort_oracle(seed):
    rnd = random.Random(seed)
    xs = sorted(rnd.randint(0, 10**6) for _ in range(1000))
    for p in (50, 95, 99):
        expected = int(np.percentile(np.array(xs), p, method="inverted_cdf"))
        assert percentile(xs, p) == expected
    assert percentile(xs, 95) == xs[949]


@given(st.lists(st.integers(0, 10**9), min_size=1, max_size=300))
def test_percentiles_ordered(xs):
    xs.sort()
    assert percentile(xs, 50) <= percentile(xs, 95) <= percentile(xs, 99) <= xs[-1]


def test_utilization_examples():
    assert utilization([(0, 1_000_000)], (0, 1_000_000)) == 1.0
    assert utilization([], (0, 1_000_000)) == 0.0
    assert utilization([(0, 250_000), (500_000, 750_000)], (0, 1_000_000)) == 0.5


def test_utilization_overlap_is_error():
    with pytest.raises(MetricsError):
        utilization([(0, 10), (5, 20)], (0, 100))


@given(st.lists(st.tuples(st.integers(0, 1000), st.integers(1, 50)), max_size=30))
def test_utilization_bounded(raw):
    intervals, t = [], 0
    for gap, length in raw:
        t += gap
        intervals.append((t, t + length))
        t += length
    u = utilization(intervals, (100, 5000))
    assert 0.0 <= u <= 1.0


@pytest.fixture(scope="module")
def burst_run():
    return simulate(validate_scenario(load_reference("burst_reference")), trace=True)


def test_throughput_times_window_is_completions(burst_run):
    rep = burst_run.report()
    lo, hi = rep.window_us
    assert round(rep.throughput_fps * (hi - lo) / 1e6) == rep.completions


def test_utilization_in_unit_interval(burst_run):
    rep = burst_run.report()
    for stages in rep.per_node_utilization.values():
        assert all(0.0 <= v <= 1.0 for v in stages.values())


def test_link_traffic_matches_trace(burst_run):
    rep = burst_run.report()
    totals: dict[str, int] = {}
    for line in burst_run.trace:
        _, _, kind, summary = line.split("\t")
        if kind == "TransferDone":
            m = re.match(r"(\S+) \w+ (\d+)B", summary)
            totals[m.group(1)] = totals.get(m.group(1), 0) + int(m.group(2))
    link_only = {k: v for k, v in rep.per_link_traffic.items() if not k.startswith("cam")}
    assert link_only == totals


def test_export_roundtrip(tmp_path, burst_run):
    rep = burst_run.report()
    rows = read_csv(export(rep, "csv", tmp_path))
    by = {(r["metric"], r["scope"]): r for r in rows}
    assert float(by[("throughput", "frames")]["value"]) == pytest.approx(rep.throughput_fps, rel=1e-5)
    assert int(by[("latency_p95", "frames")]["value"]) == rep.latency.p95
    for link, v in rep.per_link_traffic.items():
        assert int(by[("traffic", link)]["value"]) == v
    doc = json.loads(export(rep, "json", tmp_path).read_text())
    assert doc["latency"]["p99"] == rep.latency.p99
    assert doc["per_link_traffic"] == rep.per_link_traffic
    assert doc["throughput_fps"] == pytest.approx(rep.throughput_fps, rel=1e-5)


def test_units_contract(burst_run):
    rows = read_csv_text(to_csv(burst_run.report()))
    assert rows[0] == ["metric", "scope", "value", "unit"]
    for metric, _, _, unit in rows[1:]:
        if metric in ("traffic", "payload_traffic"):
            assert unit == "bytes"
        if metric.startswith("latency_") and metric != "latency_count":
            assert unit == "us"


def read_csv_text(text: str) -> list[list[str]]:
    return list(csv.reader(io.StringIO(text)))


def test_json_six_significant_digits(burst_run):
    doc = to_json(burst_run.report())
    for num in re.findall(r"-?\d+\.\d+(?:e-?\d+)?", doc):
        assert len(Decimal(num).normalize().as_tuple().digits) <= 6


def test_exports_byte_identical():
    sc = validate_scenario(random_scenario(random.Random(77)))
    a, b = simulate(sc).report(), simulate(sc).report()
    assert to_csv(a) == to_csv(b) and to_json(a) == to_json(b)


def test_export_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        export(MetricsCollector(10, "edge-only").report(), "csv", blocker / "sub")
