"""Latency, throughput, traffic and utilization bookkeeping for one run."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from patchflow.model import LatencyBreakdown, RecognitionRecord

WARMUP_FRACTION = 10  # first 1/10 of the run is excluded from summaries


class MetricsError(RuntimeError):
    pass


def percentile(sorted_values: list[int], p: float) -> int | None:
    """Nearest-rank percentile of an already sorted sample."""
    if not sorted_values:
        return None
    rank = max(1, math.ceil(p / 100 * len(sorted_values)))
    return sorted_values[rank - 1]


def utilization(intervals: list[tuple[int, int]], window: tuple[int, int]) -> float:
    """Fraction of ``window`` covered by one worker's busy intervals.

    Intervals are clipped to the window. Overlapping intervals mean the
    worker was double-booked, which is an engine bug.
    """
    lo, hi = window
    if hi <= lo:
        return 0.0
    busy = 0
    last_end = None
    for s, e in sorted(intervals):
        if e < s:
            raise MetricsError(f"interval ends before it starts: ({s}, {e})")
        if last_end is not None and s < last_end:
            raise MetricsError(f"overlapping busy intervals at {s}")
        last_end = e
        busy += max(0, min(e, hi) - max(s, lo))
    return busy / (hi - lo)


@dataclass(frozen=True)
class FrameCompletion:
    camera_id: str
    frame_id: int
    capture_time: int
    completed_at: int
    patches: int

    @property
    def latency(self) -> int:
        return self.completed_at - self.capture_time


@dataclass
class LatencySummary:
    count: int
    mean: float | None
    p50: int | None
    p95: int | None
    p99: int | None
    max: int | None


@dataclass
class LinkTraffic:
    bytes: int = 0
    payload_bytes: int = 0
    messages: int = 0


@dataclass
class MetricsReport:
    policy: str
    window_us: tuple[int, int]
    latency: LatencySummary
    completions: int
    throughput_fps: float
    per_link_traffic: dict[str, int]
    per_link_payload: dict[str, int]
    per_node_utilization: dict[str, dict[str, float]]
    drops: int
    counters: dict[str, int] = field(default_factory=dict)
    peak_occupancy: dict[str, int] = field(default_factory=dict)

    def uplink_bytes(self, cloud_id: str, payload_only: bool = False) -> int:
        src = self.per_link_payload if payload_only else self.per_link_traffic
        return sum(v for k, v in src.items() if k.endswith(f"->{cloud_id}"))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window_us"] = list(self.window_us)
        return _round_floats(d)


def _sig6(x: float) -> float:
    return float(f"{x:.6g}")


def _round_floats(obj):
    if isinstance(obj, float):
        return _sig6(obj)
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


class MetricsCollector:
    def __init__(self, duration_us: int, policy: str):
        self.policy = policy
        self.window = (duration_us // WARMUP_FRACTION, duration_us)
        self.samples: list[tuple[RecognitionRecord, LatencyBreakdown]] = []
        self.frames: list[FrameCompletion] = []
        self.busy: dict[tuple[str, str], list[tuple[int, int]]] = {}
        self.links: dict[tuple[str, str], LinkTraffic] = {}
        self.counters: dict[str, int] = {}
        self.peak_occupancy: dict[str, int] = {}
        self.drops = 0
        self._pending: dict[tuple[str, int], list] = {}

    def count(self, name: str, n: int = 1) -> None:
        self.counters[name] = self.counters.get(name, 0) + n

    def expect_frame(self, camera_id: str, frame_id: int, capture_time: int, patches: int) -> None:
        if patches > 0:
            self._pending[(camera_id, frame_id)] = [capture_time, patches, patches]

    def record_completion(self, record: RecognitionRecord, breakdown: LatencyBreakdown) -> FrameCompletion | None:
        """Store one patch result; returns the frame completion if it was the last patch."""
        if breakdown.total != record.end_to_end_latency:
            raise MetricsError(f"latency components of {record.patch_id} do not sum to the total")
        self.samples.append((record, breakdown))
        key = (record.camera_id, record.frame_id)
        entry = self._pending.get(key)
        if entry is None:
            return None
        entry[2] -= 1
        if entry[2] > 0:
            return None
        del self._pending[key]
        done = FrameCompletion(record.camera_id, record.frame_id, entry[0], record.completed_at, entry[1])
        self.frames.append(done)
        return done

    def add_busy(self, node_id: str, stage: str, start: int, end: int) -> None:
        self.busy.setdefault((node_id, stage), []).append((start, end))

    def add_traffic(self, src: str, dst: str, nbytes: int, payload_bytes: int) -> None:
        t = self.links.setdefault((src, dst), LinkTraffic())
        t.bytes += nbytes
        t.payload_bytes += payload_bytes
        t.messages += 1

    def sample_occupancy(self, node_id: str, occupancy: int) -> None:
        if occupancy > self.peak_occupancy.get(node_id, 0):
            self.peak_occupancy[node_id] = occupancy
        self.peak_occupancy.setdefault(node_id, 0)

    def in_window(self, t: int) -> bool:
        lo, hi = self.window
        return lo <= t <= hi

    def report(self, workers: dict[str, tuple[str, ...]] | None = None) -> MetricsReport:
        lo, hi = self.window
        done = [f for f in self.frames if self.in_window(f.completed_at)]
        lat = sorted(f.latency for f in done)
        summary = LatencySummary(
            count=len(lat),
            mean=sum(lat) / len(lat) if lat else None,
            p50=percentile(lat, 50),
            p95=percentile(lat, 95),
            p99=percentile(lat, 99),
            max=lat[-1] if lat else None,
        )
        span_s = (hi - lo) / 1e6
        workers = workers or {}
        util: dict[str, dict[str, float]] = {}
        for node_id in sorted(set(workers) | {n for n, _ in self.busy}):
            stages = set(workers.get(node_id, ())) | {s for n, s in self.busy if n == node_id}
            util[node_id] = {
                s: utilization(self.busy.get((node_id, s), []), self.window) for s in sorted(stages)
            }
        keys = sorted(self.links)
        return MetricsReport(
            policy=self.policy,
            window_us=self.window,
            latency=summary,
            completions=len(done),
            throughput_fps=len(done) / span_s if span_s > 0 else 0.0,
            per_link_traffic={f"{s}->{d}": self.links[(s, d)].bytes for s, d in keys},
            per_link_payload={f"{s}->{d}": self.links[(s, d)].payload_bytes for s, d in keys},
            per_node_utilization=util,
            drops=self.drops,
            counters=dict(sorted(self.counters.items())),
            peak_occupancy=dict(sorted(self.peak_occupancy.items())),
        )


# --------------------------------------------------------------------------
# Export

def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def report_rows(report: MetricsReport) -> list[tuple[str, str, object, str]]:
    rows: list[tuple[str, str, object, str]] = [("policy", "run", report.policy, "label")]
    rows.append(("window_start", "run", report.window_us[0], "us"))
    rows.append(("window_end", "run", report.window_us[1], "us"))
    lat = report.latency
    rows.append(("latency_count", "frames", lat.count, "count"))
    for name in ("mean", "p50", "p95", "p99", "max"):
        v = getattr(lat, name)
        rows.append((f"latency_{name}", "frames", "" if v is None else v, "us"))
    rows.append(("completions", "frames", report.completions, "count"))
    rows.append(("throughput", "frames", report.throughput_fps, "fps"))
    for link, v in report.per_link_traffic.items():
        rows.append(("traffic", link, v, "bytes"))
    for link, v in report.per_link_payload.items():
        rows.append(("payload_traffic", link, v, "bytes"))
    for node, stages in report.per_node_utilization.items():
        for stage, v in stages.items():
            rows.append(("utilization", f"{node}.{stage}", v, "fraction"))
    rows.append(("drops", "frames", report.drops, "count"))
    for name, v in report.counters.items():
        rows.append(("counter", name, v, "count"))
    for node, v in report.peak_occupancy.items():
        rows.append(("peak_occupancy", node, v, "patches"))
    return rows


def to_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "scope", "value", "unit"])
    for metric, scope, value, unit in report_rows(report):
        w.writerow([metric, scope, _fmt(value), unit])
    return buf.getvalue()


def to_json(report: MetricsReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def export(report: MetricsReport, fmt: str, destination: str | Path) -> Path:
    """Write ``report`` as ``metrics.csv`` or ``metrics.json`` under ``destination``."""
    dest = Path(destination)
    dest.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        path, text = dest / "metrics.csv", to_csv(report)
    elif fmt == "json":
        path, text = dest / "metrics.json", to_json(report)
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    path.write_text(text, encoding="utf-8")
    return path


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
