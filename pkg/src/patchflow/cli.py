"""Command-line entry point.

Exit codes: 0 success, 1 domain error (invalid scenario, bad policy or
parameter), 2 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Any

from patchflow import __version__
from patchflow.engine import Simulator, simulate
from patchflow.metrics import MetricsReport, to_csv, to_json
from patchflow.model import POLICIES, Scenario, ScenarioError, validate_scenario
from patchflow.workload import FrameEvent, generate_frame_events, read_frame_events, write_frame_events

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 1, 2
REFERENCE_SCENARIOS = ("burst_reference", "traffic_reference", "minimal")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- scenarios

def scenario_text(ref: str) -> tuple[str, str]:
    """Return (label, text) for a path or a packaged reference scenario name."""
    p = Path(ref)
    if p.is_file():
        try:
            return str(p), p.read_text(encoding="utf-8")
        except OSError as exc:
            raise CliError(f"cannot read {ref}: {exc}", EXIT_IO) from None
    if ref in REFERENCE_SCENARIOS:
        res = resources.files("patchflow") / "scenarios" / f"{ref}.json"
        return ref, res.read_text(encoding="utf-8")
    raise CliError(f"cannot read {ref}", EXIT_IO)


def load_raw(ref: str) -> tuple[str, dict]:
    label, text = scenario_text(ref)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"{label}: invalid JSON: {exc}", EXIT_DOMAIN) from None
    return label, raw


def load_scenario(ref: str, seed: int | None = None, policy: str | None = None) -> tuple[str, Scenario]:
    label, raw = load_raw(ref)
    return label, validated(raw, seed, policy)


def validated(raw: dict, seed: int | None = None, policy: str | None = None) -> Scenario:
    raw = dict(raw)
    if seed is not None:
        raw["seed"] = seed
    if policy is not None:
        raw["policy"] = policy
    try:
        return validate_scenario(raw)
    except ScenarioError as exc:
        raise CliError("\n".join(exc.errors), EXIT_DOMAIN) from None


def scenario_hash(scenario: Scenario) -> str:
    blob = json.dumps(scenario.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def default_out(label: str, scenario: Scenario) -> Path:
    root = Path(os.environ.get("PATCHFLOW_OUT", "patchflow-out"))
    return root / f"{Path(label).stem}-{scenario.policy}-seed{scenario.seed}"


# ------------------------------------------------------------------ outputs

@dataclass(frozen=True)
class RunManifest:
    scenario: str
    scenario_sha256: str
    seed: int
    policy: str
    calibration: str
    tool_version: str
    output_dir: str
    frames: str | None = None


def records_csv(sim: Simulator) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["patch_id", "plate_text", "processed_by", "completed_at", "end_to_end_latency",
                "frame_queue_wait", "extraction", "patch_queue_wait", "transfer", "recognition", "hops"])
    for r in sim.records:
        b = sim.breakdowns[r.patch_id]
        w.writerow([r.patch_id, r.plate_text, r.processed_by, r.completed_at, r.end_to_end_latency,
                    b.frame_queue_wait, b.extraction, b.patch_queue_wait, b.transfer, b.recognition,
                    " ".join(r.hops)])
    return buf.getvalue()


def write_run(out: Path, label: str, scenario: Scenario, sim: Simulator, report: MetricsReport,
              trace: bool, frames_label: str | None = None) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(to_csv(report), encoding="utf-8")
        (out / "metrics.json").write_text(to_json(report), encoding="utf-8")
        (out / "records.csv").write_text(records_csv(sim), encoding="utf-8")
        manifest = RunManifest(label, scenario_hash(scenario), scenario.seed, scenario.policy,
                               scenario.calibration, __version__, str(out), frames_label)
        (out / "manifest.json").write_text(json.dumps(asdict(manifest), sort_keys=True, indent=2) + "\n",
                                           encoding="utf-8")
        if trace:
            (out / "trace.tsv").write_text(sim.trace_text(), encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}", EXIT_IO) from None


def run_one(scenario: Scenario, frames: list[FrameEvent] | None = None,
            trace: bool = False) -> tuple[Simulator, MetricsReport]:
    sim = simulate(scenario, frames=frames, trace=trace)
    return sim, sim.report()


# ----------------------------------------------------------------- commands

def cmd_validate(args) -> int:
    load_scenario(args.scenario)
    return EXIT_OK


def cmd_simulate(args) -> int:
    label, scenario = load_scenario(args.scenario, args.seed, args.policy)
    frames = _read_frames(args.frames) if args.frames else None
    sim, report = run_one(scenario, frames, args.trace)
    out = Path(args.out) if args.out else default_out(label, scenario)
    write_run(out, label, scenario, sim, report, args.trace, args.frames)
    print(summary_line(report))
    return EXIT_OK


def summary_line(r: MetricsReport) -> str:
    mean = "-" if r.latency.mean is None else f"{r.latency.mean / 1000:.1f}ms"
    return f"{r.policy}: {r.throughput_fps:.3f} fps, mean latency {mean}, {r.completions} frames, {r.drops} drops"


COMPARE_COLUMNS = ("policy", "latency_mean_ms", "latency_p95_ms", "fps", "uplink_bytes",
                   "uplink_payload_bytes", "edge_util", "cloud_util")


def compare_rows(scenario: Scenario, reports: dict[str, MetricsReport]) -> list[dict[str, Any]]:
    cloud = scenario.cloud.node_id
    edges = [n.node_id for n in scenario.edges]
    rows = []
    for policy, r in reports.items():
        edge_u = [r.per_node_utilization.get(e, {}).get("recognition", 0.0) for e in edges]
        cloud_u = r.per_node_utilization.get(cloud, {})
        rows.append({
            "policy": policy,
            "latency_mean_ms": None if r.latency.mean is None else r.latency.mean / 1000,
            "latency_p95_ms": None if r.latency.p95 is None else r.latency.p95 / 1000,
            "fps": r.throughput_fps,
            "uplink_bytes": r.uplink_bytes(cloud),
            "uplink_payload_bytes": r.uplink_bytes(cloud, payload_only=True),
            "edge_util": sum(edge_u) / len(edge_u) if edge_u else 0.0,
            "cloud_util": max(cloud_u.values(), default=0.0),
        })
    return rows


def ratio_rows(rows: list[dict[str, Any]]) -> list[dict[str, Any]]:
    by = {r["policy"]: r for r in rows}
    out = []
    base = by.get("edge-only")
    raw = by.get("cloud-only")
    for r in rows:
        if base and r["policy"] != "edge-only":
            lat = (r["latency_mean_ms"] / base["latency_mean_ms"]
                   if r["latency_mean_ms"] is not None and base["latency_mean_ms"] else None)
            fps = r["fps"] / base["fps"] if base["fps"] else None
            out.append({"ratio": "latency_vs_edge_only", "policy": r["policy"], "value": lat})
            out.append({"ratio": "fps_vs_edge_only", "policy": r["policy"], "value": fps})
        if raw and r["policy"] != "cloud-only" and raw["uplink_payload_bytes"]:
            out.append({"ratio": "traffic_vs_cloud_only", "policy": r["policy"],
                        "value": r["uplink_payload_bytes"] / raw["uplink_payload_bytes"]})
    return out


def _cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def format_table(rows: list[dict[str, Any]], columns) -> str:
    cells = [[_cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def cmd_compare(args) -> int:
    label, raw = load_raw(args.scenario)
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    bad = [p for p in policies if p not in POLICIES]
    if bad:
        raise CliError(f"unknown policy {', '.join(bad)}", EXIT_DOMAIN)
    out = Path(args.out) if args.out else Path(os.environ.get("PATCHFLOW_OUT", "patchflow-out")) / (
        f"{Path(label).stem}-compare")
    reports: dict[str, MetricsReport] = {}
    scenario = None
    for policy in policies:
        scenario = validated(raw, args.seed, policy)
        sim, report = run_one(scenario)
        write_run(out / policy, label, scenario, sim, report, trace=False)
        reports[policy] = report
    rows = compare_rows(scenario, reports)
    ratios = ratio_rows(rows)
    table = format_table(rows, COMPARE_COLUMNS)
    rtable = format_table(ratios, ("ratio", "policy", "value")) if ratios else ""
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "compare.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COMPARE_COLUMNS)
            for r in rows:
                w.writerow([_cell(r[c]) if isinstance(r[c], float) else r[c] for c in COMPARE_COLUMNS])
            for r in ratios:
                w.writerow([f"ratio:{r['ratio']}", _cell(r["value"]), r["policy"]] + [""] * (len(COMPARE_COLUMNS) - 3))
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}", EXIT_IO) from None
    print(table)
    if rtable:
        print()
        print(rtable)
    return EXIT_OK


def parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_param(raw: dict, path: str, value: Any) -> dict:
    """Return a copy of ``raw`` with the dotted ``path`` set to ``value``.

    List segments may be an index, ``*`` (every element) or an element id
    (``node_id`` / ``camera_id``).
    """
    doc = copy.deepcopy(raw)
    parts = path.split(".")

    def walk(obj, i):
        key = parts[i]
        last = i == len(parts) - 1
        if isinstance(obj, list):
            if key == "*":
                targets = list(range(len(obj)))
            elif key.isdigit():
                targets = [int(key)]
            else:
                targets = [j for j, el in enumerate(obj)
                           if isinstance(el, dict) and key in (el.get("node_id"), el.get("camera_id"))]
            if not targets or any(t >= len(obj) for t in targets):
                raise CliError(f"parameter path {path!r}: no element {key!r}", EXIT_DOMAIN)
            for t in targets:
                if last:
                    obj[t] = value
                else:
                    walk(obj[t], i + 1)
        elif isinstance(obj, dict):
            if last:
                obj[key] = value
            elif key not in obj:
                raise CliError(f"parameter path {path!r}: no key {key!r}", EXIT_DOMAIN)
            else:
                walk(obj[key], i + 1)
        else:
            raise CliError(f"parameter path {path!r} does not address a scenario field", EXIT_DOMAIN)

    walk(doc, 0)
    return doc


SWEEP_COLUMNS = ("value", "fps", "latency_mean_us", "latency_p95_us", "offloaded_neighbor",
                 "offloaded_cloud", "uplink_bytes", "drops")


def _sweep_job(job: tuple[str, dict, str, str]) -> dict:
    label, raw, value_text, out = job
    scenario = validated(raw)
    sim, report = run_one(scenario)
    write_run(Path(out), label, scenario, sim, report, trace=False)
    return {
        "value": value_text,
        "fps": f"{report.throughput_fps:.6g}",
        "latency_mean_us": "" if report.latency.mean is None else f"{report.latency.mean:.6g}",
        "latency_p95_us": "" if report.latency.p95 is None else report.latency.p95,
        "offloaded_neighbor": report.counters.get("offloaded_neighbor", 0),
        "offloaded_cloud": report.counters.get("offloaded_cloud", 0),
        "uplink_bytes": report.uplink_bytes(scenario.cloud.node_id),
        "drops": report.drops,
    }


def cmd_sweep(args) -> int:
    label, raw = load_raw(args.scenario)
    if args.seed is not None:
        raw["seed"] = args.seed
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise CliError("--values needs at least one value", EXIT_DOMAIN)
    out = Path(args.out) if args.out else Path(os.environ.get("PATCHFLOW_OUT", "patchflow-out")) / (
        f"{Path(label).stem}-sweep")
    jobs = []
    for v in values:
        doc = set_param(raw, args.param, parse_value(v))
        validated(doc)  # fail fast before any run starts
        jobs.append((label, doc, v, str(out / f"{args.param}={v}")))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}", EXIT_IO) from None
    print(format_table(rows, SWEEP_COLUMNS))
    return EXIT_OK


def _read_frames(path: str) -> list[FrameEvent]:
    try:
        return read_frame_events(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from None
    except ValueError as exc:
        raise CliError(str(exc), EXIT_DOMAIN) from None


def cmd_frames(args) -> int:
    _, scenario = load_scenario(args.scenario, args.seed)
    events = generate_frame_events(scenario)
    try:
        write_frame_events(events, args.out)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO) from None
    print(f"{len(events)} frames -> {args.out}")
    return EXIT_OK


def cmd_daemon(args) -> int:
    from patchflow.netd.daemon import DaemonConfig, serve_cloud, serve_edge

    _, scenario = load_scenario(args.scenario, args.seed, args.policy)
    ids = {n.node_id for n in scenario.nodes}
    if args.node_id not in ids:
        raise CliError(f"unknown node {args.node_id}", EXIT_DOMAIN)
    role = scenario.node(args.node_id).role
    if args.role and args.role != role:
        raise CliError(f"node {args.node_id} is a {role} node, not {args.role}", EXIT_DOMAIN)
    if scenario.endpoint(args.node_id) is None and args.port is None:
        raise CliError(f"no transport entry for {args.node_id}", EXIT_DOMAIN)
    cfg = DaemonConfig(
        scenario=scenario,
        node_id=args.node_id,
        frames=_read_frames(args.frames) if args.frames else None,
        time_scale=args.time_scale,
        archive_path=Path(args.archive) if args.archive else None,
        idle_timeout=args.idle_timeout,
        port=args.port,
    )
    try:
        (serve_cloud if role == "cloud" else serve_edge)(cfg)
    except OSError as exc:
        raise CliError(f"{args.node_id}: {exc}", EXIT_IO) from None
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"patchflow {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="run one simulation and export metrics")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--out")
    p.add_argument("--trace", action="store_true")
    p.add_argument("--frames", help="replay a frame-event file instead of the generated workload")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="run several policies on one seed")
    p.add_argument("--scenario", required=True)
    p.add_argument("--policies", default=",".join(POLICIES))
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="vary one numeric scenario field")
    p.add_argument("--scenario", required=True)
    p.add_argument("--param", required=True, help="dotted path, e.g. nodes.e1.patch_soft_threshold")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("frames", help="write the scenario's workload as a frame-event file")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_frames)

    p = sub.add_parser("daemon", help="run one node of a live deployment")
    p.add_argument("--scenario", required=True)
    p.add_argument("--node-id", required=True)
    p.add_argument("--role", choices=("edge", "cloud"))
    p.add_argument("--seed", type=int)
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--frames")
    p.add_argument("--time-scale", type=float, default=1.0)
    p.add_argument("--archive")
    p.add_argument("--port", type=int)
    p.add_argument("--idle-timeout", type=float, default=30.0)
    p.set_defaults(func=cmd_daemon)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except KeyboardInterrupt:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
