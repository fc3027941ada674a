"""Domain types, scenario validation and link arithmetic.

All times are integer microseconds. Every type here is an immutable value
object; collections are stored as tuples so instances can be shared freely
between the simulator, the daemons and worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from typing import Any, Mapping

ROLES = ("edge", "cloud")
POLICIES = ("edge-only", "cloud-only", "collaborative")
STAGE_NAMES = ("hyperlpr", "yolo", "mtcnn")

# Fixed per-message framing overhead used by the simulator's traffic model.
HEADER_BYTES = 64
# Recognition results reported to the cloud.
RESULT_BYTES = 256
# Probe and probe-ack messages carry no payload.
PROBE_BYTES = HEADER_BYTES

MAX_SEED = 2**64 - 1


def round_half_up(x: float | Fraction) -> int:
    return math.floor(x + Fraction(1, 2)) if isinstance(x, Fraction) else math.floor(x + 0.5)


@dataclass(frozen=True)
class FrameDescriptor:
    frame_id: int
    camera_id: str
    capture_time: int
    size_bytes: int


@dataclass(frozen=True)
class PatchDescriptor:
    patch_id: str
    camera_id: str
    frame_id: int
    size_bytes: int
    extracted_at: int
    origin_node: str
    hops: tuple[str, ...]
    capture_time: int = 0
    index: int = 0

    @property
    def parent_frame(self) -> tuple[str, int]:
        return (self.camera_id, self.frame_id)

    @property
    def plate_text(self) -> str:
        return plate_token(self.camera_id, self.frame_id, self.index)

    def visit(self, node_id: str) -> PatchDescriptor:
        return replace(self, hops=self.hops + (node_id,))


def patch_id_for(camera_id: str, frame_id: int, index: int) -> str:
    return f"{camera_id}/{frame_id}/{index}"


def plate_token(camera_id: str, frame_id: int, index: int) -> str:
    return f"{camera_id}-{frame_id}-{index}"


@dataclass(frozen=True)
class LatencyBreakdown:
    """Per-patch decomposition of end-to-end latency; fields sum to the total."""

    frame_queue_wait: int = 0
    extraction: int = 0
    patch_queue_wait: int = 0
    transfer: int = 0
    recognition: int = 0

    @property
    def total(self) -> int:
        return (
            self.frame_queue_wait
            + self.extraction
            + self.patch_queue_wait
            + self.transfer
            + self.recognition
        )


@dataclass(frozen=True)
class RecognitionRecord:
    patch_id: str
    plate_text: str
    processed_by: str
    completed_at: int
    end_to_end_latency: int
    camera_id: str = ""
    frame_id: int = 0
    extracted_at: int = 0
    hops: tuple[str, ...] = ()


@dataclass(frozen=True)
class ServiceTime:
    mean_us: float
    jitter: float = 0.0


@dataclass(frozen=True)
class StageProfile:
    name: str
    extraction_time_us: ServiceTime
    extraction_time_cloud_us: ServiceTime
    recognition_time_edge_us: ServiceTime
    recognition_time_cloud_us: ServiceTime
    plates_per_frame: tuple[tuple[int, float], ...]
    patch_size_ratio: float

    def problems(self) -> list[str]:
        out = []
        if self.name not in STAGE_NAMES:
            out.append(f"unknown calibration profile {self.name}")
        for f in ("extraction_time_us", "extraction_time_cloud_us",
                  "recognition_time_edge_us", "recognition_time_cloud_us"):
            st = getattr(self, f)
            if not st.mean_us > 0:
                out.append(f"{self.name}: {f} mean must be positive")
            if not 0 <= st.jitter < 1:
                out.append(f"{self.name}: {f} jitter must be in [0, 1)")
        total = sum(p for _, p in self.plates_per_frame)
        if abs(total - 1.0) > 1e-9:
            out.append(f"{self.name}: plates_per_frame probabilities sum to {total:g}, not 1")
        if any(k not in (0, 1, 2, 3) or p < 0 for k, p in self.plates_per_frame):
            out.append(f"{self.name}: plates_per_frame must map {{0,1,2,3}} to non-negative probabilities")
        if not 0 < self.patch_size_ratio < 1:
            out.append(f"{self.name}: patch_size_ratio must lie in (0, 1)")
        if not self.recognition_time_cloud_us.mean_us < self.recognition_time_edge_us.mean_us:
            out.append(f"{self.name}: cloud recognition must be faster than edge recognition")
        return out


@dataclass(frozen=True)
class Burst:
    start_us: int
    end_us: int
    rate_multiplier: float


@dataclass(frozen=True)
class CameraProfile:
    camera_id: str
    fps: Fraction
    frame_size_mean_bytes: int
    frame_size_jitter: float = 0.0
    bursts: tuple[Burst, ...] = ()

    def multiplier_at(self, now: int) -> Fraction:
        for b in self.bursts:
            if b.start_us <= now < b.end_us:
                return Fraction(b.rate_multiplier)
        return Fraction(1)


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    role: str
    extraction_profile: str | None = None
    recognition_profile: str | None = None
    patch_soft_threshold: int = 0
    frame_queue_capacity: int | None = None
    neighbors: tuple[str, ...] = ()
    # Collaborative policy only: keep the local recognition worker out of
    # the loop so every patch is offloaded.
    offload_all: bool = False


@dataclass(frozen=True)
class LinkSpec:
    src: str
    dst: str
    bandwidth_bps: float
    propagation_delay_us: float = 0


def transmission_time(link: LinkSpec, payload_bytes: int) -> int:
    return math.ceil(Fraction(payload_bytes * 8 * 10**6) / Fraction(link.bandwidth_bps))


def transfer_time(link: LinkSpec, payload_bytes: int) -> int:
    """Transmission plus propagation time of ``payload_bytes`` over ``link``."""
    return transmission_time(link, payload_bytes) + math.ceil(Fraction(link.propagation_delay_us))


@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int


@dataclass(frozen=True)
class Scenario:
    nodes: tuple[NodeSpec, ...]
    links: tuple[LinkSpec, ...]
    cameras: tuple[CameraProfile, ...]
    policy: str
    calibration: str
    seed: int
    duration_us: int
    probe_period_us: int
    calibration_overrides: tuple[tuple[str, Any], ...] = ()
    transport: tuple[tuple[str, Endpoint], ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def _lookup(self) -> dict:
        if self._index is None:
            idx = {
                "nodes": {n.node_id: n for n in self.nodes},
                "links": {(l.src, l.dst): l for l in self.links},
                "cameras": {c.camera_id: c for c in self.cameras},
            }
            object.__setattr__(self, "_index", idx)
        return self._index

    def node(self, node_id: str) -> NodeSpec:
        return self._lookup()["nodes"][node_id]

    def link(self, src: str, dst: str) -> LinkSpec | None:
        return self._lookup()["links"].get((src, dst))

    @property
    def cloud(self) -> NodeSpec:
        return next(n for n in self.nodes if n.role == "cloud")

    @property
    def edges(self) -> tuple[NodeSpec, ...]:
        return tuple(n for n in self.nodes if n.role == "edge")

    def edge_of(self, camera_id: str) -> str:
        nodes = self._lookup()["nodes"]
        return next(l.dst for l in self.links if l.src == camera_id and l.dst in nodes)

    def endpoint(self, node_id: str) -> Endpoint | None:
        return dict(self.transport).get(node_id)

    def to_dict(self) -> dict:
        return scenario_to_dict(self)


class ScenarioError(ValueError):
    """Raised with the full list of violations found in a scenario."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# --------------------------------------------------------------------------
# Parsing and validation

_TOP_REQUIRED = ("nodes", "links", "cameras", "policy", "calibration", "seed",
                 "duration_us", "probe_period_us")
_TOP_OPTIONAL = ("calibration_overrides", "transport")
_NODE_KEYS = {f.name for f in fields(NodeSpec)}
_LINK_KEYS = {f.name for f in fields(LinkSpec)}
_CAMERA_KEYS = {f.name for f in fields(CameraProfile)}
_BURST_KEYS = {f.name for f in fields(Burst)}
_PROFILE_KEYS = {f.name for f in fields(StageProfile)} - {"name"}


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v: Any) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def _unknown(where: str, obj: Mapping, allowed) -> list[str]:
    return [f"unknown key '{k}' in {where}" for k in obj if k not in allowed]


def parse_fps(v: Any) -> Fraction | None:
    try:
        if isinstance(v, bool):
            return None
        if isinstance(v, str):
            f = Fraction(v)
        elif isinstance(v, float):
            f = Fraction(v).limit_denominator(10**6)
        elif isinstance(v, int):
            f = Fraction(v)
        else:
            return None
    except (ValueError, ZeroDivisionError):
        return None
    return f if f > 0 else None


def parse_service_time(v: Any) -> ServiceTime | None:
    if isinstance(v, (list, tuple)) and len(v) == 2 and all(_is_num(x) for x in v):
        return ServiceTime(float(v[0]), float(v[1]))
    if isinstance(v, Mapping) and set(v) <= {"mean_us", "jitter"} and _is_num(v.get("mean_us")):
        j = v.get("jitter", 0.0)
        if _is_num(j):
            return ServiceTime(float(v["mean_us"]), float(j))
    return None


def parse_plates(v: Any) -> tuple[tuple[int, float], ...] | None:
    if not isinstance(v, Mapping):
        return None
    out = []
    for k, p in v.items():
        try:
            ki = int(k)
        except (TypeError, ValueError):
            return None
        if not _is_num(p):
            return None
        out.append((ki, float(p)))
    return tuple(sorted(out))


def _apply_overrides(base: StageProfile, overrides: Mapping, errors: list[str]) -> StageProfile:
    changes: dict[str, Any] = {}
    for key, value in overrides.items():
        if key not in _PROFILE_KEYS:
            errors.append(f"unknown key '{key}' in calibration_overrides")
        elif key == "plates_per_frame":
            parsed = parse_plates(value)
            if parsed is None:
                errors.append("calibration_overrides.plates_per_frame must map plate counts to probabilities")
            else:
                changes[key] = parsed
        elif key == "patch_size_ratio":
            if _is_num(value):
                changes[key] = float(value)
            else:
                errors.append("calibration_overrides.patch_size_ratio must be a number")
        else:
            st = parse_service_time(value)
            if st is None:
                errors.append(f"calibration_overrides.{key} must be [mean_us, jitter]")
            else:
                changes[key] = st
    return replace(base, **changes)


def validate_scenario(raw: Mapping | Scenario) -> Scenario:
    """Parse and check a scenario document.

    Returns the validated :class:`Scenario`; raises :class:`ScenarioError`
    carrying every violation found. Passing an already validated scenario
    returns an equal scenario.
    """
    from patchflow.workload import PRESETS

    if isinstance(raw, Scenario):
        raw = raw.to_dict()
    if not isinstance(raw, Mapping):
        raise ScenarioError(["scenario must be a JSON object"])

    errors: list[str] = []
    errors += _unknown("scenario", raw, _TOP_REQUIRED + _TOP_OPTIONAL)
    for k in _TOP_REQUIRED:
        if k not in raw:
            errors.append(f"missing key '{k}'")

    policy = raw.get("policy")
    if "policy" in raw and policy not in POLICIES:
        errors.append(f"unknown policy {policy!r}")
    calibration = raw.get("calibration")
    if "calibration" in raw and calibration not in PRESETS:
        errors.append(f"unknown calibration {calibration!r}")
    seed = raw.get("seed", 0)
    if not (_is_int(seed) and 0 <= seed <= MAX_SEED):
        errors.append("seed must be an unsigned 64-bit integer")
    duration = raw.get("duration_us", 1)
    if not (_is_int(duration) and duration > 0):
        errors.append("duration_us must be a positive integer")
        duration = None
    probe = raw.get("probe_period_us", 1)
    if not (_is_int(probe) and probe > 0):
        errors.append("probe_period_us must be a positive integer")

    overrides = raw.get("calibration_overrides", {})
    if not isinstance(overrides, Mapping):
        errors.append("calibration_overrides must be an object")
        overrides = {}
    if calibration in PRESETS:
        prof = _apply_overrides(PRESETS[calibration], overrides, errors)
        errors += prof.problems()

    nodes = _parse_nodes(raw.get("nodes", []), PRESETS, errors)
    node_ids = {n.node_id for n in nodes}
    cameras = _parse_cameras(raw.get("cameras", []), duration, errors)
    camera_ids = {c.camera_id for c in cameras}
    clash = sorted(node_ids & camera_ids)
    for c in clash:
        errors.append(f"identifier {c} used by both a node and a camera")
    links = _parse_links(raw.get("links", []), node_ids, camera_ids, errors)

    edges = [n for n in nodes if n.role == "edge"]
    clouds = [n for n in nodes if n.role == "cloud"]
    if len(clouds) != 1:
        errors.append("exactly one cloud node required")
    roles = {n.node_id: n.role for n in nodes}
    for n in nodes:
        for nb in n.neighbors:
            if nb not in node_ids:
                errors.append(f"unresolved neighbor {nb}")
            elif roles[nb] != "edge":
                errors.append(f"neighbor {nb} of {n.node_id} is not an edge node")
            elif nb == n.node_id:
                errors.append(f"node {n.node_id} lists itself as a neighbor")
    pairs = {(l.src, l.dst) for l in links}
    if len(clouds) == 1:
        cid = clouds[0].node_id
        for e in edges:
            if (e.node_id, cid) not in pairs:
                errors.append(f"edge {e.node_id} has no link to cloud {cid}")
            if (cid, e.node_id) not in pairs:
                errors.append(f"edge {e.node_id} has no link from cloud {cid}")
    for c in cameras:
        targets = [l.dst for l in links if l.src == c.camera_id]
        edge_targets = [t for t in targets if roles.get(t) == "edge"]
        if len(edge_targets) == 0:
            errors.append(f"camera {c.camera_id} without edge link")
        elif len(edge_targets) > 1:
            errors.append(f"camera {c.camera_id} linked to more than one edge")
        for t in targets:
            if roles.get(t) == "cloud":
                errors.append(f"camera {c.camera_id} linked directly to cloud {t}")
    for l in links:
        if l.dst in camera_ids:
            errors.append(f"link {l.src}->{l.dst} targets a camera")

    transport = _parse_transport(raw.get("transport", {}), node_ids, errors)

    if errors:
        raise ScenarioError(errors)
    return Scenario(
        nodes=tuple(nodes),
        links=tuple(links),
        cameras=tuple(cameras),
        policy=policy,
        calibration=calibration,
        seed=seed,
        duration_us=duration,
        probe_period_us=probe,
        calibration_overrides=tuple(sorted(overrides.items())),
        transport=transport,
    )


def _parse_nodes(items: Any, presets: Mapping, errors: list[str]) -> list[NodeSpec]:
    if not isinstance(items, list):
        errors.append("nodes must be a list")
        return []
    out: list[NodeSpec] = []
    seen: set[str] = set()
    for i, n in enumerate(items):
        if not isinstance(n, Mapping):
            errors.append(f"nodes[{i}] must be an object")
            continue
        errors += _unknown(f"nodes[{i}]", n, _NODE_KEYS)
        nid = n.get("node_id")
        if not isinstance(nid, str) or not nid:
            errors.append(f"nodes[{i}] needs a string node_id")
            continue
        if nid in seen:
            errors.append(f"duplicate node {nid}")
        seen.add(nid)
        role = n.get("role")
        if role not in ROLES:
            errors.append(f"node {nid} has invalid role {role!r}")
        ext = n.get("extraction_profile")
        rec = n.get("recognition_profile")
        for key, val in (("extraction_profile", ext), ("recognition_profile", rec)):
            if val is not None and val not in presets:
                errors.append(f"node {nid} references unknown {key} {val!r}")
        thr = n.get("patch_soft_threshold", 0 if role == "cloud" else None)
        if role == "edge" and not (_is_int(thr) and thr >= 1):
            errors.append(f"edge {nid} needs patch_soft_threshold >= 1")
        elif not (_is_int(thr) and thr >= 0):
            errors.append(f"node {nid} patch_soft_threshold must be a non-negative integer")
            thr = 0
        cap = n.get("frame_queue_capacity")
        if cap is not None and not (_is_int(cap) and cap >= 1):
            errors.append(f"node {nid} frame_queue_capacity must be a positive integer or null")
        nbs = n.get("neighbors", [])
        if not (isinstance(nbs, list) and all(isinstance(x, str) for x in nbs)):
            errors.append(f"node {nid} neighbors must be a list of node ids")
            nbs = []
        if len(set(nbs)) != len(nbs):
            errors.append(f"node {nid} lists a neighbor twice")
        offload_all = n.get("offload_all", False)
        if not isinstance(offload_all, bool):
            errors.append(f"node {nid} offload_all must be a boolean")
        if role == "cloud":
            if ext is not None:
                errors.append(f"cloud {nid} must not have an extraction_profile")
            if nbs:
                errors.append(f"cloud {nid} must not have neighbors")
            if offload_all:
                errors.append(f"cloud {nid} cannot offload")
        out.append(NodeSpec(
            node_id=nid, role=role, extraction_profile=ext, recognition_profile=rec,
            patch_soft_threshold=thr if _is_int(thr) else 0,
            frame_queue_capacity=cap, neighbors=tuple(nbs), offload_all=bool(offload_all),
        ))
    return out


def _parse_links(items: Any, node_ids: set, camera_ids: set, errors: list[str]) -> list[LinkSpec]:
    if not isinstance(items, list):
        errors.append("links must be a list")
        return []
    out: list[LinkSpec] = []
    seen: set[tuple[str, str]] = set()
    for i, l in enumerate(items):
        if not isinstance(l, Mapping):
            errors.append(f"links[{i}] must be an object")
            continue
        errors += _unknown(f"links[{i}]", l, _LINK_KEYS)
        src, dst = l.get("src"), l.get("dst")
        if not isinstance(src, str) or not isinstance(dst, str):
            errors.append(f"links[{i}] needs string src and dst")
            continue
        if src not in node_ids and src not in camera_ids:
            errors.append(f"unresolved link endpoint {src}")
        if dst not in node_ids and dst not in camera_ids:
            errors.append(f"unresolved link endpoint {dst}")
        if (src, dst) in seen:
            errors.append(f"duplicate link {src}->{dst}")
        seen.add((src, dst))
        bw = l.get("bandwidth_bps")
        if not (_is_num(bw) and bw > 0):
            errors.append(f"non-positive bandwidth on link {src}->{dst}")
            bw = 1
        prop = l.get("propagation_delay_us", 0)
        if not (_is_num(prop) and prop >= 0):
            errors.append(f"negative propagation delay on link {src}->{dst}")
            prop = 0
        out.append(LinkSpec(src, dst, bw, prop))
    return out


def _parse_cameras(items: Any, duration: int | None, errors: list[str]) -> list[CameraProfile]:
    if not isinstance(items, list):
        errors.append("cameras must be a list")
        return []
    out: list[CameraProfile] = []
    seen: set[str] = set()
    for i, c in enumerate(items):
        if not isinstance(c, Mapping):
            errors.append(f"cameras[{i}] must be an object")
            continue
        errors += _unknown(f"cameras[{i}]", c, _CAMERA_KEYS)
        cid = c.get("camera_id")
        if not isinstance(cid, str) or not cid:
            errors.append(f"cameras[{i}] needs a string camera_id")
            continue
        if cid in seen:
            errors.append(f"duplicate camera {cid}")
        seen.add(cid)
        fps = parse_fps(c.get("fps"))
        if fps is None:
            errors.append(f"camera {cid} fps must be a positive number")
            fps = Fraction(1)
        size = c.get("frame_size_mean_bytes")
        if not (_is_int(size) and size >= 1):
            errors.append(f"camera {cid} frame_size_mean_bytes must be a positive integer")
            size = 1
        jitter = c.get("frame_size_jitter", 0.0)
        if not (_is_num(jitter) and 0 <= jitter < 1):
            errors.append(f"camera {cid} frame_size_jitter must be in [0, 1)")
            jitter = 0.0
        bursts = _parse_bursts(cid, c.get("bursts", []), duration, errors)
        out.append(CameraProfile(cid, fps, size, float(jitter), bursts))
    return out


def _parse_bursts(cid: str, items: Any, duration: int | None, errors: list[str]) -> tuple[Burst, ...]:
    if not isinstance(items, list):
        errors.append(f"camera {cid} bursts must be a list")
        return ()
    out = []
    for j, b in enumerate(items):
        if isinstance(b, (list, tuple)) and len(b) == 3:
            b = dict(zip(("start_us", "end_us", "rate_multiplier"), b))
        if not isinstance(b, Mapping):
            errors.append(f"camera {cid} bursts[{j}] must be an object")
            continue
        errors += _unknown(f"camera {cid} bursts[{j}]", b, _BURST_KEYS)
        s, e, m = b.get("start_us"), b.get("end_us"), b.get("rate_multiplier")
        if not (_is_int(s) and _is_int(e) and 0 <= s < e):
            errors.append(f"camera {cid} burst {j} needs integer 0 <= start_us < end_us")
            continue
        if duration is not None and e > duration:
            errors.append(f"camera {cid} burst {j} extends past duration_us")
        if not (_is_num(m) and m >= 1):
            errors.append(f"camera {cid} burst {j} rate_multiplier must be >= 1")
            continue
        out.append(Burst(s, e, m))
    out.sort(key=lambda b: b.start_us)
    for a, b in zip(out, out[1:]):
        if b.start_us < a.end_us:
            errors.append(f"camera {cid} bursts overlap")
    return tuple(out)


def _parse_transport(raw: Any, node_ids: set, errors: list[str]) -> tuple[tuple[str, Endpoint], ...]:
    if not isinstance(raw, Mapping):
        errors.append("transport must be an object")
        return ()
    out = []
    for nid, ep in raw.items():
        if nid not in node_ids:
            errors.append(f"transport entry for undeclared node {nid}")
            continue
        if not (isinstance(ep, Mapping) and set(ep) == {"host", "port"}
                and isinstance(ep["host"], str) and _is_int(ep["port"]) and 0 <= ep["port"] < 65536):
            errors.append(f"transport entry for {nid} needs host and port")
            continue
        out.append((nid, Endpoint(ep["host"], ep["port"])))
    return tuple(sorted(out))


def _num(v: float | int) -> float | int:
    return int(v) if float(v).is_integer() else float(v)


def _fps_out(f: Fraction) -> int | str:
    return f.numerator if f.denominator == 1 else f"{f.numerator}/{f.denominator}"


def service_time_to_list(st: ServiceTime) -> list:
    return [_num(st.mean_us), _num(st.jitter)]


def scenario_to_dict(s: Scenario) -> dict:
    """Canonical JSON-ready form; ``validate_scenario`` inverts it."""
    def node(n: NodeSpec) -> dict:
        d: dict[str, Any] = {
            "node_id": n.node_id,
            "role": n.role,
            "patch_soft_threshold": n.patch_soft_threshold,
            "frame_queue_capacity": n.frame_queue_capacity,
            "neighbors": list(n.neighbors),
        }
        if n.extraction_profile is not None:
            d["extraction_profile"] = n.extraction_profile
        if n.recognition_profile is not None:
            d["recognition_profile"] = n.recognition_profile
        if n.offload_all:
            d["offload_all"] = True
        return d

    out: dict[str, Any] = {
        "nodes": [node(n) for n in s.nodes],
        "links": [
            {"src": l.src, "dst": l.dst, "bandwidth_bps": _num(l.bandwidth_bps),
             "propagation_delay_us": _num(l.propagation_delay_us)}
            for l in s.links
        ],
        "cameras": [
            {"camera_id": c.camera_id, "fps": _fps_out(c.fps),
             "frame_size_mean_bytes": c.frame_size_mean_bytes,
             "frame_size_jitter": _num(c.frame_size_jitter),
             "bursts": [{"start_us": b.start_us, "end_us": b.end_us,
                         "rate_multiplier": _num(b.rate_multiplier)} for b in c.bursts]}
            for c in s.cameras
        ],
        "policy": s.policy,
        "calibration": s.calibration,
        "seed": s.seed,
        "duration_us": s.duration_us,
        "probe_period_us": s.probe_period_us,
    }
    if s.calibration_overrides:
        out["calibration_overrides"] = {k: v for k, v in s.calibration_overrides}
    if s.transport:
        out["transport"] = {nid: {"host": ep.host, "port": ep.port} for nid, ep in s.transport}
    return out
