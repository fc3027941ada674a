"""Deterministic discrete-event kernel.

Events are ordered by ``(fire_time, sequence)`` where ``sequence`` comes from
one global counter, so runs are reproducible bit for bit. Each node has an
extraction worker and a recognition worker; links are serialized pipes (a
transmission waits for the previous one on the same ordered pair to finish).

Camera links are accounted for traffic but impose no delay: a frame's
``capture_time`` is the instant it is handed to the edge's frame queue.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Any, Iterator

from patchflow.metrics import MetricsCollector, MetricsReport
from patchflow.model import (
    HEADER_BYTES,
    PROBE_BYTES,
    RESULT_BYTES,
    LatencyBreakdown,
    LinkSpec,
    PatchDescriptor,
    RecognitionRecord,
    Scenario,
    transfer_time,
    transmission_time,
)
from patchflow.scheduler import EdgeState, FrameQueue, probe_round, run_policy_step
from patchflow.workload import (
    FrameEvent,
    camera_events,
    make_patches,
    resolve_profile,
    rng_stream,
    service_time,
)

EVENT_KINDS = (
    "FrameArrival",
    "ExtractionDone",
    "PolicyStep",
    "TransferDone",
    "RecognitionDone",
    "ProbeSend",
    "ProbeReply",
    "MetricsTick",
)


class SimulationError(RuntimeError):
    """Internal inconsistency in the kernel; never a user error."""


@dataclass(order=True)
class Event:
    fire_time: int
    sequence: int
    kind: str = field(compare=False)
    payload: Any = field(compare=False, default=None)


@dataclass
class _LinkState:
    spec: LinkSpec
    busy_until: int = 0
    in_flight: int = 0

    def send(self, now: int, nbytes: int) -> int:
        start = max(now, self.busy_until)
        self.busy_until = start + transmission_time(self.spec, nbytes)
        self.in_flight += 1
        return start + transfer_time(self.spec, nbytes)


@dataclass
class _Track:
    """Timestamps needed to split a patch's latency into its components."""

    capture: int
    frame_ready: int
    ext_start: int
    ext_end: int
    popped: int = -1
    arrived: int = -1
    rec_start: int = -1

    def breakdown(self, rec_end: int) -> LatencyBreakdown:
        popped = self.rec_start if self.popped < 0 else self.popped
        arrived = popped if self.arrived < 0 else self.arrived
        return LatencyBreakdown(
            frame_queue_wait=self.ext_start - self.frame_ready,
            extraction=self.ext_end - self.ext_start,
            patch_queue_wait=(popped - self.ext_end) + (self.rec_start - arrived),
            transfer=(self.frame_ready - self.capture) + (arrived - popped),
            recognition=rec_end - self.rec_start,
        )


class _Node:
    def __init__(self, sim: Simulator, node_id: str):
        sc = sim.scenario
        spec = sc.node(node_id)
        self.spec = spec
        self.node_id = node_id
        self.role = spec.role
        self.frames = FrameQueue(spec.frame_queue_capacity)
        self.extracting = False
        self.ext_started = 0
        self.rec_started = 0
        self.ext_profile = resolve_profile(sc, spec.extraction_profile)
        self.rec_profile = resolve_profile(sc, spec.recognition_profile)
        self.ext_rng = rng_stream(sc.seed, node_id, "extraction")
        self.rec_rng = rng_stream(sc.seed, node_id, "recognition")
        probe = sc.probe_period_us if sc.policy == "collaborative" else None
        self.state = EdgeState.for_node(spec, sc.policy, probe, sc.cloud.node_id)
        self.policy_pending = False


class Simulator:
    """One simulation run over a validated scenario.

    ``frames`` replaces the generated workload with a recorded frame-event
    list (used by the live parity harness).
    """

    def __init__(self, scenario: Scenario, frames: list[FrameEvent] | None = None,
                 trace: bool = False):
        self.scenario = scenario
        self.policy = scenario.policy
        self.clock = 0
        self._heap: list[Event] = []
        self._seq = 0
        self.trace: list[str] | None = [] if trace else None
        self.cloud_id = scenario.cloud.node_id
        self.nodes = {n.node_id: _Node(self, n.node_id) for n in scenario.nodes}
        self.links = {(l.src, l.dst): _LinkState(l) for l in scenario.links}
        self.metrics = MetricsCollector(scenario.duration_us, scenario.policy)
        self.records: list[RecognitionRecord] = []
        self.breakdowns: dict[str, LatencyBreakdown] = {}
        self._tracks: dict[str, _Track] = {}
        self._frame_times: dict[tuple[str, int], tuple[int, int, int]] = {}
        self._outstanding = 0
        # ordered logs for conservation / FIFO checks
        self.dispatch_log: list[tuple[str, str, str, str]] = []
        self.arrival_log: list[tuple[str, str, str]] = []
        self.recognition_log: list[tuple[str, str, str]] = []
        self.counts = dict.fromkeys(
            ("frames_generated", "frames_extracted", "frames_dropped", "patches_created",
             "recognized_local", "recognized_remote", "recognized_cloud",
             "offloaded_neighbor", "offloaded_cloud", "frames_forwarded", "results_reported"),
            0,
        )
        self._cameras: dict[str, Iterator[FrameEvent]] = {}
        if frames is None:
            for cam in scenario.cameras:
                self._cameras[cam.camera_id] = camera_events(scenario, cam)
        else:
            per_cam: dict[str, list[FrameEvent]] = {}
            for ev in frames:
                per_cam.setdefault(ev.frame.camera_id, []).append(ev)
            for cam in scenario.cameras:
                self._cameras[cam.camera_id] = iter(per_cam.get(cam.camera_id, []))
        self._started = False

    # ------------------------------------------------------------------ kernel

    def schedule(self, fire_time: int, kind: str, payload: Any = None) -> Event:
        if fire_time < self.clock:
            raise SimulationError(f"{kind} scheduled at {fire_time} before clock {self.clock}")
        ev = Event(fire_time, self._seq, kind, payload)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        for cam_id, it in self._cameras.items():
            self._schedule_next_frame(cam_id, it)
        if self.policy == "collaborative":
            for n in self.scenario.edges:
                if n.neighbors:
                    self.schedule(0, "ProbeSend", n.node_id)
        if self._cameras:
            self.schedule(0, "MetricsTick")

    def run(self, until: int | None = None) -> Simulator:
        """Process events until the heap is empty or the clock passes ``until``."""
        self.start()
        heap = self._heap
        while heap:
            if until is not None and heap[0].fire_time > until:
                self.clock = max(self.clock, until)
                break
            ev = heapq.heappop(heap)
            if ev.fire_time < self.clock:
                raise SimulationError("event heap returned an event from the past")
            self.clock = ev.fire_time
            if self.trace is not None:
                self.trace.append(f"{ev.fire_time}\t{ev.sequence}\t{ev.kind}\t{_summary(ev.payload)}")
            getattr(self, "_on_" + ev.kind)(ev.payload)
        return self

    @property
    def pending_events(self) -> int:
        return len(self._heap)

    def _schedule_next_frame(self, cam_id: str, it: Iterator[FrameEvent]) -> None:
        ev = next(it, None)
        if ev is not None:
            self.schedule(max(ev.frame.capture_time, self.clock), "FrameArrival", ev)

    def _busy_with_work(self) -> bool:
        return self.clock < self.scenario.duration_us or self._outstanding > 0

    def _send(self, src: str, dst: str, nbytes: int, payload_bytes: int, what: tuple) -> bool:
        link = self.links.get((src, dst))
        if link is None:
            return False
        arrival = link.send(self.clock, nbytes)
        self.schedule(arrival, "TransferDone", (src, dst, nbytes, payload_bytes) + what)
        return True

    def _policy_step_soon(self, node: _Node) -> None:
        if not node.policy_pending:
            node.policy_pending = True
            self.schedule(self.clock, "PolicyStep", node.node_id)

    # ---------------------------------------------------------------- handlers

    def _on_FrameArrival(self, fev: FrameEvent) -> None:
        frame = fev.frame
        self.counts["frames_generated"] += 1
        edge_id = self.scenario.edge_of(frame.camera_id)
        self.metrics.add_traffic(frame.camera_id, edge_id, frame.size_bytes, frame.size_bytes)
        self._schedule_next_frame(frame.camera_id, self._cameras[frame.camera_id])
        if self.policy == "cloud-only":
            self._outstanding += 1
            self.counts["frames_forwarded"] += 1
            nbytes = frame.size_bytes + HEADER_BYTES
            if not self._send(edge_id, self.cloud_id, nbytes, frame.size_bytes, ("frame", fev)):
                raise SimulationError(f"no uplink from {edge_id}")
            return
        self._enqueue_frame(self.nodes[edge_id], fev, ready=frame.capture_time)

    def _enqueue_frame(self, node: _Node, fev: FrameEvent, ready: int) -> None:
        if node.frames.offer((fev, ready)):
            self._outstanding += 1
            self._try_extract(node)
        else:
            self.counts["frames_dropped"] += 1
            self.metrics.drops += 1

    def _try_extract(self, node: _Node) -> None:
        if node.extracting or not len(node.frames):
            return
        fev, ready = node.frames.pop()
        d = service_time("extraction", node.role, node.ext_profile, node.ext_rng, self.policy)
        node.extracting = True
        node.ext_started = self.clock
        self._frame_times[(fev.frame.camera_id, fev.frame.frame_id)] = (ready, self.clock, 0)
        self.schedule(self.clock + d, "ExtractionDone", (node.node_id, fev))

    def _on_ExtractionDone(self, payload) -> None:
        node_id, fev = payload
        node = self.nodes[node_id]
        frame = fev.frame
        node.extracting = False
        self.metrics.add_busy(node_id, "extraction", node.ext_started, self.clock)
        self.counts["frames_extracted"] += 1
        ready, ext_start, _ = self._frame_times.pop((frame.camera_id, frame.frame_id))
        patches = make_patches(frame, list(fev.patch_sizes), node_id, self.clock)
        self.metrics.expect_frame(frame.camera_id, frame.frame_id, frame.capture_time, len(patches))
        if not patches:
            self._outstanding -= 1
        for p in patches:
            self._tracks[p.patch_id] = _Track(frame.capture_time, ready, ext_start, self.clock)
            node.state.patches.append(p)
        self.counts["patches_created"] += len(patches)
        if patches:
            self._policy_step_soon(node)
        self._try_extract(node)

    def _on_PolicyStep(self, node_id: str) -> None:
        node = self.nodes[node_id]
        node.policy_pending = False
        if node.role == "cloud":
            self._cloud_step(node)
            return
        actions = run_policy_step(node.state, self.clock)
        for a in actions:
            p = a.patch
            self.dispatch_log.append((node_id, p.patch_id, a.kind, a.target or node_id))
            if a.kind in ("local", "remote"):
                self._start_recognition(node, p, a.kind)
            else:
                track = self._tracks[p.patch_id]
                track.popped = self.clock
                self.counts["offloaded_" + a.kind] += 1
                moved = p.visit(a.target)
                if not self._send(node_id, a.target, p.size_bytes + HEADER_BYTES, p.size_bytes, ("patch", moved)):
                    raise SimulationError(f"dispatch to {a.target} without a link from {node_id}")
        if actions:
            self._policy_step_soon(node)

    def _cloud_step(self, node: _Node) -> None:
        st = node.state
        if not st.worker_busy and st.patches.occupancy > 0:
            p = st.patches.pop()
            st.worker_busy = True
            self.dispatch_log.append((node.node_id, p.patch_id, "local", node.node_id))
            self._start_recognition(node, p, "cloud")

    def _start_recognition(self, node: _Node, p: PatchDescriptor, source: str) -> None:
        node.state.worker_busy = True
        node.rec_started = self.clock
        self._tracks[p.patch_id].rec_start = self.clock
        self.recognition_log.append((node.node_id, p.patch_id, source))
        d = service_time("recognition", node.role, node.rec_profile, node.rec_rng, self.policy)
        self.schedule(self.clock + d, "RecognitionDone", (node.node_id, p))

    def _on_RecognitionDone(self, payload) -> None:
        node_id, p = payload
        node = self.nodes[node_id]
        node.state.worker_busy = False
        self.metrics.add_busy(node_id, "recognition", node.rec_started, self.clock)
        track = self._tracks.pop(p.patch_id)
        bd = track.breakdown(self.clock)
        rec = RecognitionRecord(
            patch_id=p.patch_id,
            plate_text=p.plate_text,
            processed_by=node_id,
            completed_at=self.clock,
            end_to_end_latency=self.clock - p.capture_time,
            camera_id=p.camera_id,
            frame_id=p.frame_id,
            extracted_at=p.extracted_at,
            hops=p.hops,
        )
        self.records.append(rec)
        self.breakdowns[p.patch_id] = bd
        if self.metrics.record_completion(rec, bd) is not None:
            self._outstanding -= 1
        if node.role == "cloud":
            self.counts["recognized_cloud"] += 1
        else:
            self.counts["recognized_remote" if len(p.hops) > 1 else "recognized_local"] += 1
            if self._send(node_id, self.cloud_id, RESULT_BYTES, 0, ("result", p.patch_id)):
                self.counts["results_reported"] += 1
        self._policy_step_soon(node)

    def _on_TransferDone(self, payload) -> None:
        src, dst, nbytes, payload_bytes, what, body = payload
        self.links[(src, dst)].in_flight -= 1
        self.metrics.add_traffic(src, dst, nbytes, payload_bytes)
        target = self.nodes[dst]
        if what == "patch":
            self._tracks[body.patch_id].arrived = self.clock
            self.arrival_log.append((dst, body.patch_id, src))
            if target.role == "cloud":
                target.state.patches.append(body)
            else:
                target.state.remote.append(body)
            self._policy_step_soon(target)
        elif what == "frame":
            self._outstanding -= 1  # re-counted by the cloud frame queue
            self._enqueue_frame(target, body, ready=self.clock)
        elif what == "probe":
            self.schedule(self.clock, "ProbeReply", (dst, src))
        elif what == "ack":
            occ, n_max, reported_at = body
            self.nodes[dst].state.view.update(src, occ, n_max, reported_at)
            self._policy_step_soon(self.nodes[dst])
        elif what != "result":
            raise SimulationError(f"unknown transfer {what}")

    def _on_ProbeSend(self, node_id: str) -> None:
        node = self.nodes[node_id]
        for probe in probe_round(node.spec, self.clock):
            if not self._send(probe.src, probe.dst, PROBE_BYTES, 0, ("probe", probe.sent_at)):
                node.state.view.mark_unavailable(probe.dst, self.clock)
        if self._busy_with_work():
            self.schedule(self.clock + self.scenario.probe_period_us, "ProbeSend", node_id)

    def _on_ProbeReply(self, payload) -> None:
        """A probe reached ``responder``; answer with its current load."""
        responder, prober = payload
        st = self.nodes[responder].state
        ack = (st.reported_occupancy, st.threshold, self.clock)
        self._send(responder, prober, PROBE_BYTES, 0, ("ack", ack))

    def _on_MetricsTick(self, _payload) -> None:
        for nid, node in self.nodes.items():
            self.metrics.sample_occupancy(nid, node.state.patches.occupancy + len(node.state.remote))
        nxt = self.clock + self.scenario.probe_period_us
        if nxt < self.scenario.duration_us:
            self.schedule(nxt, "MetricsTick")

    # ----------------------------------------------------------------- results

    def snapshot(self) -> dict:
        return {
            "clock": self.clock,
            "pending_events": len(self._heap),
            "nodes": {
                nid: {
                    "frame_queue": len(n.frames),
                    "patch_queue": n.state.patches.occupancy,
                    "remote_queue": len(n.state.remote),
                    "extracting": n.extracting,
                    "recognizing": n.state.worker_busy,
                    "dropped": n.frames.dropped,
                }
                for nid, n in sorted(self.nodes.items())
            },
            "in_flight": {f"{s}->{d}": l.in_flight for (s, d), l in sorted(self.links.items())},
            "counts": dict(self.counts),
            "records": len(self.records),
        }

    def snapshot_json(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True)

    @property
    def patches_queued(self) -> int:
        return sum(n.state.patches.occupancy + len(n.state.remote) for n in self.nodes.values())

    @property
    def patches_in_flight(self) -> int:
        in_service = sum(1 for n in self.nodes.values() if n.state.worker_busy)
        on_links = sum(
            1 for ev in self._heap if ev.kind == "TransferDone" and ev.payload[4] == "patch"
        )
        return in_service + on_links

    @property
    def frames_queued(self) -> int:
        waiting = sum(len(n.frames) for n in self.nodes.values())
        extracting = sum(1 for n in self.nodes.values() if n.extracting)
        return waiting + extracting

    def report(self) -> MetricsReport:
        workers = {}
        for nid, n in self.nodes.items():
            if n.role == "edge":
                workers[nid] = ("extraction", "recognition")
            else:
                workers[nid] = ("extraction", "recognition") if self.policy == "cloud-only" else ("recognition",)
        self.metrics.counters.update(self.counts)
        return self.metrics.report(workers)

    def trace_text(self) -> str:
        return "".join(line + "\n" for line in self.trace or [])


def _summary(payload: Any) -> str:
    if payload is None:
        return "-"
    if isinstance(payload, str):
        return payload
    if isinstance(payload, FrameEvent):
        f = payload.frame
        return f"{f.camera_id}/{f.frame_id} {f.size_bytes}B k={payload.plates}"
    if isinstance(payload, tuple):
        if len(payload) == 2 and isinstance(payload[1], FrameEvent):
            return f"{payload[0]} {_summary(payload[1])}"
        if len(payload) == 2 and isinstance(payload[1], PatchDescriptor):
            return f"{payload[0]} {payload[1].patch_id}"
        if len(payload) == 6:
            src, dst, nbytes, _, what, body = payload
            if isinstance(body, PatchDescriptor):
                body = body.patch_id
            elif isinstance(body, FrameEvent):
                body = f"{body.frame.camera_id}/{body.frame.frame_id}"
            return f"{src}->{dst} {what} {nbytes}B {body}"
        return " ".join(str(x) for x in payload)
    return str(payload)


def simulate(scenario: Scenario, frames: list[FrameEvent] | None = None,
             trace: bool = False, until: int | None = None) -> Simulator:
    """Run ``scenario`` to completion (drain included unless ``until`` is set)."""
    return Simulator(scenario, frames=frames, trace=trace).run(until)
