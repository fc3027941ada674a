"""Edge and cloud daemons.

Each process embodies one NodeSpec. All queue and view mutations happen on
the process's single asyncio loop, so the two logical consumers never race.
Service times are realized as scaled sleeps (``time_scale`` 0.1 runs ten
times faster than simulated time).
"""

from __future__ import annotations

import asyncio
import contextlib
import json
import logging
import signal
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from patchflow.model import FrameDescriptor, PatchDescriptor, Scenario
from patchflow.netd.protocol import (
    PROTOCOL_VERSION,
    Message,
    MsgType,
    ProtocolError,
    encode,
    hello,
    read_message,
)
from patchflow.scheduler import EdgeState, FrameQueue, probe_round, run_policy_step
from patchflow.workload import FrameEvent, camera_events, make_patches, resolve_profile, rng_stream, service_time

log = logging.getLogger("patchflow.netd")

RECONNECT_DELAY = 0.2


@dataclass
class DaemonConfig:
    scenario: Scenario
    node_id: str
    frames: list[FrameEvent] | None = None
    time_scale: float = 1.0
    archive_path: Path | None = None
    idle_timeout: float = 30.0
    host: str | None = None
    port: int | None = None


def patch_to_body(p: PatchDescriptor) -> dict:
    return {
        "patch_id": p.patch_id,
        "camera_id": p.camera_id,
        "frame_id": p.frame_id,
        "index": p.index,
        "size_bytes": p.size_bytes,
        "extracted_at": p.extracted_at,
        "capture_time": p.capture_time,
        "origin_node": p.origin_node,
        "hops": list(p.hops),
    }


def patch_from_body(b: dict) -> PatchDescriptor:
    try:
        return PatchDescriptor(
            patch_id=b["patch_id"],
            camera_id=str(b["camera_id"]),
            frame_id=int(b["frame_id"]),
            size_bytes=int(b["size_bytes"]),
            extracted_at=int(b["extracted_at"]),
            origin_node=str(b["origin_node"]),
            hops=tuple(b["hops"]),
            capture_time=int(b["capture_time"]),
            index=int(b["index"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"bad PATCH body: {exc}") from None


def frame_to_body(ev: FrameEvent, origin: str) -> dict:
    body = ev.to_json()
    body["origin_node"] = origin
    return body


class PeerLink:
    """Outgoing connection to one peer with an ordered outbox.

    Messages queued while the peer is unreachable are sent after reconnecting,
    in order.
    """

    def __init__(self, daemon: NodeDaemon, peer_id: str):
        self.daemon = daemon
        self.peer_id = peer_id
        self.outbox: asyncio.Queue[Message] = asyncio.Queue()
        self.connected = False
        self._task: asyncio.Task | None = None

    def start(self) -> None:
        self._task = asyncio.create_task(self._run(), name=f"link-{self.peer_id}")

    async def close(self) -> None:
        if self._task:
            self._task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await self._task

    def send(self, msg: Message) -> None:
        self.outbox.put_nowait(msg)

    async def _run(self) -> None:
        ep = self.daemon.scenario.endpoint(self.peer_id)
        if ep is None:
            log.warning("%s: no transport entry for peer %s", self.daemon.node_id, self.peer_id)
            return
        while True:
            writer = None
            reader_task = None
            try:
                reader, writer = await asyncio.open_connection(ep.host, ep.port)
                await self.daemon.write(writer, self.peer_id, hello(self.daemon.node_id))
                msg, n = await asyncio.wait_for(read_message(reader), self.daemon.cfg.idle_timeout)
                self.daemon.received[self.peer_id] += n
                if msg.type is not MsgType.HELLO or msg.body["version"] != PROTOCOL_VERSION:
                    raise ProtocolError(f"bad handshake from {self.peer_id}")
                self.connected = True
                reader_task = asyncio.create_task(self._read_replies(reader, writer))
                while True:
                    get = asyncio.create_task(self.outbox.get())
                    done, _ = await asyncio.wait({get, reader_task}, return_when=asyncio.FIRST_COMPLETED)
                    if get not in done:
                        get.cancel()
                        raise ConnectionError(f"{self.peer_id} closed the connection")
                    await self.daemon.write(writer, self.peer_id, get.result())
            except (OSError, ProtocolError, asyncio.IncompleteReadError, asyncio.TimeoutError) as exc:
                log.debug("%s -> %s: %s", self.daemon.node_id, self.peer_id, exc)
            finally:
                self.connected = False
                if reader_task:
                    reader_task.cancel()
                if writer:
                    writer.close()
            await asyncio.sleep(RECONNECT_DELAY)

    async def _read_replies(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        while True:
            msg, n = await read_message(reader)
            self.daemon.received[self.peer_id] += n
            await self.daemon.handle(msg, self.peer_id, writer)


class NodeDaemon:
    def __init__(self, cfg: DaemonConfig):
        sc = cfg.scenario
        self.cfg = cfg
        self.scenario = sc
        self.node_id = cfg.node_id
        self.spec = sc.node(cfg.node_id)
        self.role = self.spec.role
        self.policy = sc.policy
        self.cloud_id = sc.cloud.node_id
        self.sent: Counter[str] = Counter()
        self.received: Counter[str] = Counter()
        self.counters: Counter[str] = Counter()
        probe = sc.probe_period_us if sc.policy == "collaborative" else None
        self.state = EdgeState.for_node(self.spec, sc.policy, probe, self.cloud_id)
        self.frames = FrameQueue(self.spec.frame_queue_capacity)
        self.ext_profile = resolve_profile(sc, self.spec.extraction_profile)
        self.rec_profile = resolve_profile(sc, self.spec.recognition_profile)
        self.ext_rng = rng_stream(sc.seed, cfg.node_id, "extraction")
        self.rec_rng = rng_stream(sc.seed, cfg.node_id, "recognition")
        self.links: dict[str, PeerLink] = {}
        self._frame_ready = asyncio.Event()
        self._tasks: list[asyncio.Task] = []
        self._server: asyncio.base_events.Server | None = None
        self._t0 = 0.0
        self._archive = None
        self._arrivals = 0
        self._arrival_seq: dict[str, int] = {}
        self.replay_done = False

    # ------------------------------------------------------------- plumbing

    def now_us(self) -> int:
        loop = asyncio.get_running_loop()
        return int((loop.time() - self._t0) / self.cfg.time_scale * 1e6)

    async def sleep_us(self, us: int) -> None:
        await asyncio.sleep(us / 1e6 * self.cfg.time_scale)

    async def write(self, writer: asyncio.StreamWriter, peer: str, msg: Message) -> None:
        data = encode(msg)
        writer.write(data)
        self.sent[peer] += len(data)
        await writer.drain()

    def link(self, peer_id: str) -> PeerLink:
        if peer_id not in self.links:
            pl = PeerLink(self, peer_id)
            self.links[peer_id] = pl
            pl.start()
        return self.links[peer_id]

    async def start(self) -> None:
        loop = asyncio.get_running_loop()
        self._t0 = loop.time()
        ep = self.scenario.endpoint(self.node_id)
        host = self.cfg.host or (ep.host if ep else "127.0.0.1")
        port = self.cfg.port if self.cfg.port is not None else (ep.port if ep else 0)
        self._server = await asyncio.start_server(self._serve_conn, host, port)
        if self.role == "cloud":
            path = self.cfg.archive_path or Path(f"{self.node_id}-archive.jsonl")
            self._archive = open(path, "a", encoding="utf-8")
        else:
            self.link(self.cloud_id)
            for nb in self.spec.neighbors:
                self.link(nb)
        self._tasks.append(asyncio.create_task(self._extraction_worker()))
        if self.role == "edge":
            self._tasks.append(asyncio.create_task(self._edge_main()))
        log.info("%s (%s) listening on %s:%s", self.node_id, self.role, host, self.port)

    @property
    def port(self) -> int:
        return self._server.sockets[0].getsockname()[1] if self._server else 0

    async def stop(self) -> None:
        for t in self._tasks:
            t.cancel()
        for t in self._tasks:
            with contextlib.suppress(asyncio.CancelledError):
                await t
        for pl in self.links.values():
            await pl.close()
        if self._server:
            self._server.close()
            await self._server.wait_closed()
        if self._archive:
            self._archive.close()

    async def serve_forever(self) -> None:
        await self.start()
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            with contextlib.suppress(NotImplementedError, RuntimeError):
                loop.add_signal_handler(sig, stop.set)
        try:
            await stop.wait()
        finally:
            await self.stop()

    async def _serve_conn(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = "?"
        try:
            msg, n = await asyncio.wait_for(read_message(reader), self.cfg.idle_timeout)
            if msg.type is not MsgType.HELLO:
                raise ProtocolError("first message must be HELLO")
            if msg.body["version"] != PROTOCOL_VERSION:
                raise ProtocolError(f"protocol version {msg.body['version']} unsupported")
            peer = msg.body["node_id"]
            self.received[peer] += n
            await self.write(writer, peer, hello(self.node_id))
            while True:
                msg, n = await asyncio.wait_for(read_message(reader), self.cfg.idle_timeout)
                self.received[peer] += n
                await self.handle(msg, peer, writer)
        except asyncio.IncompleteReadError:
            pass
        except (ProtocolError, asyncio.TimeoutError, OSError) as exc:
            self.counters["connections_rejected"] += 1
            log.info("%s: closing connection from %s: %s", self.node_id, peer, exc)
        finally:
            writer.close()
            with contextlib.suppress(Exception):
                await writer.wait_closed()

    # ------------------------------------------------------------- messages

    async def handle(self, msg: Message, peer: str, writer: asyncio.StreamWriter) -> None:
        t = msg.type
        if t is MsgType.PROBE:
            st = self.state
            await self.write(writer, peer, Message(MsgType.PROBE_ACK, {
                "occupancy": st.reported_occupancy, "n_max": st.threshold, "node_id": self.node_id,
            }))
        elif t is MsgType.PROBE_ACK:
            self.state.view.update(peer, msg.body["occupancy"], msg.body["n_max"], self.now_us())
            self.policy_step()
        elif t is MsgType.PATCH:
            p = patch_from_body(msg.body)
            self.counters["patches_received"] += 1
            self._arrival_seq[p.patch_id] = self._arrivals
            self._arrivals += 1
            if self.role == "cloud":
                self.state.patches.append(p)
            else:
                self.state.remote.append(p)
            self.policy_step()
        elif t is MsgType.FRAME:
            if self.role != "cloud" or self.policy != "cloud-only":
                raise ProtocolError("FRAME is only accepted by the cloud under cloud-only")
            self.counters["frames_received"] += 1
            ev = FrameEvent.from_json(msg.body)
            self._offer_frame(ev)
        elif t is MsgType.RESULT:
            if self.role != "cloud":
                raise ProtocolError("RESULT sent to an edge")
            self.counters["results_received"] += 1
            self._archive_line(dict(msg.body, reported_by=peer))
        elif t is MsgType.STATS:
            if not msg.body:
                await self.write(writer, peer, Message(MsgType.STATS, self.stats()))
        elif t is MsgType.HELLO:
            raise ProtocolError("duplicate HELLO")

    def stats(self) -> dict:
        return {
            "node_id": self.node_id,
            "role": self.role,
            "occupancy": self.state.reported_occupancy,
            "n_max": self.state.threshold,
            "replay_done": self.replay_done,
            "counters": dict(sorted(self.counters.items())),
            "sent": dict(sorted(self.sent.items())),
            "received": dict(sorted(self.received.items())),
        }

    def _archive_line(self, row: dict) -> None:
        self.counters["archived"] += 1
        self._archive.write(json.dumps(row, sort_keys=True) + "\n")
        self._archive.flush()

    # --------------------------------------------------------------- stages

    def _offer_frame(self, ev: FrameEvent) -> None:
        if self.frames.offer(ev):
            self._frame_ready.set()
        else:
            self.counters["frames_dropped"] += 1

    async def _edge_main(self) -> None:
        # initial availability round before the first frame
        if self.policy == "collaborative" and self.spec.neighbors:
            self._probe_round()
            await asyncio.sleep(min(1.0, 2 * self.scenario.probe_period_us / 1e6 * self.cfg.time_scale))
            self._tasks.append(asyncio.create_task(self._probe_loop()))
        own = [c for c in self.scenario.cameras if self.scenario.edge_of(c.camera_id) == self.node_id]
        own_ids = {c.camera_id for c in own}
        if self.cfg.frames is not None:
            events = [e for e in self.cfg.frames if e.frame.camera_id in own_ids]
        else:
            events = sorted((e for c in own for e in camera_events(self.scenario, c)),
                            key=lambda e: (e.frame.capture_time, e.frame.camera_id, e.frame.frame_id))
        base = self.now_us()
        for ev in events:
            delay = base + ev.frame.capture_time - self.now_us()
            if delay > 0:
                await self.sleep_us(delay)
            self.counters["frames_generated"] += 1
            if self.policy == "cloud-only":
                self.counters["frames_forwarded"] += 1
                self.link(self.cloud_id).send(Message(MsgType.FRAME, frame_to_body(ev, self.node_id)))
            else:
                self._offer_frame(ev)
        self.replay_done = True

    def _probe_round(self) -> None:
        now = self.now_us()
        for probe in probe_round(self.spec, now):
            pl = self.links.get(probe.dst)
            if pl is None or not pl.connected:
                self.state.view.mark_unavailable(probe.dst, now)
            else:
                pl.send(Message(MsgType.PROBE, {"sent_at": now}))

    async def _probe_loop(self) -> None:
        while True:
            await self.sleep_us(self.scenario.probe_period_us)
            self._probe_round()
            self.policy_step()

    async def _extraction_worker(self) -> None:
        while True:
            while not len(self.frames):
                self._frame_ready.clear()
                await self._frame_ready.wait()
            ev = self.frames.pop()
            d = service_time("extraction", self.role, self.ext_profile, self.ext_rng, self.policy)
            await self.sleep_us(d)
            frame: FrameDescriptor = ev.frame
            patches = make_patches(frame, list(ev.patch_sizes), self.node_id, self.now_us())
            self.counters["frames_extracted"] += 1
            self.counters["patches_created"] += len(patches)
            for p in patches:
                self.state.patches.append(p)
            self.policy_step()

    def policy_step(self) -> None:
        """Drain every dispatch the policy allows right now."""
        if self.role == "cloud":
            st = self.state
            if not st.worker_busy and st.patches.occupancy:
                st.worker_busy = True
                self._tasks.append(asyncio.create_task(self._recognize(st.patches.pop())))
            return
        while True:
            actions = run_policy_step(self.state, self.now_us())
            if not actions:
                return
            for a in actions:
                if a.kind in ("local", "remote"):
                    self._tasks.append(asyncio.create_task(self._recognize(a.patch)))
                else:
                    self.counters["offloaded_" + a.kind] += 1
                    moved = a.patch.visit(a.target)
                    self.link(a.target).send(Message(MsgType.PATCH, patch_to_body(moved)))

    async def _recognize(self, p: PatchDescriptor) -> None:
        d = service_time("recognition", self.role, self.rec_profile, self.rec_rng, self.policy)
        await self.sleep_us(d)
        self.state.worker_busy = False
        self.counters["recognized"] += 1
        row = {
            "patch_id": p.patch_id,
            "plate_text": p.plate_text,
            "processed_by": self.node_id,
            "role": self.role,
            "camera_id": p.camera_id,
            "frame_id": p.frame_id,
            "hops": list(p.hops),
            "completed_at": self.now_us(),
        }
        if p.patch_id in self._arrival_seq:
            row["arrival_seq"] = self._arrival_seq.pop(p.patch_id)
        if self.role == "cloud":
            self._archive_line(row)
        else:
            self.link(self.cloud_id).send(Message(MsgType.RESULT, row))
        self._tasks = [t for t in self._tasks if not t.done()]
        self.policy_step()


async def _run(cfg: DaemonConfig) -> None:
    await NodeDaemon(cfg).serve_forever()


def serve_edge(cfg: DaemonConfig) -> None:
    if cfg.scenario.node(cfg.node_id).role != "edge":
        raise ValueError(f"{cfg.node_id} is not an edge node")
    asyncio.run(_run(cfg))


def serve_cloud(cfg: DaemonConfig) -> None:
    if cfg.scenario.node(cfg.node_id).role != "cloud":
        raise ValueError(f"{cfg.node_id} is not the cloud node")
    asyncio.run(_run(cfg))
