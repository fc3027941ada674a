"""Frame/patch queues and the collaborative dispatch policy.

An edge runs two logical consumers over its patch queue. The local worker
takes the head whenever it is idle. The offloader wakes only while the
queue is longer than the soft threshold and pushes the head to the least
loaded available neighbor, or to the cloud when no neighbor can take it.

Everything in here is free of clocks and I/O; the simulator and the live
daemons both drive :func:`run_policy_step` from their own event sources.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterator

from patchflow.model import FrameDescriptor, NodeSpec, PatchDescriptor


class FrameQueue:
    """Bounded FIFO of frames awaiting extraction; drop-tail on overflow."""

    def __init__(self, capacity: int | None = None):
        self.capacity = capacity
        self.dropped = 0
        self._items: deque[FrameDescriptor] = deque()

    def offer(self, frame) -> bool:
        if self.capacity is not None and len(self._items) >= self.capacity:
            self.dropped += 1
            return False
        self._items.append(frame)
        return True

    def pop(self):
        return self._items.popleft()

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator:
        return iter(self._items)


class PatchQueue:
    """FIFO of patches awaiting recognition.

    ``n_max`` is a soft threshold: the queue may grow past it, which is
    exactly what wakes the offloader.
    """

    def __init__(self, n_max: int):
        self.n_max = n_max
        self._items: deque[PatchDescriptor] = deque()

    @property
    def occupancy(self) -> int:
        return len(self._items)

    @property
    def head(self) -> PatchDescriptor | None:
        return self._items[0] if self._items else None

    def append(self, p: PatchDescriptor) -> None:
        self._items.append(p)

    def pop(self) -> PatchDescriptor:
        return self._items.popleft()

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[PatchDescriptor]:
        return iter(self._items)


def append_patch(q: PatchQueue, p: PatchDescriptor) -> PatchQueue:
    if p is None:
        raise ValueError("null patches are never queued")
    q.append(p)
    return q


@dataclass(frozen=True)
class NeighborStatus:
    available: bool
    occupancy: int
    reported_at: int


@dataclass
class AvailabilityView:
    """What an edge believes about its neighbors' load."""

    neighbors: tuple[str, ...] = ()
    entries: dict[str, NeighborStatus] = field(default_factory=dict)

    def update(self, node_id: str, occupancy: int, n_max: int, reported_at: int) -> None:
        if node_id not in self.neighbors:
            return
        self.entries[node_id] = NeighborStatus(occupancy < n_max, occupancy, reported_at)

    def mark_unavailable(self, node_id: str, now: int) -> None:
        if node_id not in self.neighbors:
            return
        prev = self.entries.get(node_id)
        self.entries[node_id] = NeighborStatus(False, prev.occupancy if prev else 0, now)

    def effective(self, now: int, max_age: int | None) -> AvailabilityView:
        """Copy with stale entries forced unavailable."""
        if max_age is None:
            return AvailabilityView(self.neighbors, dict(self.entries))
        fresh = {
            nid: st if now - st.reported_at <= max_age else NeighborStatus(False, st.occupancy, st.reported_at)
            for nid, st in self.entries.items()
        }
        return AvailabilityView(self.neighbors, fresh)

    @classmethod
    def of(cls, statuses: dict[str, NeighborStatus]) -> AvailabilityView:
        return cls(tuple(statuses), dict(statuses))


@dataclass(frozen=True)
class Decision:
    kind: str  # "idle" | "local" | "neighbor" | "cloud"
    target: str | None = None

    def __str__(self) -> str:
        return f"{self.kind}({self.target})" if self.target else self.kind


IDLE = Decision("idle")
LOCAL = Decision("local")
CLOUD = Decision("cloud")


def offload_neighbor(node_id: str) -> Decision:
    return Decision("neighbor", node_id)


def select_neighbor(view: AvailabilityView) -> str | None:
    """Least-occupied available neighbor, smallest id on ties."""
    candidates = [(st.occupancy, nid) for nid, st in view.entries.items() if st.available]
    return min(candidates)[1] if candidates else None


def decide(occupancy: int, n_max: int, local_worker_idle: bool, view: AvailabilityView) -> Decision:
    if occupancy <= 0:
        return IDLE
    if occupancy <= n_max:
        return LOCAL
    if local_worker_idle:
        return LOCAL
    target = select_neighbor(view)
    if target is not None:
        return offload_neighbor(target)
    return CLOUD


@dataclass(frozen=True)
class Probe:
    src: str
    dst: str
    sent_at: int


def probe_round(node: NodeSpec, now: int) -> list[Probe]:
    return [Probe(node.node_id, nb, now) for nb in node.neighbors]


@dataclass(frozen=True)
class Action:
    """One dispatch out of a node's queues.

    kinds: ``local`` (own queue to own worker), ``remote`` (remote-work FIFO
    to own worker), ``neighbor``/``cloud`` (patch offload) and ``frame``
    (raw frame forwarded to the cloud).
    """

    kind: str
    patch: PatchDescriptor | None = None
    target: str | None = None
    frame: FrameDescriptor | None = None


@dataclass
class EdgeState:
    """Mutable per-edge scheduling state; owned by exactly one driver."""

    spec: NodeSpec
    policy: str
    patches: PatchQueue
    remote: deque = field(default_factory=deque)
    worker_busy: bool = False
    view: AvailabilityView = field(default_factory=AvailabilityView)
    max_view_age: int | None = None
    cloud_id: str = ""

    @classmethod
    def for_node(cls, spec: NodeSpec, policy: str, probe_period_us: int | None, cloud_id: str) -> EdgeState:
        return cls(
            spec=spec,
            policy=policy,
            patches=PatchQueue(spec.patch_soft_threshold),
            view=AvailabilityView(spec.neighbors),
            max_view_age=None if probe_period_us is None else 2 * probe_period_us,
            cloud_id=cloud_id,
        )

    @property
    def worker_enabled(self) -> bool:
        return not (self.policy == "collaborative" and self.spec.offload_all)

    @property
    def threshold(self) -> int:
        return self.patches.n_max if self.worker_enabled else 0

    @property
    def reported_occupancy(self) -> int:
        # waiting work only; the patch in service is never counted
        return len(self.patches) + len(self.remote)


def run_policy_step(state: EdgeState, now: int) -> list[Action]:
    """Take at most one dispatch decision and apply it to ``state``.

    Callers invoke this again after every state change (including the
    change this call made) until it returns no actions.
    """
    if state.policy == "edge-only":
        return baseline_edge_only(state)
    if state.policy != "collaborative":
        return []

    q = state.patches
    idle = state.worker_enabled and not state.worker_busy
    if idle and q.occupancy > 0:
        state.worker_busy = True
        return [Action("local", q.pop())]
    if q.occupancy > state.threshold:
        d = decide(q.occupancy, state.threshold, idle, state.view.effective(now, state.max_view_age))
        if d.kind == "neighbor":
            return [Action("neighbor", q.pop(), d.target)]
        if d.kind == "cloud":
            return [Action("cloud", q.pop(), state.cloud_id)]
    if idle and state.remote:
        state.worker_busy = True
        return [Action("remote", state.remote.popleft())]
    return []


def baseline_edge_only(state: EdgeState) -> list[Action]:
    if state.worker_busy:
        return []
    if state.patches.occupancy > 0:
        state.worker_busy = True
        return [Action("local", state.patches.pop())]
    if state.remote:
        state.worker_busy = True
        return [Action("remote", state.remote.popleft())]
    return []


def baseline_cloud_only(frame: FrameDescriptor, cloud_id: str) -> list[Action]:
    return [Action("frame", target=cloud_id, frame=frame)]
