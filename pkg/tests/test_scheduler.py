from __future__ import annotations

import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from patchflow.model import FrameDescriptor, NodeSpec, PatchDescriptor
from patchflow.scheduler import (
    CLOUD,
    IDLE,
    LOCAL,
    AvailabilityView,
    EdgeState,
    FrameQueue,
    NeighborStatus,
    PatchQueue,
    append_patch,
    baseline_cloud_only,
    baseline_edge_only,
    decide,
    offload_neighbor,
    probe_round,
    run_policy_step,
    select_neighbor,
)


def patch(i: int) -> PatchDescriptor:
    return PatchDescriptor(f"cam1/{i}/0", "cam1", i, 100, 0, "e1", ("e1",))


def view(**entries) -> AvailabilityView:
    return AvailabilityView.of({k: NeighborStatus(avail, occ, 0) for k, (avail, occ) in entries.items()})


# queues ----------------------------------------------------------------

def test_append_to_empty():
    q = append_patch(PatchQueue(5), patch(1))
    assert q.occupancy == 1 and q.head == patch(1)


def test_append_keeps_head():
    q = PatchQueue(5)
    append_patch(q, patch(1))
    append_patch(q, patch(2))
    assert q.head == patch(1)


def test_fifo_hundred():
    q = PatchQueue(5)
    for i in range(100):
        append_patch(q, patch(i))
    assert [q.pop() for _ in range(100)] == [patch(i) for i in range(100)]


def test_soft_threshold_exceeded():
    q = PatchQueue(2)
    for i in range(10):
        q.append(patch(i))
    assert q.occupancy == 10


def test_null_patch_rejected():
    with pytest.raises(ValueError):
        append_patch(PatchQueue(1), None)


@given(st.lists(st.booleans(), max_size=200), st.integers(1, 10))
def test_frame_queue_capacity_and_fifo(ops, cap):
    q = FrameQueue(cap)
    offered, popped, n = [], [], 0
    for push in ops:
        if push:
            if q.offer(n):
                offered.append(n)
            n += 1
        elif len(q):
            popped.append(q.pop())
        assert len(q) <= cap
    popped += [q.pop() for _ in range(len(q))]
    assert popped == offered
    assert q.dropped == n - len(offered)


# decide ------------------------------------------------------------------

def test_decide_examples():
    assert decide(0, 5, True, view()) == IDLE
    assert decide(0, 5, False, view(e2=(True, 0))) == IDLE
    assert decide(4, 5, False, view()) == LOCAL
    assert decide(6, 5, True, view()) == LOCAL
    assert decide(6, 5, False, view(e2=(True, 1))) == offload_neighbor("e2")
    assert decide(6, 5, False, view(e2=(False, 9))) == CLOUD


@given(st.integers(0, 50), st.integers(1, 20), st.booleans(),
       st.dictionaries(st.sampled_from(["e2", "e3", "e4"]), st.tuples(st.booleans(), st.integers(0, 30))))
def test_never_offload_at_or_below_threshold(occ, n_max, idle, entries):
    d = decide(occ, n_max, idle, view(**entries))
    if occ <= n_max:
        assert d.kind in ("idle", "local")
    if d.kind == "neighbor":
        assert entries[d.target][0]


def test_select_neighbor_examples():
    assert select_neighbor(view(e2=(True, 3), e3=(True, 1))) == "e3"
    assert select_neighbor(view(e2=(True, 2), e3=(True, 2))) == "e2"
    assert select_neighbor(view()) is None
    assert select_neighbor(view(e2=(False, 0))) is None


def test_select_neighbor_exhaustive():
    names = ["e2", "e3", "e4"]
    for n in range(4):
        for ids in itertools.combinations(names, n):
            for states in itertools.product([(True, 0), (True, 1), (True, 2), (False, 0)], repeat=n):
                v = view(**dict(zip(ids, states)))
                avail = [(s[1], i) for i, s in zip(ids, states) if s[0]]
                best = None
                for occ, i in avail:
                    if best is None or occ < best[0] or (occ == best[0] and i < best[1]):
                        best = (occ, i)
                assert select_neighbor(v) == (best[1] if best else None)


# probing -----------------------------------------------------------------

def edge(neighbors=("e2", "e3"), n_max=5, offload_all=False) -> NodeSpec:
    return NodeSpec("e1", "edge", patch_soft_threshold=n_max, neighbors=tuple(neighbors), offload_all=offload_all)


def test_probe_round_one_per_neighbor():
    probes = probe_round(edge(), 7)
    assert [(p.src, p.dst, p.sent_at) for p in probes] == [("e1", "e2", 7), ("e1", "e3", 7)]


def test_probe_ack_over_threshold_unavailable():
    v = AvailabilityView(("e2",))
    v.update("e2", 7, 5, 0)
    assert not v.entries["e2"].available
    v.update("e2", 4, 5, 0)
    assert v.entries["e2"].available


def test_view_ignores_undeclared():
    v = AvailabilityView(("e2",))
    v.update("e9", 0, 5, 0)
    assert "e9" not in v.entries


def test_staleness_guard():
    st_ = EdgeState.for_node(edge(("e2",)), "collaborative", 100_000, "cloud")
    st_.view.update("e2", 0, 5, 0)
    assert st_.view.effective(200_000, st_.max_view_age).entries["e2"].available
    assert not st_.view.effective(200_001, st_.max_view_age).entries["e2"].available


def test_unreachable_marked_unavailable():
    v = AvailabilityView(("e2",))
    v.update("e2", 0, 5, 0)
    v.mark_unavailable("e2", 10)
    assert not v.entries["e2"].available


# run_policy_step ---------------------------------------------------------

def loaded(n: int, neighbors=("e2",), busy=False, **kw) -> EdgeState:
    st_ = EdgeState.for_node(edge(neighbors, **kw), "collaborative", 100_000, "cloud")
    for i in range(n):
        st_.patches.append(patch(i))
    st_.worker_busy = busy
    return st_


def test_step_under_threshold_worker_pops():
    st_ = loaded(3)
    (a,) = run_policy_step(st_, 0)
    assert a.kind == "local" and a.patch == patch(0)
    assert st_.patches.occupancy == 2
    assert run_policy_step(st_, 0) == []


def test_step_over_threshold_busy_offloads_to_neighbor():
    st_ = loaded(7, busy=True)
    st_.view.update("e2", 1, 5, 0)
    (a,) = run_policy_step(st_, 0)
    assert (a.kind, a.target, a.patch) == ("neighbor", "e2", patch(0))
    assert st_.patches.occupancy == 6


def test_step_over_threshold_idle_worker_first():
    st_ = loaded(7)
    st_.view.update("e2", 1, 5, 0)
    assert [a.kind for a in run_policy_step(st_, 0)] == ["local"]
    assert st_.patches.occupancy == 6


def test_step_falls_back_to_cloud():
    st_ = loaded(7, busy=True)
    st_.view.update("e2", 9, 5, 0)
    (a,) = run_policy_step(st_, 0)
    assert (a.kind, a.target) == ("cloud", "cloud")


def test_step_drains_to_threshold_then_stops():
    st_ = loaded(9, busy=True, neighbors=())
    kinds = []
    while actions := run_policy_step(st_, 0):
        kinds += [a.kind for a in actions]
    assert kinds == ["cloud"] * 4 and st_.patches.occupancy == 5


def test_remote_work_after_own_queue():
    st_ = loaded(1)
    st_.remote.append(patch(99))
    assert run_policy_step(st_, 0)[0].kind == "local"
    st_.worker_busy = False
    assert run_policy_step(st_, 0)[0].patch == patch(99)


def test_offload_all_never_local():
    st_ = loaded(3, offload_all=True)
    kinds = []
    while actions := run_policy_step(st_, 0):
        kinds += [a.kind for a in actions]
    assert kinds == ["cloud"] * 3
    assert st_.threshold == 0


def test_reported_occupancy_excludes_in_service():
    st_ = loaded(3)
    run_policy_step(st_, 0)
    st_.remote.append(patch(50))
    assert st_.worker_busy and st_.reported_occupancy == 3


def test_every_pop_dispatched_once():
    st_ = loaded(40, neighbors=("e2", "e3"))
    st_.view.update("e2", 0, 5, 0)
    seen = []
    for t in range(200):
        for a in run_policy_step(st_, t):
            seen.append(a.patch.patch_id)
        if t % 3 == 0:
            st_.worker_busy = False
    assert sorted(seen) == sorted(patch(i).patch_id for i in range(40))
    assert len(seen) == len(set(seen))


# baselines -----------------------------------------------------------------

def test_edge_only_never_offloads():
    st_ = EdgeState.for_node(edge(("e2",)), "edge-only", None, "cloud")
    st_.view.update("e2", 0, 5, 0)
    for i in range(30):
        st_.patches.append(patch(i))
    kinds = set()
    for _ in range(60):
        kinds |= {a.kind for a in run_policy_step(st_, 0)}
        st_.worker_busy = False
    assert kinds == {"local"}


def test_edge_only_queue_grows_when_overloaded():
    st_ = EdgeState.for_node(edge(()), "edge-only", None, "cloud")
    history = []
    for t in range(50):
        st_.patches.append(patch(2 * t))
        st_.patches.append(patch(2 * t + 1))
        run_policy_step(st_, t)
        st_.worker_busy = False  # one completion per tick, two arrivals
        history.append(st_.patches.occupancy)
    assert all(b > a for a, b in zip(history, history[1:]))


def test_cloud_only_forwards_frame():
    f = FrameDescriptor(0, "cam1", 0, 1000)
    (a,) = baseline_cloud_only(f, "cloud")
    assert (a.kind, a.target, a.frame) == ("frame", "cloud", f)
