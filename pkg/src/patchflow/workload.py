"""Synthetic cameras and stage cost models.

Cameras emit frames on a fixed cadence (optionally sped up during bursts);
each frame yields 0-3 plate patches whose combined size is a fixed fraction
of the frame. Extraction and recognition costs are uniform-jittered means
that depend on the stage, the node role and the calibration profile.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import IO, Iterable, Iterator

import numpy as np

from patchflow.model import (
    CameraProfile,
    FrameDescriptor,
    PatchDescriptor,
    Scenario,
    ServiceTime,
    StageProfile,
    _apply_overrides,
    patch_id_for,
    round_half_up,
)

__all__ = [
    "CameraProfile",
    "StageProfile",
    "PRESETS",
    "DEFAULT_PLATES",
    "FrameEvent",
    "PolicyError",
    "rng_stream",
    "next_frame",
    "draw_plate_count",
    "split_patch_sizes",
    "extract_outcome",
    "service_time",
    "resolve_profile",
    "generate_frame_events",
    "write_frame_events",
    "read_frame_events",
]

DEFAULT_PLATES = ((0, 0.2), (1, 0.6), (2, 0.15), (3, 0.05))

# Recognition means are tuned so a lone edge tops out near 1.8 plated frames/s
# with the default plate yield (1.3125 patches per plated frame).
PRESETS: dict[str, StageProfile] = {
    "hyperlpr": StageProfile(
        name="hyperlpr",
        extraction_time_us=ServiceTime(60_000, 0.2),
        extraction_time_cloud_us=ServiceTime(15_000, 0.2),
        recognition_time_edge_us=ServiceTime(423_000, 0.2),
        recognition_time_cloud_us=ServiceTime(50_000, 0.2),
        plates_per_frame=DEFAULT_PLATES,
        patch_size_ratio=0.5181,
    ),
    "yolo": StageProfile(
        name="yolo",
        extraction_time_us=ServiceTime(70_000, 0.2),
        extraction_time_cloud_us=ServiceTime(12_000, 0.2),
        recognition_time_edge_us=ServiceTime(470_000, 0.2),
        recognition_time_cloud_us=ServiceTime(60_000, 0.2),
        plates_per_frame=DEFAULT_PLATES,
        patch_size_ratio=0.5214,
    ),
    "mtcnn": StageProfile(
        name="mtcnn",
        extraction_time_us=ServiceTime(55_000, 0.2),
        extraction_time_cloud_us=ServiceTime(14_000, 0.2),
        recognition_time_edge_us=ServiceTime(423_000, 0.2),
        recognition_time_cloud_us=ServiceTime(45_000, 0.2),
        plates_per_frame=DEFAULT_PLATES,
        patch_size_ratio=0.5157,
    ),
}


class PolicyError(RuntimeError):
    """A stage was asked to run somewhere the active policy forbids."""


def rng_stream(seed: int, component: str, purpose: str) -> np.random.Generator:
    """Independent counter-based stream for one (component, purpose) pair.

    Streams are keyed by name, so adding a camera or node never shifts the
    draws of any other component.
    """
    digest = hashlib.sha256(f"{component}\x00{purpose}".encode()).digest()
    key = tuple(int.from_bytes(digest[i:i + 4], "big") for i in range(0, 16, 4))
    ss = np.random.SeedSequence(entropy=seed, spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def inter_arrival_us(camera: CameraProfile, now: int) -> int:
    return round_half_up(Fraction(10**6) / (camera.fps * camera.multiplier_at(now)))


def next_frame(camera: CameraProfile, now: int, rng: np.random.Generator,
               frame_id: int = 0) -> tuple[FrameDescriptor, int]:
    """Frame captured at ``now`` and the time of the following arrival."""
    j = camera.frame_size_jitter
    u = rng.uniform(-j, j) if j > 0 else 0.0
    size = max(1, round_half_up(camera.frame_size_mean_bytes * (1.0 + u)))
    frame = FrameDescriptor(frame_id, camera.camera_id, now, size)
    return frame, now + inter_arrival_us(camera, now)


def draw_plate_count(profile: StageProfile, rng: np.random.Generator) -> int:
    x = rng.random()
    acc = 0.0
    for k, p in profile.plates_per_frame:
        acc += p
        if x < acc:
            return k
    # x landed in the rounding sliver above the cumulative sum
    return max(k for k, p in profile.plates_per_frame if p > 0)


def split_patch_sizes(frame_size: int, ratio: float, k: int) -> list[int]:
    """Split ``round(frame_size * ratio)`` bytes into k near-equal patches.

    The division remainder goes to the first patch.
    """
    if k == 0:
        return []
    # every patch carries at least one byte
    total = max(k, round_half_up(frame_size * ratio))
    base, rem = divmod(total, k)
    return [base + rem] + [base] * (k - 1)


def make_patches(frame: FrameDescriptor, sizes: list[int], node_id: str, now: int) -> list[PatchDescriptor]:
    return [
        PatchDescriptor(
            patch_id=patch_id_for(frame.camera_id, frame.frame_id, i),
            camera_id=frame.camera_id,
            frame_id=frame.frame_id,
            size_bytes=size,
            extracted_at=now,
            origin_node=node_id,
            hops=(node_id,),
            capture_time=frame.capture_time,
            index=i,
        )
        for i, size in enumerate(sizes)
    ]


def extract_outcome(frame: FrameDescriptor, profile: StageProfile, rng: np.random.Generator,
                    node_id: str = "", now: int | None = None) -> list[PatchDescriptor]:
    """Patches found in ``frame``; an empty list when no plate is present."""
    k = draw_plate_count(profile, rng)
    sizes = split_patch_sizes(frame.size_bytes, profile.patch_size_ratio, k)
    return make_patches(frame, sizes, node_id, frame.capture_time if now is None else now)


def service_time(stage: str, node_role: str, profile: StageProfile, rng: np.random.Generator,
                 policy: str = "collaborative") -> int:
    if stage == "extraction":
        if node_role == "edge":
            st = profile.extraction_time_us
        elif policy == "cloud-only":
            st = profile.extraction_time_cloud_us
        else:
            raise PolicyError(f"extraction cannot run on the cloud under {policy}")
    elif stage == "recognition":
        st = profile.recognition_time_edge_us if node_role == "edge" else profile.recognition_time_cloud_us
    else:
        raise ValueError(f"unknown stage {stage!r}")
    u = rng.uniform(-st.jitter, st.jitter) if st.jitter > 0 else 0.0
    return max(1, round_half_up(st.mean_us * (1.0 + u)))


def resolve_profile(scenario: Scenario, name: str | None = None) -> StageProfile:
    """Named preset with the scenario's inline overrides applied."""
    name = name or scenario.calibration
    base = PRESETS[name]
    if not scenario.calibration_overrides:
        return base
    errors: list[str] = []
    prof = _apply_overrides(base, dict(scenario.calibration_overrides), errors)
    if errors:
        raise ValueError("; ".join(errors))
    return replace(prof, name=base.name)


@dataclass(frozen=True)
class FrameEvent:
    """One frame plus the extraction outcome it will have, fixed up front.

    Planning the outcome at capture time keeps every policy (and the live
    daemons) looking at exactly the same plates.
    """

    frame: FrameDescriptor
    patch_sizes: tuple[int, ...]

    @property
    def plates(self) -> int:
        return len(self.patch_sizes)

    def to_json(self) -> dict:
        f = self.frame
        return {
            "camera_id": f.camera_id,
            "frame_id": f.frame_id,
            "time_us": f.capture_time,
            "size_bytes": f.size_bytes,
            "plates": self.plates,
            "patch_sizes": list(self.patch_sizes),
        }

    @classmethod
    def from_json(cls, d: dict) -> FrameEvent:
        sizes = tuple(int(s) for s in d["patch_sizes"])
        if int(d["plates"]) != len(sizes):
            raise ValueError(f"frame {d['camera_id']}/{d['frame_id']}: plates does not match patch_sizes")
        frame = FrameDescriptor(int(d["frame_id"]), str(d["camera_id"]), int(d["time_us"]), int(d["size_bytes"]))
        if frame.size_bytes < 1 or any(s < 1 for s in sizes):
            raise ValueError(f"frame {frame.camera_id}/{frame.frame_id}: sizes must be positive")
        return cls(frame, sizes)


def camera_events(scenario: Scenario, camera: CameraProfile) -> Iterator[FrameEvent]:
    """Lazily generated frames of one camera, in capture order."""
    edge = scenario.node(scenario.edge_of(camera.camera_id))
    profile = resolve_profile(scenario, edge.extraction_profile)
    size_rng = rng_stream(scenario.seed, camera.camera_id, "frames")
    plate_rng = rng_stream(scenario.seed, camera.camera_id, "plates")
    now, frame_id = 0, 0
    while now < scenario.duration_us:
        frame, nxt = next_frame(camera, now, size_rng, frame_id)
        k = draw_plate_count(profile, plate_rng)
        yield FrameEvent(frame, tuple(split_patch_sizes(frame.size_bytes, profile.patch_size_ratio, k)))
        now, frame_id = nxt, frame_id + 1


def generate_frame_events(scenario: Scenario) -> list[FrameEvent]:
    events = [e for cam in scenario.cameras for e in camera_events(scenario, cam)]
    events.sort(key=lambda e: (e.frame.capture_time, e.frame.camera_id, e.frame.frame_id))
    return events


def write_frame_events(events: Iterable[FrameEvent], dest: str | Path | IO[str]) -> None:
    lines = "".join(json.dumps(e.to_json(), sort_keys=True) + "\n" for e in events)
    if hasattr(dest, "write"):
        dest.write(lines)
    else:
        Path(dest).write_text(lines, encoding="utf-8")


def read_frame_events(src: str | Path) -> list[FrameEvent]:
    events = []
    last: dict[str, int] = {}
    for lineno, line in enumerate(Path(src).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            ev = FrameEvent.from_json(json.loads(line))
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"{src}:{lineno}: {exc}") from exc
        cam = ev.frame.camera_id
        if cam in last and ev.frame.frame_id <= last[cam]:
            raise ValueError(f"{src}:{lineno}: frame_id not increasing for camera {cam}")
        last[cam] = ev.frame.frame_id
        events.append(ev)
    events.sort(key=lambda e: (e.frame.capture_time, e.frame.camera_id, e.frame.frame_id))
    return events

