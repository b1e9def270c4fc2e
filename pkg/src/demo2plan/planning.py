"""From a per-frame label timeline to a validated pick-and-place plan.

Held segments come from runs of OBJECT_HELD. Each segment is grounded by
voting for the object at the last free frame before the grasp and voting
again at the first free frame after the release, near the hand's last held
position; both pixels are backprojected onto the table. Segments that fail any check turn the whole outcome into a
request for a new demonstration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import OBJECT_HELD
from .errors import Demo2PlanError
from .fusion import Resolution, VoteConfig, resolve_at_keyframe
from .geometry import Point3, TablePlane, backproject, in_bounds

AMBIGUOUS_OBJECT = "AmbiguousObject"
MISSING_EVIDENCE = "MissingEvidence"
INCONSISTENT_EVIDENCE = "InconsistentEvidence"
OUT_OF_WORKSPACE = "OutOfWorkspace"
MALFORMED_TIMELINE = "MalformedTimeline"

STEP_KINDS = ("APPROACH", "DESCEND", "GRASP", "LIFT", "TRANSPORT", "LOWER", "RELEASE", "RETREAT")
DEFAULT_HALF_HEIGHT = 0.04


@dataclass
class HeldSegment:
    start_frame: int
    end_frame: int
    object: Optional[Resolution] = None
    grasp_point: Optional[Point3] = None
    release_point: Optional[Point3] = None
    grasp_keyframe: Optional[int] = None
    release_keyframe: Optional[int] = None
    half_height: float = DEFAULT_HALF_HEIGHT
    release_object: Optional[Resolution] = None

    @property
    def object_id(self):
        if self.object is None or not self.object.decided:
            return None
        return f"track-{self.object.track_id}"

    def to_dict(self):
        return {
            "start_frame": self.start_frame,
            "end_frame": self.end_frame,
            "grasp_keyframe": self.grasp_keyframe,
            "release_keyframe": self.release_keyframe,
            "object": self.object_id,
            "object_class": None if self.object is None else self.object.class_name,
            "frames_used": None if self.object is None else self.object.frames_used,
            "release_track": None if self.release_object is None or not self.release_object.decided
            else f"track-{self.release_object.track_id}",
            "grasp_point": None if self.grasp_point is None else list(self.grasp_point),
            "release_point": None if self.release_point is None else list(self.release_point),
        }


@dataclass(frozen=True)
class PlanStep:
    kind: str
    target: Point3
    object_id: Optional[str] = None

    def __post_init__(self):
        if self.kind not in STEP_KINDS:
            raise ValueError(f"unknown step kind {self.kind!r}")
        if self.kind in ("GRASP", "RELEASE") and self.object_id is None:
            raise ValueError(f"{self.kind} needs an object id")
        if not np.all(np.isfinite(self.target)):
            raise ValueError("step target must be finite")

    def to_dict(self):
        return {"kind": self.kind, "target": list(self.target), "object": self.object_id}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], Point3(*map(float, d["target"])), d.get("object"))


@dataclass
class SegmentCheck:
    segment: int
    failures: list = field(default_factory=list)  # (reason, detail) pairs

    @property
    def passed(self):
        return not self.failures

    def to_dict(self):
        return {
            "segment": self.segment,
            "passed": self.passed,
            "failures": [{"reason": r, "detail": d} for r, d in self.failures],
        }


@dataclass
class PlanReport:
    steps: Optional[list]
    reasons: list
    diagnostics: list
    segments: list = field(default_factory=list)

    @property
    def is_plan(self):
        return self.steps is not None

    def to_dict(self):
        d = {"outcome": "plan" if self.is_plan else "request_new_demonstration"}
        if self.is_plan:
            d["steps"] = [s.to_dict() for s in self.steps]
        else:
            d["request_new_demonstration"] = {"reasons": list(self.reasons)}
        d["diagnostics"] = [c.to_dict() for c in self.diagnostics]
        d["segments"] = [s.to_dict() for s in self.segments]
        return d


def extract_segments(labels):
    """Maximal runs of OBJECT_HELD, in temporal order."""
    segments, start = [], None
    labels = list(labels)
    for i, lab in enumerate(labels):
        if lab == OBJECT_HELD and start is None:
            start = i
        elif lab != OBJECT_HELD and start is not None:
            segments.append(HeldSegment(start, i - 1))
            start = None
    if start is not None:
        segments.append(HeldSegment(start, len(labels) - 1))
    return segments


def ground_segments(segments, episode, tracks, cam, table: TablePlane, cfg: VoteConfig = VoteConfig(),
                    half_heights=None):
    """Attach object identity and table positions to each held segment."""
    half_heights = half_heights or {}
    last = episode.frame_count - 1
    out = []
    for seg in segments:
        g = HeldSegment(seg.start_frame, seg.end_frame)
        g.grasp_keyframe = seg.start_frame - 1 if seg.start_frame > 0 else 0
        g.release_keyframe = min(seg.end_frame + 1, last)
        hand = episode.hand_at(g.grasp_keyframe)
        if hand is not None:
            g.object = resolve_at_keyframe(tracks, g.grasp_keyframe, hand, cfg)
        if g.object is not None and g.object.decided:
            g.half_height = half_heights.get(g.object.class_name, DEFAULT_HALF_HEIGHT)
            try:
                g.grasp_point = backproject(g.object.position, cam, table)
            except Demo2PlanError:
                g.grasp_point = None
            # vote again after the release, around where the hand let go
            hand_end = episode.hand_at(seg.end_frame)
            if hand_end is not None:
                rel = resolve_at_keyframe(tracks, g.release_keyframe, hand_end, cfg)
                g.release_object = rel
                if rel.decided:
                    try:
                        g.release_point = backproject(rel.position, cam, table)
                    except Demo2PlanError:
                        g.release_point = None
        out.append(g)
    return out


def validate(grounded, table: TablePlane, d_min=0.05):
    checks = []
    prev_end = -1
    for i, seg in enumerate(grounded):
        c = SegmentCheck(i)
        if seg.object is None or not seg.object.decided:
            c.failures.append((AMBIGUOUS_OBJECT, "no object reached a majority near the hand"))
        elif seg.grasp_point is None or seg.release_point is None:
            which = "grasp" if seg.grasp_point is None else "release"
            c.failures.append((MISSING_EVIDENCE, f"no {which} position for {seg.object_id}"))
        else:
            g, r = np.array(seg.grasp_point), np.array(seg.release_point)
            moved = float(np.linalg.norm(g - r))
            if moved < d_min:
                c.failures.append((
                    INCONSISTENT_EVIDENCE,
                    f"object moved only {moved:.3f} m while held (minimum {d_min:.3f} m)",
                ))
            for name, p in (("grasp", g), ("release", r)):
                if not in_bounds(p, table):
                    c.failures.append((OUT_OF_WORKSPACE, f"{name} point {np.round(p, 3).tolist()} is off the table"))
        if seg.start_frame > seg.end_frame or seg.start_frame <= prev_end:
            c.failures.append((MALFORMED_TIMELINE, f"segment {i} overlaps or precedes its predecessor"))
        prev_end = max(prev_end, seg.end_frame)
        checks.append(c)
    return checks


def synthesize(grounded, checks, hover=0.10) -> PlanReport:
    reasons = [
        {"segment": c.segment, "reason": r, "detail": d} for c in checks for r, d in c.failures
    ]
    if reasons:
        return PlanReport(None, reasons, list(checks), list(grounded))
    up = np.array([0.0, 0.0, hover])
    steps = []
    for seg in grounded:
        lift = np.array([0.0, 0.0, seg.half_height])
        g = np.array(seg.grasp_point) + lift
        r = np.array(seg.release_point) + lift
        oid = seg.object_id

        def P(v):
            return Point3(*map(float, v))

        steps += [
            PlanStep("APPROACH", P(g + up)),
            PlanStep("DESCEND", P(g)),
            PlanStep("GRASP", P(g), oid),
            PlanStep("LIFT", P(g + up)),
            PlanStep("TRANSPORT", P(r + up)),
            PlanStep("LOWER", P(r)),
            PlanStep("RELEASE", P(r), oid),
            PlanStep("RETREAT", P(r + up)),
        ]
    return PlanReport(steps, [], list(checks), list(grounded))


def plan_episode(labels, episode, tracks, cfg: VoteConfig = VoteConfig(), d_min=0.05, hover=0.10,
                 half_heights=None) -> PlanReport:
    """Segment, ground, validate and synthesize in one call."""
    table = episode.table
    segs = extract_segments(labels)
    grounded = ground_segments(segs, episode, tracks, episode.camera, table, cfg, half_heights)
    return synthesize(grounded, validate(grounded, table, d_min), hover)
