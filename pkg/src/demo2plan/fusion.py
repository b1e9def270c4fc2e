"""Frame-to-frame object tracks and windowed majority voting at keyframes."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .errors import MissingObservation
from .geometry import Pixel


@dataclass(frozen=True)
class VoteConfig:
    max_window: int = 10
    min_confidence: float = 0.3
    gate_px: float = 40.0
    class_blacklist: frozenset = frozenset({"arm", "hand"})
    hand_radius_px: float = 60.0
    max_gap_frames: int = 15  # tracks unseen for longer stop accepting detections

    def __post_init__(self):
        object.__setattr__(self, "class_blacklist", frozenset(self.class_blacklist))
        if self.max_window < 0:
            raise ValueError("max_window must be >= 0")
        if self.gate_px <= 0:
            raise ValueError("gate_px must be positive")


@dataclass
class Track:
    track_id: int
    centers: dict = field(default_factory=dict)  # frame -> Pixel
    classes: dict = field(default_factory=dict)  # frame -> class name
    confidences: dict = field(default_factory=dict)  # frame -> confidence
    class_histogram: Counter = field(default_factory=Counter)
    last_confidence: float = 0.0

    @property
    def frames(self):
        return sorted(self.centers)

    @property
    def last_center(self):
        return self.centers[max(self.centers)]

    @property
    def modal_class(self):
        return min(self.class_histogram, key=lambda c: (-self.class_histogram[c], c))

    def add(self, frame, det):
        self.centers[frame] = det.center
        self.classes[frame] = det.label
        self.confidences[frame] = det.confidence
        self.class_histogram[det.label] += 1
        self.last_confidence = det.confidence

    def nearest_present(self, frame, tolerance):
        """Present frame closest to ``frame`` (earlier wins ties), or None beyond ``tolerance``."""
        for d in range(tolerance + 1):
            for f in (frame - d, frame + d):
                if f in self.centers:
                    return f
        return None


@dataclass(frozen=True)
class Resolution:
    track_id: Optional[int]
    class_name: Optional[str]
    position: Optional[Pixel]
    frames_used: int
    decided: bool


def _dist(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1])


def associate_tracks(ep, cfg: VoteConfig = VoteConfig()):
    """Greedy nearest-neighbour association, shortest gated distance first.

    Each track takes at most one detection per frame; leftover detections open
    new tracks in file order. Tracks not seen for more than ``cfg.max_gap_frames``
    frames are retired from association.
    """
    tracks = []
    last = np.zeros((0, 2))
    seen = np.zeros(0, dtype=np.int64)
    for fr in ep.frames:
        dets = fr.detections
        if not dets:
            continue
        pairs = []
        if len(tracks):
            pts = np.array([d.center for d in dets])
            dist = np.hypot(pts[:, None, 0] - last[None, :, 0], pts[:, None, 1] - last[None, :, 1])
            live = (fr.index - seen) <= cfg.max_gap_frames
            for j, tid in zip(*np.nonzero((dist <= cfg.gate_px) & live[None, :])):
                pairs.append((float(dist[j, tid]), int(tid), int(j)))
        pairs.sort()
        taken_tracks, taken_dets = set(), set()
        for d, tid, j in pairs:
            if tid in taken_tracks or j in taken_dets:
                continue
            tracks[tid].add(fr.index, dets[j])
            last[tid] = dets[j].center
            seen[tid] = fr.index
            taken_tracks.add(tid)
            taken_dets.add(j)
        new = [j for j in range(len(dets)) if j not in taken_dets]
        for j in new:
            tr = Track(len(tracks))
            tr.add(fr.index, dets[j])
            tracks.append(tr)
        if new:
            last = np.vstack([last, [dets[j].center for j in new]])
            seen = np.concatenate([seen, np.full(len(new), fr.index)])
    return tracks


def _hand_at(hand, frame):
    if isinstance(hand, Mapping):
        return hand.get(frame)
    if callable(hand):
        return hand(frame)
    return hand


def plausible(track: Track, frame, hand, cfg: VoteConfig):
    """Near the hand, confident, and of a class that is not the demonstrator's body."""
    if frame not in track.centers or track.modal_class in cfg.class_blacklist:
        return False
    if track.confidences[frame] < cfg.min_confidence:
        return False
    h = _hand_at(hand, frame)
    return h is not None and _dist(track.centers[frame], h) <= cfg.hand_radius_px


def resolve_at_keyframe(tracks, keyframe, hand, cfg: VoteConfig = VoteConfig()) -> Resolution:
    """Grow a symmetric window around ``keyframe`` until one track holds a strict majority.

    ``hand`` is either a fixed pixel or a mapping frame -> pixel.
    """
    counts = Counter()
    by_id = {t.track_id: t for t in tracks}
    for k in range(cfg.max_window + 1):
        frames = (keyframe,) if k == 0 else (keyframe - k, keyframe + k)
        for f in frames:
            for tr in tracks:
                if plausible(tr, f, hand, cfg):
                    counts[tr.track_id] += 1
        total = sum(counts.values())
        if total:
            tid, best = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
            if 2 * best > total:
                tr = by_id[tid]
                near = None
                for d in range(k + 1):
                    for f in (keyframe - d, keyframe + d):
                        if plausible(tr, f, hand, cfg):
                            near = f
                            break
                    if near is not None:
                        break
                return Resolution(tid, tr.modal_class, tr.centers[near], 2 * k + 1, True)
    return Resolution(None, None, None, 2 * cfg.max_window + 1, False)


def displacement(track: Track, before, after, tolerance=3):
    fb = track.nearest_present(before, tolerance)
    fa = track.nearest_present(after, tolerance)
    if fb is None or fa is None:
        missing = before if fb is None else after
        raise MissingObservation(f"track {track.track_id} not observed near frame {missing}")
    return _dist(track.centers[fb], track.centers[fa])
