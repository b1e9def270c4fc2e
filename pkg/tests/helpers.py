"""Small builders shared by several test modules."""

from collections import Counter

import numpy as np

from demo2plan.core import Detection, Episode, FrameRecord
from demo2plan.fusion import Track
from demo2plan.geometry import default_camera


def det(u, v, label="metal can", conf=0.9):
    return Detection((u, v), (10.0, 10.0), {label: conf}, conf)


def episode_from_detections(per_frame, hand=(0.0, 0.0), labels=None):
    frames = [
        FrameRecord(i, i / 22.0, [0.0], tuple(ds), None if labels is None else labels[i], hand)
        for i, ds in enumerate(per_frame)
    ]
    return Episode("synthetic", 22.0, len(frames), frames, default_camera(), 0.8, (), feature_dim=1)


def make_track(tid, entries):
    """``entries``: frame -> (center, class, confidence)."""
    tr = Track(tid)
    for f in sorted(entries):
        c, cls, conf = entries[f]
        tr.centers[f] = c
        tr.classes[f] = cls
        tr.confidences[f] = conf
        tr.class_histogram[cls] += 1
        tr.last_confidence = conf
    return tr


def brute_force_vote(tracks, keyframe, hand, cfg):
    """The voting rule spelled out over explicit sets, for oracle comparisons."""

    def modal(tr):
        hist = Counter(tr.classes.values())
        best = max(hist.values())
        return sorted(c for c, n in hist.items() if n == best)[0]

    def ok(tr, f):
        if f not in tr.centers or modal(tr) in cfg.class_blacklist:
            return False
        if tr.confidences[f] < cfg.min_confidence:
            return False
        (u, v), (hu, hv) = tr.centers[f], hand
        return ((u - hu) ** 2 + (v - hv) ** 2) ** 0.5 <= cfg.hand_radius_px

    for k in range(cfg.max_window + 1):
        window = range(keyframe - k, keyframe + k + 1)
        votes = {tr.track_id: sum(ok(tr, f) for f in window) for tr in tracks}
        total = sum(votes.values())
        winners = [t for t, n in votes.items() if 2 * n > total]
        if total and winners:
            tid = winners[0]
            tr = next(t for t in tracks if t.track_id == tid)
            frames = sorted((f for f in window if ok(tr, f)), key=lambda f: (abs(f - keyframe), f))
            return tid, tr.centers[frames[0]], 2 * k + 1
    return None, None, 2 * cfg.max_window + 1


def random_tracks(rng, n_tracks, keyframe, radius, blacklist_prob=0.15):
    tracks = []
    for tid in range(n_tracks):
        entries = {}
        for f in range(keyframe - radius, keyframe + radius + 1):
            if rng.random() < 0.55:
                near = rng.random() < 0.7
                r = rng.uniform(0, 55) if near else rng.uniform(62, 150)
                a = rng.uniform(0, 2 * np.pi)
                cls = "arm" if rng.random() < blacklist_prob else str(rng.choice(["metal can", "cardboard box"]))
                entries[f] = ((float(r * np.cos(a)), float(r * np.sin(a))), cls, float(rng.uniform(0.1, 1.0)))
        if entries:
            tracks.append(make_track(tid, entries))
    return tracks
