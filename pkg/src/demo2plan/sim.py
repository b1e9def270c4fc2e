"""Synthetic demonstrations and a kinematic tabletop executor.

The generator plays the human demonstrator plus the camera/feature/detector
stack: a hand picks one object up, moves it, lets go, picks it up again and
places it somewhere else. Frames carry ground-truth labels, the hand pixel,
noisy detections and synthetic conditioning features.

The executor replays joint trajectories on a kinematic arm and decides grasp
success purely from tool-to-object distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import (
    DEFAULT_FEATURE_DIM,
    DEFAULT_FPS,
    DEFAULT_FRAME_COUNT,
    DEFAULT_VOCABULARY,
    HAND_FREE,
    OBJECT_HELD,
    Detection,
    Episode,
    FrameRecord,
    ObjectInfo,
    make_rng,
)
from .errors import EmptyBatch, PlanObjectMismatch, SceneError
from .geometry import CameraModel, Pixel, Point3, TablePlane, default_camera, project
from .kinematics import KinematicChain, tool_position

# Region of the table that is both visible to the default camera and reachable.
SPAWN_REGION = (0.30, 0.75, -0.30, 0.30)


@dataclass(frozen=True)
class SceneObject:
    object_id: str
    class_name: str
    footprint_radius: float
    height: float
    graspable: bool
    position: Optional[Point3] = None

    def __post_init__(self):
        if self.footprint_radius <= 0 or self.height <= 0:
            raise SceneError(f"{self.object_id}: radius and height must be positive")
        if self.position is not None:
            object.__setattr__(self, "position", Point3(*map(float, self.position)))

    def to_info(self):
        return ObjectInfo(
            self.object_id, self.class_name, self.graspable, self.position,
            self.footprint_radius, self.height,
        )

    @classmethod
    def from_info(cls, info: ObjectInfo):
        if info.position is None or info.radius is None or info.height is None:
            raise SceneError(f"object {info.id} lacks position/size in the episode header")
        return cls(info.id, info.class_name, info.radius, info.height, info.graspable, info.position)


def default_catalog():
    """Five hand-sized objects; the bowl and the soup can are not robot-graspable."""
    return [
        SceneObject("red_bowl", "red plate", 0.07, 0.06, False),
        SceneObject("spam_can", "metal can", 0.045, 0.08, True),
        SceneObject("jello_strawberry", "cardboard box", 0.04, 0.08, True),
        SceneObject("jello_chocolate", "cardboard box", 0.045, 0.08, True),
        SceneObject("tomato_can", "metal can", 0.035, 0.08, False),
    ]


def class_half_heights(catalog=None):
    """Mean half-height per class name, used to lift backprojected points to grasp height."""
    acc = {}
    for ob in catalog or default_catalog():
        acc.setdefault(ob.class_name, []).append(ob.height / 2)
    return {k: float(np.mean(v)) for k, v in acc.items()}


@dataclass(frozen=True)
class NoiseModel:
    detect_prob: float = 0.8724
    class_accuracy: float = 0.5011
    confusion_bias_class: str = "cardboard box"
    fp_rate_per_frame: float = 0.406
    arm_fp_prob: float = 0.3
    held_occlusion_prob: float = 0.5
    center_jitter_px: float = 3.0
    feature_flip_prob: float = 0.1
    feature_noise: float = 0.1

    def __post_init__(self):
        for name in ("detect_prob", "class_accuracy", "arm_fp_prob", "held_occlusion_prob", "feature_flip_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if min(self.fp_rate_per_frame, self.center_jitter_px, self.feature_noise) < 0:
            raise ValueError("noise magnitudes must be nonnegative")

    @classmethod
    def noiseless(cls):
        return cls(1.0, 1.0, "cardboard box", 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class DemoScript:
    moved_object_id: str
    pick1: Point3
    place1: Point3
    pick2: Point3
    place2: Point3
    held: tuple  # ((start, end), (start, end)), inclusive frames
    timing_outlier: bool = False

    def to_dict(self):
        return {
            "moved_object": self.moved_object_id,
            "pick1": list(self.pick1), "place1": list(self.place1),
            "pick2": list(self.pick2), "place2": list(self.place2),
            "held": [list(h) for h in self.held],
            "timing_outlier": self.timing_outlier,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["moved_object"], Point3(*d["pick1"]), Point3(*d["place1"]),
            Point3(*d["pick2"]), Point3(*d["place2"]),
            tuple(tuple(h) for h in d["held"]), bool(d.get("timing_outlier", False)),
        )


@dataclass
class GenerationStats:
    """Bookkeeping the detector statistics are checked against."""

    frames: int = 0
    visible_object_frames: int = 0
    detected: int = 0
    correct_class: int = 0
    false_positives: int = 0
    arm_detections: int = 0


# --- layout and timing ---------------------------------------------------------

MIN_SEPARATION_M = 0.15
MIN_SEPARATION_PX = 90.0
MIN_MOVE_M = 0.15
HOVER_M = 0.08


def _sample_point(rng, region, z):
    x0, x1, y0, y1 = region
    return np.array([rng.uniform(x0, x1), rng.uniform(y0, y1), z])


def _seg_dist(p, a, b):
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / max(np.dot(ab, ab), 1e-12), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def _far_enough(p, others, cam, table):
    px = np.array(project((p[0], p[1], table.height_m), cam))
    for q in others:
        if np.linalg.norm(p[:2] - q[:2]) < MIN_SEPARATION_M:
            return False
        qx = np.array(project((q[0], q[1], table.height_m), cam))
        if np.linalg.norm(px - qx) < MIN_SEPARATION_PX:
            return False
    return True


def _sample_layout(rng, objects, cam, table, region):
    """Positions for every object plus the three places the moved object visits."""
    for _ in range(2000):
        moved = objects[0]
        zc = table.height_m + moved.height / 2
        pts = []
        ok = True
        for i, ob in enumerate(objects):
            if ob.position is not None:
                p = np.array(ob.position)
            else:
                p = None
                for _ in range(200):
                    cand = _sample_point(rng, region, table.height_m + ob.height / 2)
                    if _far_enough(cand, pts, cam, table):
                        p = cand
                        break
                if p is None:
                    ok = False
                    break
            pts.append(p)
        if not ok:
            continue
        distractors = pts[1:]
        places = []
        prev = pts[0]
        for _ in range(2):
            found = None
            for _ in range(200):
                cand = _sample_point(rng, region, zc)
                if np.linalg.norm(cand[:2] - prev[:2]) < MIN_MOVE_M:
                    continue
                if not _far_enough(cand, distractors, cam, table):
                    continue
                if any(_seg_dist(d[:2], prev[:2], cand[:2]) < 0.10 for d in distractors):
                    continue
                found = cand
                break
            if found is None:
                break
            places.append(found)
            prev = found
        if len(places) == 2:
            return pts, places
    raise SceneError("could not find a collision-free layout for the scene")


def _truncnorm(rng, mean, sd, lo, hi):
    for _ in range(100):
        v = rng.normal(mean, sd)
        if lo <= v <= hi:
            return int(round(v))
    return int(round(min(max(mean, lo), hi)))


def _phase_durations(rng, frame_count):
    """Durations of the free/held phases; the final rest phase absorbs the remainder."""
    outlier = bool(rng.random() < 0.1)
    d = {
        "idle": _truncnorm(rng, 15, 5, 6, 30),
        "reach1": _truncnorm(rng, 40, 7, 25, 55),
        "transport1": _truncnorm(rng, 90, 10, 65, 110),
        "between": _truncnorm(rng, 60, 10, 40, 80),
        "transport2": _truncnorm(rng, 90, 10, 65, 110),
        "retreat": _truncnorm(rng, 35, 6, 20, 50),
    }
    if outlier:
        # unusually long grasp or long inaction
        key = ("transport1", "transport2", "idle")[int(rng.integers(3))]
        d[key] = int(d[key] * 1.5)
    scale = frame_count / 440.0
    d = {k: max(4, int(round(v * scale))) for k, v in d.items()}
    budget = frame_count - 2 * (PRE_GRASP + GRIP + SET_DOWN + POST_RELEASE) - 5
    excess = sum(d.values()) - budget
    if excess > 0:
        free = ("idle", "reach1", "between", "retreat")
        room = sum(d[k] - 4 for k in free)
        for k in free:
            d[k] -= int(math.ceil(excess * (d[k] - 4) / max(room, 1)))
            d[k] = max(d[k], 4)
    return d, outlier


# Fixed dwell lengths in frames: hand on the object before contact, fingers
# closed before lifting, object set down before letting go, hand still after.
PRE_GRASP, GRIP, SET_DOWN, POST_RELEASE = 8, 6, 4, 6


def _polyline(points, n):
    """``n`` samples along a polyline at constant speed, excluding the start point."""
    pts = np.array(points, dtype=float)
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    if cum[-1] == 0:
        return [pts[-1].copy() for _ in range(n)]
    out = []
    for k in range(1, n + 1):
        s = cum[-1] * k / n
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(pts) - 2)
        L = cum[i + 1] - cum[i]
        frac = (s - cum[i]) / L if L > 0 else 1.0
        out.append(pts[i] + (pts[i + 1] - pts[i]) * frac)
    out[-1] = pts[-1].copy()
    return out


def _hand_path(durations, rest, pick1, place1, place2, frame_count):
    """Per-frame hand positions and held flags."""
    hover = np.array([0.0, 0.0, HOVER_M])
    hand, held = [], []

    def hold(p, n, h):
        hand.extend([np.array(p, dtype=float)] * n)
        held.extend([h] * n)

    def move(pts, n, h):
        hand.extend(_polyline(pts, n))
        held.extend([h] * n)

    hold(rest, durations["idle"], False)
    move([rest, pick1 + hover, pick1], durations["reach1"], False)
    hold(pick1, PRE_GRASP, False)
    hold(pick1, GRIP, True)
    move([pick1, pick1 + hover, place1 + hover, place1], durations["transport1"], True)
    hold(place1, SET_DOWN, True)
    hold(place1, POST_RELEASE, False)
    mid = (place1 + rest) / 2 + hover
    move([place1, place1 + hover, mid, place1 + hover, place1], durations["between"], False)
    hold(place1, PRE_GRASP, False)
    hold(place1, GRIP, True)
    move([place1, place1 + hover, place2 + hover, place2], durations["transport2"], True)
    hold(place2, SET_DOWN, True)
    hold(place2, POST_RELEASE, False)
    move([place2, place2 + hover, rest], durations["retreat"], False)
    if len(hand) > frame_count:
        raise SceneError("demonstration script does not fit in the episode length")
    hold(rest, frame_count - len(hand), False)
    return np.array(hand), np.array(held, dtype=bool)


def _runs(mask):
    runs, start = [], None
    for i, v in enumerate(mask):
        if v and start is None:
            start = i
        if not v and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(mask) - 1))
    return runs


def feature_projection(feature_dim, seed=0):
    """Fixed random map from the 5 raw cues to the feature space, shared by all episodes."""
    return make_rng(seed, "feature-projection").normal(0.0, 1.0, (5, feature_dim))


def _radius_px(cam, point, radius):
    pc = cam.R.T @ (np.asarray(point) - cam.t)
    return cam.fx * radius / max(pc[2], 1e-6)


def _scores(label, confidence):
    return {label: round(float(confidence), 6)}


def simulate_demo(
    objects,
    script_seed,
    noise: NoiseModel = NoiseModel(),
    cam: Optional[CameraModel] = None,
    table: Optional[TablePlane] = None,
    frame_count=DEFAULT_FRAME_COUNT,
    fps=DEFAULT_FPS,
    feature_dim=DEFAULT_FEATURE_DIM,
    feature_seed=0,
    vocabulary=DEFAULT_VOCABULARY,
    region=SPAWN_REGION,
):
    """Generate one demonstration; returns (episode, script, placed objects, stats)."""
    table = table or TablePlane()
    cam = cam or default_camera(table.height_m)
    objects = list(objects)
    if not objects or not any(o.graspable for o in objects):
        raise SceneError("a demonstration scene needs at least one graspable object")
    rng = make_rng(script_seed, "demo")
    pts, (place1, place2) = _sample_layout(rng, objects, cam, table, region)
    placed = [replace(ob, position=Point3(*p.tolist())) for ob, p in zip(objects, pts)]
    moved = placed[0]
    pick1 = pts[0]

    durations, outlier = _phase_durations(rng, frame_count)
    rest = np.array([region[1] + 0.05, region[3], table.height_m + 0.2])
    hand, held = _hand_path(durations, rest, pick1, place1, place2, frame_count)
    runs = _runs(held)

    # object centers over time: the moved object rides with the hand while held
    centers = np.repeat(np.array(pts)[None], frame_count, axis=0)
    cur = pick1.copy()
    for t in range(frame_count):
        if held[t]:
            cur = hand[t].copy()
        centers[t, 0] = cur
    if not np.allclose(cur, place2):
        raise SceneError("internal error: demonstration does not end at the final place")

    # conditioning features
    speed = np.zeros(frame_count)
    speed[1:] = np.linalg.norm(np.diff(hand, axis=0), axis=1) * fps
    d_moved = np.linalg.norm(hand - centers[:, 0], axis=1)
    if len(placed) > 1:
        d_other = np.linalg.norm(hand[:, None, :] - centers[:, 1:], axis=2).min(axis=1)
    else:
        d_other = np.ones(frame_count)
    frng = make_rng(script_seed, "features")
    flips = frng.random(frame_count) < noise.feature_flip_prob
    held_cue = np.where(flips, ~held, held).astype(float)
    raw = np.column_stack([d_moved / 0.3, d_other / 0.3, speed / 0.3, held_cue, np.ones(frame_count)])
    feats = raw @ feature_projection(feature_dim, feature_seed)
    feats = feats + frng.normal(0.0, 1.0, feats.shape) * noise.feature_noise

    drng = make_rng(script_seed, "detections")
    stats = GenerationStats(frames=frame_count)
    other_classes = [c for c in vocabulary if c not in ("arm", "hand")]
    frames = []
    for t in range(frame_count):
        dets = []
        for i, ob in enumerate(placed):
            c = centers[t, i]
            if i == 0 and held[t] and drng.random() < noise.held_occlusion_prob:
                continue
            stats.visible_object_frames += 1
            if drng.random() >= noise.detect_prob:
                continue
            foot = (c[0], c[1], c[2] - ob.height / 2)
            u, v = project(foot, cam)
            u += drng.normal() * noise.center_jitter_px
            v += drng.normal() * noise.center_jitter_px
            if drng.random() < noise.class_accuracy:
                label = ob.class_name
            elif noise.confusion_bias_class != ob.class_name:
                label = noise.confusion_bias_class
            else:
                label = str(drng.choice([k for k in other_classes if k != ob.class_name]))
            stats.detected += 1
            stats.correct_class += label == ob.class_name
            conf = 0.9 if noise.center_jitter_px == 0 else drng.uniform(0.45, 0.95)
            r = _radius_px(cam, foot, ob.footprint_radius)
            dets.append(Detection((u, v), (r, r), _scores(label, conf), round(float(conf), 6)))
        hand_px = project(hand[t], cam)
        if drng.random() < noise.arm_fp_prob:
            # forearm behind the hand, toward the demonstrator on the far side
            arm = hand[t] + np.array([drng.uniform(0.08, 0.18), drng.normal(0.0, 0.02), drng.uniform(0.03, 0.08)])
            arm_px = project(arm, cam)
            if drng.random() < noise.class_accuracy:
                label = "arm" if drng.random() < 0.7 else "hand"
            else:
                label = noise.confusion_bias_class
            conf = drng.uniform(0.3, 0.8)
            dets.append(Detection(arm_px, (30.0, 30.0), _scores(label, conf), round(float(conf), 6)))
            stats.arm_detections += 1
        n_fp = int(drng.poisson(noise.fp_rate_per_frame)) if noise.fp_rate_per_frame > 0 else 0
        for _ in range(n_fp):
            u, v = drng.uniform(0, 2 * cam.cx), drng.uniform(0, 2 * cam.cy)
            label = str(drng.choice(other_classes))
            conf = drng.uniform(0.1, 0.9)
            dets.append(Detection((u, v), (20.0, 20.0), _scores(label, conf), round(float(conf), 6)))
        stats.false_positives += n_fp
        frames.append(FrameRecord(
            index=t,
            time_s=t / fps,
            features=feats[t],
            detections=tuple(dets),
            gt_label=OBJECT_HELD if held[t] else HAND_FREE,
            gt_hand=hand_px,
        ))

    script = DemoScript(
        moved.object_id,
        Point3(*pick1.tolist()), Point3(*place1.tolist()),
        Point3(*place1.tolist()), Point3(*place2.tolist()),
        tuple(runs), outlier,
    )
    ep = Episode(
        id=f"{moved.object_id}-{int(script_seed)}",
        fps=fps,
        frame_count=frame_count,
        frames=frames,
        camera=cam,
        table_height_m=table.height_m,
        object_manifest=[o.to_info() for o in placed],
        feature_dim=feature_dim,
        table_bounds=table.bounds,
        truth=script.to_dict(),
    )
    return ep, script, placed, stats


def generate_demo(objects, script_seed, noise: NoiseModel = NoiseModel(), cam=None, table=None, **kw) -> Episode:
    """One synthetic demonstration; ``objects[0]`` is the object that gets moved."""
    return simulate_demo(objects, script_seed, noise, cam, table, **kw)[0]


def scene_for(catalog, moved_index, seed):
    """The moved catalog object first, followed by 2-4 distinct distractors."""
    rng = make_rng(seed, "scene")
    others = [o for i, o in enumerate(catalog) if i != moved_index]
    k = int(rng.integers(2, min(4, len(others)) + 1)) if len(others) >= 2 else len(others)
    picks = rng.choice(len(others), size=k, replace=False)
    return [catalog[moved_index]] + [others[int(i)] for i in sorted(picks)]


def gen_dataset(catalog=None, per_object=24, seed=0, noise: NoiseModel = NoiseModel(), cam=None, table=None, **kw):
    """``per_object`` demonstrations for every catalog object, ordered by object then index."""
    if per_object < 1:
        raise ValueError("per_object must be at least 1")
    catalog = list(catalog or default_catalog())
    episodes = []
    for i in range(len(catalog)):
        for j in range(per_object):
            ep_seed = int(make_rng(seed, "episode", i, j).integers(2**63))
            objs = scene_for(catalog, i, ep_seed)
            episodes.append(generate_demo(objs, ep_seed, noise, cam, table, **kw))
    return episodes


# --- execution -----------------------------------------------------------------


@dataclass
class ExecutionResult:
    grasp_outcomes: list = field(default_factory=list)
    final_object_positions: dict = field(default_factory=dict)
    imitation_success: bool = False
    events: list = field(default_factory=list)

    def to_dict(self):
        return {
            "grasp_outcomes": self.grasp_outcomes,
            "final_object_positions": {k: list(v) for k, v in sorted(self.final_object_positions.items())},
            "imitation_success": self.imitation_success,
            "events": self.events,
        }


def execute(
    scene,
    trajectory,
    chain: KinematicChain,
    goal=None,
    grasp_radius=0.03,
    place_radius=0.05,
    table: Optional[TablePlane] = None,
    seed=0,
):
    """Replay ``trajectory`` on the scene; ``goal`` is (object_id, demonstrated final center)."""
    table = table or TablePlane()
    rng = make_rng(seed, "execute")
    objs = {o.object_id: o for o in scene}
    pos = {o.object_id: np.array(o.position, dtype=float) for o in scene}
    attached, offset = None, None
    planned_held = None
    result = ExecutionResult()
    tool = None
    prev_tool = None

    def _r(v):
        return [round(float(x), 9) for x in v]

    for idx, step in enumerate(trajectory):
        if step.kind == "GRASP":
            if planned_held is not None:
                raise PlanObjectMismatch(f"step {idx}: grasp of {step.object_id} while {planned_held} is held")
            planned_held = step.object_id
            tool = tool_position(chain, step.waypoints[-1])
            best, best_d = None, math.inf
            for oid in sorted(pos):
                d = float(np.linalg.norm(pos[oid] - tool))
                if d < best_d:
                    best, best_d = oid, d
            if best is not None and objs[best].graspable and best_d <= grasp_radius:
                attached, offset = best, pos[best] - tool
                result.grasp_outcomes.append({"success": True, "position_error": best_d, "object": best})
                result.events.append({"step": idx, "event": "grasp", "object": best, "error": best_d})
            else:
                result.grasp_outcomes.append({"success": False, "position_error": best_d, "object": best})
                result.events.append({"step": idx, "event": "grasp_failed", "object": best, "error": best_d})
                if best is not None:
                    horiz = pos[best][:2] - tool[:2]
                    if np.linalg.norm(horiz) < objs[best].footprint_radius + 0.05:
                        if np.linalg.norm(horiz) < 1e-9 and prev_tool is not None:
                            horiz = tool[:2] - prev_tool[:2]
                        if np.linalg.norm(horiz) < 1e-9:
                            horiz = np.array([1.0, 0.0])
                        push = rng.uniform(0.02, 0.05)
                        pos[best][:2] += horiz / np.linalg.norm(horiz) * push
                        result.events.append({"step": idx, "event": "push", "object": best,
                                              "distance": push, "to": _r(pos[best])})
            continue
        if step.kind == "RELEASE":
            if planned_held is None or step.object_id != planned_held:
                raise PlanObjectMismatch(f"step {idx}: release of {step.object_id} but {planned_held} is held")
            planned_held = None
            if attached is not None:
                pos[attached][2] = table.height_m + objs[attached].height / 2
                result.events.append({"step": idx, "event": "release", "object": attached, "at": _r(pos[attached])})
                attached = None
            continue
        for q in step.waypoints:
            prev_tool, tool = tool, tool_position(chain, q)
            if attached is not None:
                pos[attached] = tool + offset

    result.final_object_positions = {k: Point3(*v.tolist()) for k, v in pos.items()}
    if goal is not None and result.grasp_outcomes:
        gid, gpos = goal
        if gid not in pos:
            raise PlanObjectMismatch(f"goal object {gid} is not in the scene")
        ok = all(g["success"] for g in result.grasp_outcomes)
        result.imitation_success = bool(ok and np.linalg.norm(pos[gid] - np.asarray(gpos)) <= place_radius)
    return result


def score_run(results):
    if not results:
        raise EmptyBatch("no execution results to score")
    attempts = [len(r.grasp_outcomes) for r in results]
    succ = [sum(g["success"] for g in r.grasp_outcomes) for r in results]

    def rate(k):
        tried = [r for r in results if len(r.grasp_outcomes) > k]
        if not tried:
            return float("nan")
        return sum(r.grasp_outcomes[k]["success"] for r in tried) / len(tried)

    total = sum(attempts)
    return {
        "grasp_rate": sum(succ) / total if total else float("nan"),
        "first_grasp_rate": rate(0),
        "second_grasp_rate": rate(1),
        "imitation_rate": sum(r.imitation_success for r in results) / len(results),
        "runs": len(results),
    }
