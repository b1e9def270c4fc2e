"""Episode data model, seeded randomness and JSONL serialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import EmptyDataset, IoError, ParseError, SchemaError
from .geometry import CameraModel, Pixel, Point3, TablePlane

HAND_FREE = 0
OBJECT_HELD = 1
DEFAULT_NUM_CLASSES = 2

DEFAULT_FPS = 22.0
DEFAULT_FRAME_COUNT = 440
DEFAULT_FEATURE_DIM = 64

# Detector prompt vocabulary; the first entries name the catalog objects.
DEFAULT_VOCABULARY = (
    "metal can",
    "cardboard box",
    "red plate",
    "mug",
    "bottle",
    "banana",
    "apple",
    "sponge",
    "cup",
    "book",
    "phone",
    "toy block",
    "plastic bag",
    "arm",
    "hand",
)


def make_rng(seed, *keys) -> np.random.Generator:
    """Independent generator for ``seed`` and a path of integer/str sub-keys."""
    spawn = tuple(_key_to_int(k) for k in keys)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=spawn)))


def _key_to_int(k):
    if isinstance(k, (int, np.integer)):
        return int(k)
    # stable across processes, unlike hash()
    return int.from_bytes(str(k).encode("utf-8")[:16].ljust(16, b"\0"), "little") % (2**63)


@dataclass(frozen=True)
class Detection:
    center: Pixel
    half_extent: tuple
    class_scores: dict
    confidence: float

    def __post_init__(self):
        object.__setattr__(self, "center", Pixel(float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "half_extent", (float(self.half_extent[0]), float(self.half_extent[1])))
        if not self.class_scores:
            raise SchemaError("detection has no class scores")
        if not all(0.0 <= s <= 1.0 for s in self.class_scores.values()):
            raise SchemaError("class scores must lie in [0, 1]")
        if not 0.0 <= self.confidence <= 1.0:
            raise SchemaError("detection confidence must lie in [0, 1]")

    @property
    def label(self) -> str:
        # ties resolve to the lexicographically first name
        return min(self.class_scores, key=lambda k: (-self.class_scores[k], k))


@dataclass(frozen=True, eq=False)
class FrameRecord:
    index: int
    time_s: float
    features: np.ndarray
    detections: tuple = ()
    gt_label: Optional[int] = None
    gt_hand: Optional[Pixel] = None

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "detections", tuple(self.detections))
        if self.gt_hand is not None:
            object.__setattr__(self, "gt_hand", Pixel(float(self.gt_hand[0]), float(self.gt_hand[1])))

    def __eq__(self, other):
        if not isinstance(other, FrameRecord):
            return NotImplemented
        return (
            self.index == other.index
            and self.time_s == other.time_s
            and np.array_equal(self.features, other.features)
            and self.detections == other.detections
            and self.gt_label == other.gt_label
            and self.gt_hand == other.gt_hand
        )


@dataclass(frozen=True)
class ObjectInfo:
    id: str
    class_name: str
    graspable: bool
    position: Optional[Point3] = None
    radius: Optional[float] = None
    height: Optional[float] = None


@dataclass(frozen=True)
class Episode:
    id: str
    fps: float
    frame_count: int
    frames: tuple
    camera: CameraModel
    table_height_m: float
    object_manifest: tuple
    feature_dim: int = DEFAULT_FEATURE_DIM
    num_classes: int = DEFAULT_NUM_CLASSES
    table_bounds: tuple = TablePlane().bounds
    truth: Optional[dict] = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "object_manifest", tuple(self.object_manifest))
        object.__setattr__(self, "table_bounds", tuple(float(b) for b in self.table_bounds))
        self.validate()

    def validate(self):
        if self.num_classes < 2:
            raise SchemaError("need at least two action classes")
        if len(self.frames) != self.frame_count:
            raise SchemaError(
                f"header declares {self.frame_count} frames but {len(self.frames)} are present"
            )
        last = -1
        for fr in self.frames:
            if fr.index <= last:
                raise SchemaError(f"frame index {fr.index} is not strictly increasing")
            last = fr.index
            if fr.features.shape != (self.feature_dim,):
                raise SchemaError(
                    f"frame {fr.index}: feature length {fr.features.size} != {self.feature_dim}"
                )
            if not np.all(np.isfinite(fr.features)):
                raise SchemaError(f"frame {fr.index}: non-finite features")
            if fr.gt_label is not None and not 0 <= fr.gt_label < self.num_classes:
                raise SchemaError(f"frame {fr.index}: label {fr.gt_label} outside [0, {self.num_classes})")

    @property
    def table(self) -> TablePlane:
        return TablePlane(self.table_height_m, self.table_bounds)

    def feature_matrix(self) -> np.ndarray:
        if not self.frames:
            return np.zeros((0, self.feature_dim))
        return np.stack([fr.features for fr in self.frames])

    def labels(self) -> Optional[np.ndarray]:
        if any(fr.gt_label is None for fr in self.frames):
            return None
        return np.array([fr.gt_label for fr in self.frames], dtype=np.int64)

    def hand_at(self, frame) -> Optional[Pixel]:
        if 0 <= frame < self.frame_count:
            return self.frames[frame].gt_hand
        return None


# --- JSONL ---------------------------------------------------------------


def _header_dict(ep: Episode):
    objects = []
    for ob in ep.object_manifest:
        d = {"id": ob.id, "class": ob.class_name, "graspable": bool(ob.graspable)}
        if ob.position is not None:
            d["position"] = list(ob.position)
        if ob.radius is not None:
            d["radius"] = ob.radius
        if ob.height is not None:
            d["height"] = ob.height
        objects.append(d)
    h = {
        "id": ep.id,
        "fps": ep.fps,
        "frame_count": ep.frame_count,
        "feature_dim": ep.feature_dim,
        "num_classes": ep.num_classes,
        "camera": ep.camera.to_dict(),
        "table_height_m": ep.table_height_m,
        "table_bounds": list(ep.table_bounds),
        "objects": objects,
    }
    if ep.truth is not None:
        h["truth"] = ep.truth
    return h


def _frame_dict(fr: FrameRecord):
    return {
        "index": fr.index,
        "time_s": fr.time_s,
        "features": fr.features.tolist(),
        "detections": [
            {
                "center": list(d.center),
                "half_extent": list(d.half_extent),
                "scores": dict(d.class_scores),
                "confidence": d.confidence,
            }
            for d in fr.detections
        ],
        "gt_label": fr.gt_label,
        "gt_hand": None if fr.gt_hand is None else list(fr.gt_hand),
    }


def episode_to_jsonl(ep: Episode) -> str:
    # json writes floats with repr(), which round-trips float64 exactly
    lines = [json.dumps(_header_dict(ep), ensure_ascii=False, allow_nan=False)]
    lines.extend(json.dumps(_frame_dict(fr), ensure_ascii=False, allow_nan=False) for fr in ep.frames)
    return "\n".join(lines) + "\n"


def write_episode(ep: Episode, path) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(episode_to_jsonl(ep))
    except OSError as exc:
        raise IoError(f"cannot write episode to {path}: {exc}") from exc


def _parse_frame(d, lineno, feature_dim):
    try:
        if len(d["features"]) != feature_dim:
            raise SchemaError(f"feature length {len(d['features'])} != {feature_dim}")
        dets = tuple(
            Detection(
                center=tuple(x["center"]),
                half_extent=tuple(x["half_extent"]),
                class_scores=dict(x["scores"]),
                confidence=float(x["confidence"]),
            )
            for x in d.get("detections", [])
        )
        hand = d.get("gt_hand")
        return FrameRecord(
            index=int(d["index"]),
            time_s=float(d["time_s"]),
            features=d["features"],
            detections=dets,
            gt_label=None if d.get("gt_label") is None else int(d["gt_label"]),
            gt_hand=None if hand is None else tuple(hand),
        )
    except SchemaError as exc:
        raise SchemaError(f"line {lineno}: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed frame record ({exc!r})", lineno) from exc


def _parse_header(h):
    try:
        objects = tuple(
            ObjectInfo(
                id=str(o["id"]),
                class_name=str(o["class"]),
                graspable=bool(o["graspable"]),
                position=None if o.get("position") is None else Point3(*map(float, o["position"])),
                radius=o.get("radius"),
                height=o.get("height"),
            )
            for o in h["objects"]
        )
        return dict(
            id=str(h["id"]),
            fps=float(h["fps"]),
            frame_count=int(h["frame_count"]),
            feature_dim=int(h["feature_dim"]),
            num_classes=int(h.get("num_classes", DEFAULT_NUM_CLASSES)),
            camera=CameraModel.from_dict(h["camera"]),
            table_height_m=float(h["table_height_m"]),
            table_bounds=tuple(h.get("table_bounds", TablePlane().bounds)),
            object_manifest=objects,
            truth=h.get("truth"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed header ({exc!r})", 1) from exc


def read_episode(path) -> Episode:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read episode {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty file", 1)
    parsed = []
    for lineno, line in enumerate(lines, start=1):
        try:
            parsed.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", lineno) from exc
        if not isinstance(parsed[-1], dict):
            raise ParseError("expected a JSON object", lineno)
    header = _parse_header(parsed[0])
    frames = [_parse_frame(d, i, header["feature_dim"]) for i, d in enumerate(parsed[1:], start=2)]
    return Episode(frames=frames, **header)


def split_dataset(episodes, train_fraction, seed):
    """Seeded random partition into (train, test) with ``round(n * f)`` training items."""
    if not episodes:
        raise EmptyDataset("cannot split an empty dataset")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n = len(episodes)
    n_train = int(math.floor(n * train_fraction + 0.5))
    order = make_rng(seed, "split").permutation(n)
    train_idx = sorted(order[:n_train].tolist())
    test_idx = sorted(order[n_train:].tolist())
    return [episodes[i] for i in train_idx], [episodes[i] for i in test_idx]
