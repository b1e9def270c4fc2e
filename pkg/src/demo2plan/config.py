"""Pipeline configuration: a TOML file with one table per stage.

Every key is optional; omitted keys take the defaults below. Unknown
sections or keys, wrong types and out-of-range values raise ``ConfigError``
with the line of the offending key when it can be located.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import tomli

from .errors import ConfigError, IoError
from .fusion import VoteConfig
from .geometry import CameraModel, TablePlane
from .kinematics import PRESETS, IkSettings, KinematicChain
from .segmenter.losses import LossConfig
from .segmenter.schedule import cosine_schedule
from .segmenter.training import TrainHyper
from .sim import NoiseModel, SceneObject, default_catalog


@dataclass(frozen=True)
class CameraSection:
    position: tuple = (0.0, 0.0, 1.25)
    pitch_deg: float = 60.0
    yaw_deg: float = 0.0
    fx: float = 500.0
    fy: float = 500.0
    cx: float = 320.0
    cy: float = 320.0


@dataclass(frozen=True)
class DatasetSection:
    per_object: int = 24
    frame_count: int = 440
    fps: float = 22.0
    feature_dim: int = 64
    train_fraction: float = 0.8


@dataclass(frozen=True)
class ScheduleSection:
    total_steps: int = 1000
    scale: float = 1.0


@dataclass(frozen=True)
class TrainSection:
    lr: float = 1e-3
    epochs: int = 5
    momentum: float = 0.9
    layers: int = 8
    width: int = 32
    clip_norm: float = 0.0


@dataclass(frozen=True)
class PlanningSection:
    d_min: float = 0.05
    hover: float = 0.10
    cart_step: float = 0.02


@dataclass(frozen=True)
class ExecuteSection:
    grasp_radius: float = 0.03
    place_radius: float = 0.05
    position_tolerance: float = 0.05


@dataclass(frozen=True)
class Seeds:
    dataset: int = 0
    split: int = 0
    train: int = 0
    infer: int = 1
    execute: int = 0


@dataclass(frozen=True)
class PipelineConfig:
    camera: CameraSection = CameraSection()
    table: TablePlane = TablePlane()
    chain: object = "nicol-like-8dof"  # preset name or a KinematicChain
    vote: VoteConfig = VoteConfig()
    noise: NoiseModel = NoiseModel()
    loss: LossConfig = LossConfig()
    schedule: ScheduleSection = ScheduleSection()
    train: TrainSection = TrainSection()
    ik: IkSettings = IkSettings()
    planning: PlanningSection = PlanningSection()
    execute: ExecuteSection = ExecuteSection()
    dataset: DatasetSection = DatasetSection()
    seeds: Seeds = Seeds()
    catalog: tuple = field(default_factory=lambda: tuple(default_catalog()))
    source: Optional[str] = None

    def camera_model(self) -> CameraModel:
        c = self.camera
        return CameraModel.looking_at(c.position, c.pitch_deg, c.yaw_deg, c.fx, c.fy, c.cx, c.cy)

    def kinematic_chain(self) -> KinematicChain:
        return PRESETS[self.chain]() if isinstance(self.chain, str) else self.chain

    def noise_schedule(self):
        return cosine_schedule(self.schedule.total_steps, self.schedule.scale)

    def train_hyper(self, **overrides):
        t = self.train
        h = TrainHyper(t.lr, t.epochs, self.seeds.train, t.momentum, t.layers, t.width, t.clip_norm)
        return replace(h, **overrides)


# section name -> dataclass; [noise] also accepts a `preset` key
_SECTIONS = {
    "camera": CameraSection,
    "table": TablePlane,
    "vote": VoteConfig,
    "noise": NoiseModel,
    "loss": LossConfig,
    "schedule": ScheduleSection,
    "train": TrainSection,
    "ik": IkSettings,
    "planning": PlanningSection,
    "execute": ExecuteSection,
    "dataset": DatasetSection,
    "seeds": Seeds,
}
_NOISE_PRESETS = {"paper": NoiseModel, "noiseless": NoiseModel.noiseless}
_CATALOG_KEYS = {"id": str, "class": str, "radius": float, "height": float, "graspable": bool}


def _locate(text, section, key=None):
    """1-based line of ``key`` inside ``[section]`` (or of the section header)."""
    if not text:
        return None
    current = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[\[?\s*([A-Za-z0-9_.-]+)\s*\]\]?", line)
        if m:
            current = m.group(1)
            if key is None and section is not None and (current == section or current.startswith(section + ".")):
                return n
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", line):
            return n
    return None


def _err(text, section, key, msg):
    line = _locate(text, section, key) or _locate(text, section)
    where = f"[{section}]" + (f".{key}" if key else "")
    prefix = f"line {line}: " if line else ""
    return ConfigError(f"{prefix}{where}: {msg}")


def _coerce(value, default, text, section, key):
    """Check ``value`` against the type of ``default``."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise _err(text, section, key, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise _err(text, section, key, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _err(text, section, key, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise _err(text, section, key, "value must be finite")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise _err(text, section, key, f"expected a string, got {value!r}")
        return value
    if isinstance(default, (tuple, frozenset)):
        if not isinstance(value, list):
            raise _err(text, section, key, f"expected an array, got {value!r}")
        if isinstance(default, tuple) and default and len(value) != len(default):
            raise _err(text, section, key, f"expected {len(default)} entries, got {len(value)}")
        inner = next(iter(default)) if default else None
        return type(default)(_coerce(v, inner, text, section, key) if inner is not None else v for v in value)
    return value


def _build_section(name, cls, table, text):
    if not isinstance(table, dict):
        raise _err(text, name, None, "expected a table")
    table = dict(table)
    base = cls()
    if name == "noise" and "preset" in table:
        preset = table.pop("preset")
        if preset not in _NOISE_PRESETS:
            raise _err(text, name, "preset", f"unknown noise preset {preset!r} (known: {sorted(_NOISE_PRESETS)})")
        base = _NOISE_PRESETS[preset]()
    known = {f.name: getattr(base, f.name) for f in fields(cls)}
    values = {}
    for key, value in table.items():
        if key not in known:
            raise _err(text, name, key, f"unknown key (known: {', '.join(sorted(known))})")
        values[key] = _coerce(value, known[key], text, name, key)
    try:
        return replace(base, **values)
    except (ValueError, TypeError) as exc:
        key = next(iter(values), None) if len(values) == 1 else None
        raise _err(text, name, key, str(exc)) from exc
    except ConfigError:
        raise
    except Exception as exc:  # SchemaError from geometry types
        raise _err(text, name, None, str(exc)) from exc


def _build_catalog(entries, text):
    if not isinstance(entries, list) or not entries:
        raise _err(text, "catalog", None, "expected a non-empty array of tables")
    out = []
    for i, e in enumerate(entries):
        missing = set(_CATALOG_KEYS) - set(e)
        extra = set(e) - set(_CATALOG_KEYS)
        if missing or extra:
            raise _err(text, "catalog", None, f"entry {i}: missing {sorted(missing)}, unknown {sorted(extra)}")
        try:
            out.append(SceneObject(
                str(e["id"]), str(e["class"]), float(e["radius"]), float(e["height"]), bool(e["graspable"])
            ))
        except Exception as exc:
            raise _err(text, "catalog", None, f"entry {i}: {exc}") from exc
    if len({o.object_id for o in out}) != len(out):
        raise _err(text, "catalog", None, "object ids must be unique")
    return tuple(out)


def _build_chain(value, text):
    """``chain = "name"``, ``[chain] preset = "name"`` or an explicit joint list."""
    if isinstance(value, dict):
        if "joints" in value:
            unknown = set(value) - {"joints", "tool_offset", "home", "name"}
            if unknown:
                raise _err(text, "chain", sorted(unknown)[0], "unknown key (known: home, joints, name, tool_offset)")
            try:
                return KinematicChain.from_dict(value)
            except Exception as exc:
                raise _err(text, "chain", None, str(exc)) from exc
        unknown = set(value) - {"preset"}
        if unknown:
            raise _err(text, "chain", sorted(unknown)[0], "unknown key (known: preset, or joints/tool_offset/home/name)")
        value = value.get("preset", PipelineConfig.chain)
    if value not in PRESETS:
        line = _locate(text, None, "chain") or _locate(text, "chain", "preset")
        prefix = f"line {line}: " if line else ""
        raise ConfigError(f"{prefix}unknown chain preset {value!r} (known: {sorted(PRESETS)})")
    return value


def parse_config(text, source=None) -> PipelineConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _build_section(key, _SECTIONS[key], value, text)
        elif key == "catalog":
            kwargs["catalog"] = _build_catalog(value, text)
        elif key == "chain":
            kwargs["chain"] = _build_chain(value, text)
        else:
            line = _locate(text, key)
            prefix = f"line {line}: " if line else ""
            raise ConfigError(f"{prefix}unknown section [{key}]")
    cfg = PipelineConfig(source=source, **kwargs)
    _cross_check(cfg, text)
    return cfg


def _cross_check(cfg: PipelineConfig, text):
    ds = cfg.dataset
    if ds.per_object < 1:
        raise _err(text, "dataset", "per_object", "must be at least 1")
    if ds.frame_count < 2 or ds.feature_dim < 1 or ds.fps <= 0:
        raise _err(text, "dataset", None, "frame_count >= 2, feature_dim >= 1 and fps > 0 are required")
    if not 0.0 < ds.train_fraction < 1.0:
        raise _err(text, "dataset", "train_fraction", "must lie strictly between 0 and 1")
    if cfg.schedule.total_steps < 1 or cfg.schedule.scale <= 0:
        raise _err(text, "schedule", None, "total_steps >= 1 and scale > 0 are required")
    t = cfg.train
    if t.epochs < 0 or t.lr <= 0 or t.layers < 1 or t.width < 1 or not 0 <= t.momentum < 1:
        raise _err(text, "train", None, "need epochs >= 0, lr > 0, layers >= 1, width >= 1, 0 <= momentum < 1")
    if min(cfg.planning.hover, cfg.planning.cart_step) <= 0 or cfg.planning.d_min < 0:
        raise _err(text, "planning", None, "hover and cart_step must be positive, d_min nonnegative")
    e = cfg.execute
    if min(e.grasp_radius, e.place_radius, e.position_tolerance) <= 0:
        raise _err(text, "execute", None, "radii and tolerances must be positive")
    if not any(o.graspable for o in cfg.catalog):
        raise _err(text, "catalog", None, "at least one object must be graspable")
    try:
        cfg.camera_model()
    except Exception as exc:
        raise _err(text, "camera", None, str(exc)) from exc


def load_config(path=None) -> PipelineConfig:
    """Read and validate a config file; ``None`` gives the built-in defaults."""
    if path is None:
        return PipelineConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))
