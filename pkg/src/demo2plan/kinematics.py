"""Serial-chain forward kinematics, position Jacobian and damped least-squares IK."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import PlanInfeasible, SchemaError, ShapeError, UnreachableTarget
from .geometry import Point3

MOTION_KINDS = ("APPROACH", "DESCEND", "LIFT", "TRANSPORT", "LOWER", "RETREAT")
GRIPPER_KINDS = ("GRASP", "RELEASE")


@dataclass(frozen=True)
class Joint:
    axis: tuple
    origin_offset: tuple
    limits: tuple = (-math.pi, math.pi)

    def __post_init__(self):
        object.__setattr__(self, "axis", tuple(float(a) for a in self.axis))
        object.__setattr__(self, "origin_offset", tuple(float(a) for a in self.origin_offset))
        object.__setattr__(self, "limits", tuple(float(a) for a in self.limits))
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-9:
            raise SchemaError(f"joint axis {self.axis} is not unit length")
        if not self.limits[0] < self.limits[1]:
            raise SchemaError(f"joint limits {self.limits} are empty")


@dataclass(frozen=True)
class KinematicChain:
    joints: tuple
    base_rotation: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    base_translation: tuple = (0.0, 0.0, 0.0)
    tool_offset: tuple = (0.0, 0.0, 0.0)
    home: Optional[tuple] = None
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        if self.home is not None:
            object.__setattr__(self, "home", tuple(float(v) for v in self.home))
            if len(self.home) != self.dof:
                raise SchemaError("home configuration length does not match the joint count")

    @property
    def dof(self):
        return len(self.joints)

    @property
    def lower(self):
        return np.array([j.limits[0] for j in self.joints])

    @property
    def upper(self):
        return np.array([j.limits[1] for j in self.joints])

    def clamp(self, q):
        return np.clip(q, self.lower, self.upper)

    def home_q(self):
        if self.home is not None:
            return np.array(self.home)
        return self.clamp(np.zeros(self.dof))

    def to_dict(self):
        return {
            "name": self.name,
            "joints": [
                {"axis": list(j.axis), "offset": list(j.origin_offset), "limits": list(j.limits)}
                for j in self.joints
            ],
            "tool_offset": list(self.tool_offset),
            "home": None if self.home is None else list(self.home),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            joints = [Joint(j["axis"], j["offset"], j.get("limits", (-math.pi, math.pi))) for j in d["joints"]]
            return cls(
                joints,
                tool_offset=tuple(d.get("tool_offset", (0.0, 0.0, 0.0))),
                home=d.get("home"),
                name=d.get("name", "custom"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad chain description: {exc}") from exc


def rotation_about(axis, angle):
    """Rodrigues rotation matrix."""
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def planar_two_link(l1=1.0, l2=1.0):
    """Two revolute z-joints with links along x; used as an analytic test chain."""
    return KinematicChain(
        (Joint((0, 0, 1), (0, 0, 0)), Joint((0, 0, 1), (l1, 0, 0))),
        tool_offset=(l2, 0.0, 0.0),
        name="planar-2r",
    )


def nicol_like_8dof():
    """Eight revolute joints alternating z/y axes, 1.1 m reach from a 0.85 m shoulder.

    The layout is illustrative. The home pose bends the arm forward and down
    over the table, away from the stretched-out singularity.
    """
    lim = (-2.6, 2.6)
    joints = (
        Joint((0, 0, 1), (0.0, 0.0, 0.85), (-2.9, 2.9)),
        Joint((0, 1, 0), (0.0, 0.0, 0.0), lim),
        Joint((0, 0, 1), (0.25, 0.0, 0.0), lim),
        Joint((0, 1, 0), (0.0, 0.0, 0.0), lim),
        Joint((0, 0, 1), (0.25, 0.0, 0.0), lim),
        Joint((0, 1, 0), (0.0, 0.0, 0.0), lim),
        Joint((0, 0, 1), (0.25, 0.0, 0.0), lim),
        Joint((0, 1, 0), (0.2, 0.0, 0.0), lim),
    )
    home = (0.0, -1.86, 0.0, 0.81, 0.0, 1.31, 0.0, 1.57)
    return KinematicChain(joints, tool_offset=(0.15, 0.0, 0.0), home=home, name="nicol-like-8dof")


PRESETS = {"nicol-like-8dof": nicol_like_8dof, "planar-2r": planar_two_link}


def _check_q(chain, q):
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (chain.dof,):
        raise ShapeError(f"configuration has {q.size} values, chain has {chain.dof} joints")
    return q


def joint_frames(chain: KinematicChain, q):
    """World-frame joint origins, joint axes and the 4x4 tool transform."""
    q = _check_q(chain, q)
    R = np.array(chain.base_rotation, dtype=np.float64)
    p = np.array(chain.base_translation, dtype=np.float64)
    origins, axes = [], []
    for j, qi in zip(chain.joints, q):
        p = p + R @ np.array(j.origin_offset)
        axis = np.array(j.axis)
        origins.append(p.copy())
        axes.append(R @ axis)
        R = R @ rotation_about(axis, qi)
    p = p + R @ np.array(chain.tool_offset)
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = p
    return origins, axes, T


def fk(chain: KinematicChain, q):
    """Tool position and full tool transform at ``q``."""
    _, _, T = joint_frames(chain, q)
    return Point3(*T[:3, 3].tolist()), T


def tool_position(chain, q):
    return joint_frames(chain, q)[2][:3, 3]


def jacobian(chain: KinematicChain, q):
    origins, axes, T = joint_frames(chain, q)
    tool = T[:3, 3]
    J = np.zeros((3, chain.dof))
    for i, (o, a) in enumerate(zip(origins, axes)):
        J[:, i] = np.cross(a, tool - o)
    return J


@dataclass(frozen=True)
class IkSettings:
    damping: float = 0.05
    tol_pos: float = 1e-3
    max_iters: int = 200
    step_clip: float = 0.2
    stall_window: int = 20
    stall_rel: float = 1e-6

    def __post_init__(self):
        if min(self.damping, self.tol_pos, self.max_iters, self.step_clip) <= 0:
            raise ValueError("IK settings must be positive")


class IkInfo(NamedTuple):
    q: np.ndarray
    iterations: int
    residual: float


def solve_ik_info(chain: KinematicChain, target, seed_q, s: IkSettings = IkSettings()) -> IkInfo:
    target = np.asarray(target, dtype=np.float64)
    q = chain.clamp(_check_q(chain, seed_q).copy())
    e = target - tool_position(chain, q)
    err = float(np.linalg.norm(e))
    if err < s.tol_pos:
        return IkInfo(q, 0, err)
    history = [err]
    best_q, best = q, err
    lam2 = s.damping ** 2
    for it in range(1, s.max_iters + 1):
        J = jacobian(chain, q)
        dq = J.T @ np.linalg.solve(J @ J.T + lam2 * np.eye(3), e)
        q = chain.clamp(q + np.clip(dq, -s.step_clip, s.step_clip))
        e = target - tool_position(chain, q)
        err = float(np.linalg.norm(e))
        history.append(err)
        if err < best:
            best_q, best = q, err
        if err < s.tol_pos:
            return IkInfo(q, it, err)
    past = history[-s.stall_window - 1]
    stalled = (past - history[-1]) < s.stall_rel * past
    raise UnreachableTarget(best, stalled=stalled)


def solve_ik(chain, target, seed_q, s: IkSettings = IkSettings()):
    """Joint configuration placing the tool within ``s.tol_pos`` of ``target``."""
    return solve_ik_info(chain, target, seed_q, s).q


@dataclass
class TrajectoryStep:
    kind: str
    waypoints: list = field(default_factory=list)
    object_id: Optional[str] = None
    target: Optional[Point3] = None


def interpolate(a, b, cart_step):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    dist = float(np.linalg.norm(b - a))
    n = max(1, int(math.ceil(dist / cart_step - 1e-9)))
    return [a + (b - a) * (k / n) for k in range(1, n + 1)]


def plan_to_trajectory(chain, plan_steps, start_q, s: IkSettings = IkSettings(), cart_step=0.02):
    """Solve every plan step into joint-space waypoints, warm-starting each IK call."""
    q = chain.clamp(_check_q(chain, start_q).copy())
    pos = tool_position(chain, q)
    out = []
    for idx, step in enumerate(plan_steps):
        if step.kind in GRIPPER_KINDS:
            out.append(TrajectoryStep(step.kind, [q.copy()], step.object_id, step.target))
            continue
        if step.kind not in MOTION_KINDS:
            raise ValueError(f"unknown plan step kind {step.kind!r}")
        wps = []
        for p in interpolate(pos, step.target, cart_step):
            try:
                q = solve_ik(chain, p, q, s)
            except UnreachableTarget as exc:
                raise PlanInfeasible(idx, step.kind, exc.residual) from exc
            wps.append(q.copy())
        pos = np.asarray(step.target, dtype=float)
        out.append(TrajectoryStep(step.kind, wps, step.object_id, step.target))
    return out
