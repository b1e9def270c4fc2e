"""Pinhole camera and table-plane backprojection.

World coordinates are the robot base frame (meters). Camera coordinates
follow the usual vision convention: +x right, +y down, +z along the optical
axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import BehindCamera, IntersectionBehindCamera, NoIntersection, SchemaError


class Pixel(NamedTuple):
    u: float
    v: float


class Point3(NamedTuple):
    x: float
    y: float
    z: float


def _as_matrix(rows):
    return tuple(tuple(float(v) for v in row) for row in rows)


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: tuple = field(default=((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)))
    translation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_matrix(self.rotation))
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))
        if not (self.fx > 0 and self.fy > 0):
            raise SchemaError("focal lengths must be positive")
        R = self.R
        if R.shape != (3, 3) or len(self.translation) != 3:
            raise SchemaError("camera pose must be a 3x3 rotation and a 3-vector")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or np.linalg.det(R) < 0:
            raise SchemaError("camera rotation is not a proper orthonormal matrix")

    @property
    def R(self):
        return np.array(self.rotation)

    @property
    def t(self):
        return np.array(self.translation)

    @classmethod
    def looking_at(cls, position, pitch_deg, yaw_deg=0.0, fx=500.0, fy=500.0, cx=320.0, cy=320.0):
        """Camera at ``position`` looking along heading ``yaw_deg``, tilted ``pitch_deg`` below horizontal."""
        p, y = math.radians(pitch_deg), math.radians(yaw_deg)
        forward = np.array([math.cos(p) * math.cos(y), math.cos(p) * math.sin(y), -math.sin(p)])
        right = np.array([math.sin(y), -math.cos(y), 0.0])
        down = np.cross(forward, right)
        R = np.column_stack([right, down, forward])
        return cls(fx, fy, cx, cy, R.tolist(), tuple(position))

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "rotation": [list(r) for r in self.rotation],
            "translation": list(self.translation),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["rotation"], d["translation"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad camera block: {exc}") from exc


@dataclass(frozen=True)
class TablePlane:
    height_m: float = 0.80
    bounds: tuple = (0.2, 0.9, -0.5, 0.5)

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))
        x0, x1, y0, y1 = self.bounds
        if not (x0 < x1 and y0 < y1):
            raise SchemaError("table bounds must satisfy x_min < x_max and y_min < y_max")


def default_camera(table_height=0.80):
    """Head camera 0.45 m above the table at the robot origin, pitched 60 degrees down toward +x."""
    return CameraModel.looking_at((0.0, 0.0, table_height + 0.45), pitch_deg=60.0)


def project(p, cam: CameraModel) -> Pixel:
    pc = cam.R.T @ (np.asarray(p, dtype=float) - cam.t)
    if pc[2] <= 0:
        raise BehindCamera(f"point {tuple(p)} has depth {pc[2]:.4g} in the camera frame")
    return Pixel(float(cam.fx * pc[0] / pc[2] + cam.cx), float(cam.fy * pc[1] / pc[2] + cam.cy))


def pixel_ray(px, cam: CameraModel):
    """Return (origin, direction) of the viewing ray in world coordinates; direction is unnormalized."""
    u, v = px
    d_cam = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
    return cam.t, cam.R @ d_cam


def backproject(px, cam: CameraModel, table: TablePlane) -> Point3:
    o, d = pixel_ray(px, cam)
    if abs(d[2]) < 1e-12:
        raise NoIntersection(f"ray through {tuple(px)} is parallel to the table plane")
    lam = (table.height_m - o[2]) / d[2]
    if lam <= 0:
        raise IntersectionBehindCamera(f"ray through {tuple(px)} meets the table behind the camera")
    hit = o + lam * d
    # set z directly so it equals the plane height bit-for-bit
    return Point3(float(hit[0]), float(hit[1]), float(table.height_m))


def in_bounds(p, table: TablePlane, tol=0.0) -> bool:
    x0, x1, y0, y1 = table.bounds
    return (
        x0 - tol <= p[0] <= x1 + tol
        and y0 - tol <= p[1] <= y1 + tol
        and abs(p[2] - table.height_m) <= tol
    )
