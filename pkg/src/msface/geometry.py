"""Pinhole camera model, head-direction math, and the frontal-view gate.

Conventions used throughout the package:

* Camera frame is right-handed with +z pointing out of the camera into the
  scene; pixel u grows right, v grows down.  Positions are millimeters.
* Head directions are stored camera-facing-normalized: a head looking
  straight into the camera has direction (0, 0, 1).  The flip between this
  canonical frame and the physical one (where the face-forward vector of a
  frontal head is (0, 0, -1)) happens once, at pose-file ingestion.
* Euler angles are intrinsic yaw-then-pitch in degrees, roll about the view
  direction.  (0, 0) maps to (0, 0, 1); positive yaw turns toward +x,
  positive pitch toward +y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

UNIT_NORM_TOL = 1e-6

# Flip between the canonical (frontal = +z) and physical (frontal = -z)
# frames; applied as F @ R @ F so rotations stay proper.
_FLIP = np.diag([1.0, 1.0, -1.0])


class InvalidDepthError(ValueError):
    """Raised when a zero (invalid) depth sample is used in geometry."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )


@dataclass(frozen=True)
class Vec3:
    """3-vector; millimeters for positions, unitless for directions."""

    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @staticmethod
    def from_array(a) -> "Vec3":
        return Vec3(float(a[0]), float(a[1]), float(a[2]))

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def normalized(self) -> "Vec3":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize a zero vector")
        return Vec3(self.x / n, self.y / n, self.z / n)

    def dot(self, other: "Vec3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z


@dataclass(frozen=True)
class HeadPose:
    """Estimated or ground-truth head state: center (mm) plus orientation."""

    center: Vec3
    direction: Vec3
    yaw_deg: float
    pitch_deg: float
    roll_deg: float

    @classmethod
    def from_angles(
        cls, center: Vec3, yaw_deg: float, pitch_deg: float, roll_deg: float = 0.0
    ) -> "HeadPose":
        return cls(center, euler_to_direction(yaw_deg, pitch_deg), yaw_deg, pitch_deg, roll_deg)

    @classmethod
    def from_direction(cls, center: Vec3, direction: Vec3, roll_deg: float = 0.0) -> "HeadPose":
        d = direction.normalized()
        yaw, pitch = direction_to_euler(d)
        return cls(center, d, yaw, pitch, roll_deg)


@dataclass(frozen=True)
class GateDecision:
    """Frontal-gate verdict for one pose."""

    offset_deg: float
    threshold_deg: float
    accepted: bool


def backproject(u: float, v: float, depth_mm: float, k: CameraIntrinsics) -> Vec3:
    """Lift pixel (u, v) at the given depth to camera coordinates (mm)."""
    if depth_mm <= 0:
        raise InvalidDepthError(f"depth must be positive, got {depth_mm}")
    if not (0 <= u < k.width and 0 <= v < k.height):
        raise ValueError(f"pixel ({u}, {v}) outside {k.width}x{k.height} image")
    z = float(depth_mm)
    return Vec3((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z)


def project(p: Vec3, k: CameraIntrinsics) -> tuple[float, float]:
    """Inverse of :func:`backproject`: camera-frame point to pixel coordinates."""
    if p.z <= 0:
        raise InvalidDepthError(f"cannot project point with z={p.z}")
    return (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy)


def offset_angle(direction: Vec3) -> float:
    """Angle in degrees between a unit direction and the camera axis (0, 0, 1).

    The input must already be unit-norm: deviations above 1e-6 are rejected
    rather than silently renormalized.
    """
    n = direction.norm()
    if abs(n - 1.0) > UNIT_NORM_TOL:
        raise ValueError(f"direction must be unit-norm, got |d|={n!r}")
    c = max(-1.0, min(1.0, direction.z))
    return math.degrees(math.acos(c))


def euler_to_direction(yaw_deg: float, pitch_deg: float) -> Vec3:
    """Unit direction for intrinsic yaw-then-pitch; (0, 0) maps to (0, 0, 1)."""
    if not (math.isfinite(yaw_deg) and math.isfinite(pitch_deg)):
        raise ValueError("angles must be finite")
    y = math.radians(yaw_deg)
    p = math.radians(pitch_deg)
    return Vec3(math.sin(y) * math.cos(p), math.sin(p), math.cos(y) * math.cos(p))


def direction_to_euler(direction: Vec3) -> tuple[float, float]:
    """Recover (yaw_deg, pitch_deg) from a unit direction."""
    d = direction.normalized()
    pitch = math.degrees(math.asin(max(-1.0, min(1.0, d.y))))
    yaw = math.degrees(math.atan2(d.x, d.z))
    return (yaw, pitch)


def gate(pose: HeadPose, threshold_deg: float) -> GateDecision:
    """Frontal-view gate: accept iff the offset angle is <= threshold.

    Equality accepts, so accepted counts are monotone non-decreasing in the
    threshold.
    """
    if not (0.0 < threshold_deg <= 90.0):
        raise ValueError(f"threshold must be in (0, 90] degrees, got {threshold_deg}")
    off = offset_angle(pose.direction)
    return GateDecision(offset_deg=off, threshold_deg=float(threshold_deg), accepted=off <= threshold_deg)


def rotation_from_angles(yaw_deg: float, pitch_deg: float, roll_deg: float = 0.0) -> np.ndarray:
    """Canonical-frame rotation with column 2 equal to euler_to_direction(yaw, pitch)."""
    y = math.radians(yaw_deg)
    p = math.radians(pitch_deg)
    r = math.radians(roll_deg)
    cy, sy = math.cos(y), math.sin(y)
    cp, sp = math.cos(p), math.sin(p)
    cr, sr = math.cos(r), math.sin(r)
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    # pitch uses the negative x-rotation so +pitch tips the direction toward +y
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, sp], [0.0, -sp, cp]])
    rz = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    return ry @ rx @ rz


def angles_from_rotation(rot: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`rotation_from_angles` for pitch in (-90, 90)."""
    d = rot[:, 2]
    yaw, pitch = direction_to_euler(Vec3.from_array(d))
    r_yp = rotation_from_angles(yaw, pitch, 0.0)
    m = r_yp.T @ rot
    roll = math.degrees(math.atan2(m[1, 0], m[0, 0]))
    return (yaw, pitch, roll)


def write_pose_file(path: str | Path, pose: HeadPose) -> None:
    """Write ground truth as three rotation rows plus one translation row (mm).

    The stored rotation is expressed in the physical camera frame (frontal
    face-forward = (0, 0, -1)); the canonical flip is applied on read.
    """
    r_phys = _FLIP @ rotation_from_angles(pose.yaw_deg, pose.pitch_deg, pose.roll_deg) @ _FLIP
    lines = []
    for row in r_phys:
        lines.append(" ".join(f"{v:.9f}" for v in row))
    c = pose.center
    lines.append(f"{c.x:.6f} {c.y:.6f} {c.z:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_pose_file(path: str | Path) -> HeadPose:
    """Read a rotation-plus-translation ground-truth file into a HeadPose."""
    values = []
    for line in Path(path).read_text().split("\n"):
        line = line.strip()
        if line:
            values.append([float(tok) for tok in line.split()])
    if len(values) != 4 or any(len(row) != 3 for row in values):
        raise ValueError(f"{path}: expected 4 rows of 3 values")
    r_phys = np.array(values[:3], dtype=np.float64)
    r_canon = _FLIP @ r_phys @ _FLIP
    yaw, pitch, roll = angles_from_rotation(r_canon)
    center = Vec3(*values[3])
    return HeadPose(
        center=center,
        direction=euler_to_direction(yaw, pitch),
        yaw_deg=yaw,
        pitch_deg=pitch,
        roll_deg=roll,
    )
