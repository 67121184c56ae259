"""Deterministic synthetic multi-spectral sequences with exact ground truth.

The head is an ellipsoid with an ellipsoidal nose; depth frames come from
per-pixel ray intersections over a background plane, so the returned pose
is analytic.  Gray frames carry a per-subject low-frequency texture whose
width compresses with yaw (rotated faces are genuinely harder for frontal
detectors and recognizers); IR frames paint a forehead region at the
requested temperature over a room-temperature background.  Everything is a
pure function of (spec, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .frames import DepthFrame, GrayFrame, IrFrame, write_pgm
from .geometry import (
    CameraIntrinsics,
    HeadPose,
    Vec3,
    project,
    rotation_from_angles,
    write_pose_file,
)
from .pipeline import ManifestRow, StreamManifest, write_intrinsics, write_manifest
from .recognize import resize_bilinear
from .thermal import ThermalCalibration, forehead_roi, temp_to_intensity

# desk-scale default camera: quarter-VGA-ish with a head at ~0.9 m
DESK_INTRINSICS = CameraIntrinsics(fx=160.0, fy=160.0, cx=80.0, cy=60.0, width=160, height=120)

DEFAULT_HEAD_CENTER = Vec3(0.0, 0.0, 900.0)
HEAD_BOX_MM = 300.0  # metric face-box side used for projections

_FLIP = np.diag([1.0, 1.0, -1.0])


@dataclass
class SynthHeadSpec:
    """Ellipsoid head plus nose, posed in front of a background plane."""

    head_radii: Vec3 = field(default_factory=lambda: Vec3(90.0, 120.0, 100.0))
    nose_radii: Vec3 = field(default_factory=lambda: Vec3(12.0, 15.0, 20.0))
    nose_offset: Vec3 = field(default_factory=lambda: Vec3(0.0, 0.0, 95.0))
    head_center: Vec3 = field(default_factory=lambda: DEFAULT_HEAD_CENTER)
    pose: HeadPose | None = None
    background_depth_mm: float = 2000.0
    noise_sigma_mm: float = 0.0

    def __post_init__(self) -> None:
        for radii in (self.head_radii, self.nose_radii):
            if min(radii.x, radii.y, radii.z) <= 0:
                raise ValueError(f"radii must be positive, got {radii}")
        max_r = max(self.head_radii.x, self.head_radii.y, self.head_radii.z)
        if self.background_depth_mm <= self.head_center.z + max_r:
            raise ValueError(
                f"background at {self.background_depth_mm} mm must lie behind the head "
                f"(center z {self.head_center.z} + radius {max_r})"
            )
        if self.pose is None:
            self.pose = HeadPose.from_angles(self.head_center, 0.0, 0.0)


@dataclass
class SynthSequenceSpec:
    """A linear yaw/pitch sweep of one subject, with IR temperature."""

    subject_id: int
    frame_count: int
    yaw_sweep_deg: tuple[float, float] = (0.0, 0.0)
    pitch_sweep_deg: tuple[float, float] = (0.0, 0.0)
    frame_period_us: int = 33333
    forehead_temp_c: float = 33.727
    seed: int = 0

    def __post_init__(self) -> None:
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")
        if self.frame_period_us <= 0:
            raise ValueError("frame_period_us must be positive")


def _ray_ellipsoid_depth(
    dirs: np.ndarray, center: np.ndarray, radii: np.ndarray, orient: np.ndarray
) -> np.ndarray:
    """Depth (ray parameter = z, since dir_z = 1) of the near intersection
    with an oriented ellipsoid; NaN where the ray misses."""
    b_mat = np.diag(1.0 / radii) @ orient.T
    u = dirs @ b_mat.T
    w = -b_mat @ center
    a = np.sum(u * u, axis=-1)
    bb = u @ w
    cc = float(w @ w) - 1.0
    disc = bb * bb - a * cc
    with np.errstate(invalid="ignore"):
        sqrt_disc = np.sqrt(disc)
        t = (-bb - sqrt_disc) / a
    t[~(disc >= 0.0)] = np.nan
    t[t <= 0.0] = np.nan
    return t


def render_depth(
    spec: SynthHeadSpec, k: CameraIntrinsics, seed: int = 0
) -> tuple[DepthFrame, HeadPose]:
    """Z-buffer of head and nose ellipsoids over the background plane."""
    pose = spec.pose
    center = spec.head_center.as_array()
    if center[2] <= 0:
        raise ValueError("head must be in front of the camera")
    u, v = project(spec.head_center, k)
    max_r = max(spec.head_radii.x, spec.head_radii.y, spec.head_radii.z)
    r_px = max_r * k.fx / center[2]
    if u + r_px < 0 or u - r_px >= k.width or v + r_px < 0 or v - r_px >= k.height:
        raise ValueError("head is fully outside the camera frustum")
    rot = rotation_from_angles(pose.yaw_deg, pose.pitch_deg, pose.roll_deg)
    orient = _FLIP @ rot  # canonical head frame -> physical camera frame
    us = (np.arange(k.width) - k.cx) / k.fx
    vs = (np.arange(k.height) - k.cy) / k.fy
    gu, gv = np.meshgrid(us, vs)
    dirs = np.stack([gu, gv, np.ones_like(gu)], axis=-1).reshape(-1, 3)
    head_r = spec.head_radii.as_array()
    nose_center = center + orient @ spec.nose_offset.as_array()
    nose_r = spec.nose_radii.as_array()
    z_head = _ray_ellipsoid_depth(dirs, center, head_r, orient)
    z_nose = _ray_ellipsoid_depth(dirs, nose_center, nose_r, orient)
    z = np.fmin(z_head, z_nose)
    z = np.where(np.isnan(z), spec.background_depth_mm, z)
    if spec.noise_sigma_mm > 0:
        rng = np.random.default_rng([seed, 0x5EED])
        z = z + rng.normal(0.0, spec.noise_sigma_mm, size=z.shape)
    depth = np.clip(np.round(z), 1, 65535).astype(np.uint16).reshape(k.height, k.width)
    nose_tip = nose_center + orient @ np.array([0.0, 0.0, spec.nose_radii.z])
    gaze_phys = nose_tip - center
    gaze_canonical = Vec3(gaze_phys[0], gaze_phys[1], -gaze_phys[2]).normalized()
    truth = HeadPose.from_direction(spec.head_center, gaze_canonical, roll_deg=pose.roll_deg)
    return DepthFrame(k.width, k.height, depth), truth


def _subject_texture(subject_id: int, size: int) -> np.ndarray:
    rng = np.random.default_rng([2718, int(subject_id)])
    coarse = rng.uniform(25.0, 230.0, size=(5, 4))
    return resize_bilinear(coarse, (size, size))


FACE_BACKDROP_LEVEL = 90.0


def render_face_gray(subject_id: int, pose: HeadPose, size: int) -> GrayFrame:
    """Per-subject texture, horizontally compressed by cos(yaw)."""
    if size < 32:
        raise ValueError(f"face size must be >= 32 px, got {size}")
    texture = _subject_texture(subject_id, size)
    cos_yaw = max(math.cos(math.radians(pose.yaw_deg)), 0.05)
    cx = (size - 1) / 2.0
    xs = np.arange(size, dtype=np.float64)
    src = cx + (xs - cx) / cos_yaw
    inside = (src >= 0.0) & (src <= size - 1)
    src_c = np.clip(src, 0.0, size - 1)
    x0 = np.floor(src_c).astype(int)
    x1 = np.minimum(x0 + 1, size - 1)
    frac = src_c - x0
    warped = texture[:, x0] * (1.0 - frac) + texture[:, x1] * frac
    warped[:, ~inside] = FACE_BACKDROP_LEVEL
    return GrayFrame(size, size, np.clip(np.round(warped), 0, 255).astype(np.uint8))


def face_box_for_pose(pose: HeadPose, k: CameraIntrinsics, head_size_mm: float = HEAD_BOX_MM):
    """Square pixel box covering a metric head size at the pose's depth."""
    u, v = project(pose.center, k)
    side = int(round(head_size_mm * k.fx / pose.center.z))
    return (int(round(u - side / 2)), int(round(v - side / 2)), side, side)


def render_ir(
    face_box: tuple[int, int, int, int],
    forehead_temp_c: float,
    cal: ThermalCalibration,
    size: tuple[int, int],
    pad_frac: float = 0.5,
) -> IrFrame:
    """Forehead region at the requested temperature over room-level background.

    The painted region is the forehead slice of the face box grown by
    `pad_frac` (clipped to the box), so slightly-off detection boxes still
    read a clean temperature.
    """
    if cal.slope == 0:
        raise ValueError("calibration slope must be nonzero")
    width, height = size
    level = temp_to_intensity(forehead_temp_c, cal)
    level_int = int(round(level))
    if not (0 <= level_int <= 255):
        raise ValueError(
            f"temperature {forehead_temp_c} falls outside the representable "
            f"intensity range (level {level_int})"
        )
    background = int(round(temp_to_intensity(cal.intercept, cal)))
    pixels = np.full((height, width), background, dtype=np.uint8)
    fx, fy, fw, fh = forehead_roi(face_box)
    grow_x = int(round(fw * pad_frac))
    gro_y = int(round(fh * pad_frac))
    bx, by, bw, bh = face_box
    x0 = max(fx - grow_x, bx, 0)
    y0 = max(fy - gro_y, by, 0)
    x1 = min(fx + fw + grow_x, bx + bw, width)
    y1 = min(fy + fh + gro_y, by + bh, height)
    if x0 < x1 and y0 < y1:
        pixels[y0:y1, x0:x1] = level_int
    return IrFrame(width, height, pixels)


def _background_gray(
    k: CameraIntrinsics, seed: int, frame_index: int
) -> np.ndarray:
    rng = np.random.default_rng([seed, 7, frame_index])
    coarse = rng.uniform(100.0, 170.0, size=(8, 6))
    return resize_bilinear(coarse, (k.width, k.height))


def render_gray_frame(
    subject_id: int,
    pose: HeadPose,
    k: CameraIntrinsics,
    seed: int = 0,
    frame_index: int = 0,
) -> GrayFrame:
    """Full gray frame: textured background with the posed face pasted in."""
    bg = _background_gray(k, seed, frame_index)
    x, y, w, h = face_box_for_pose(pose, k)
    if w >= 32:
        face = render_face_gray(subject_id, pose, w).pixels.astype(np.float64)
        x0, y0 = max(x, 0), max(y, 0)
        x1, y1 = min(x + w, k.width), min(y + h, k.height)
        if x0 < x1 and y0 < y1:
            bg[y0:y1, x0:x1] = face[y0 - y : y1 - y, x0 - x : x1 - x]
    return GrayFrame(k.width, k.height, np.clip(np.round(bg), 0, 255).astype(np.uint8))


def sweep_pose(spec: SynthSequenceSpec, frame_index: int, head_center: Vec3 = DEFAULT_HEAD_CENTER) -> HeadPose:
    """Pose of one frame along the linear yaw/pitch sweep."""
    if spec.frame_count == 1:
        frac = 0.0
    else:
        frac = frame_index / (spec.frame_count - 1)
    yaw = spec.yaw_sweep_deg[0] + frac * (spec.yaw_sweep_deg[1] - spec.yaw_sweep_deg[0])
    pitch = spec.pitch_sweep_deg[0] + frac * (spec.pitch_sweep_deg[1] - spec.pitch_sweep_deg[0])
    return HeadPose.from_angles(head_center, yaw, pitch)


def synth_sequence(
    spec: SynthSequenceSpec,
    k: CameraIntrinsics,
    out_dir: str | Path,
    head_template: SynthHeadSpec | None = None,
    calibration: ThermalCalibration | None = None,
) -> StreamManifest:
    """Write depth/gray/IR PGM triples, pose files, and the manifest."""
    from .thermal import DEFAULT_CALIBRATION

    calibration = calibration or DEFAULT_CALIBRATION
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    template = head_template or SynthHeadSpec()
    rows_depth: list[ManifestRow] = []
    rows_gray: list[ManifestRow] = []
    rows_ir: list[ManifestRow] = []
    for i in range(spec.frame_count):
        pose = sweep_pose(spec, i, template.head_center)
        head = replace(template, pose=pose)
        ts = i * spec.frame_period_us
        depth, truth = render_depth(head, k, seed=spec.seed * 100003 + i)
        depth.timestamp_us = ts
        gray = render_gray_frame(spec.subject_id, truth, k, seed=spec.seed, frame_index=i)
        gray.timestamp_us = ts
        box = face_box_for_pose(truth, k)
        ir = render_ir(box, spec.forehead_temp_c, calibration, (k.width, k.height))
        ir.timestamp_us = ts
        names = (f"depth_{i:04d}.pgm", f"gray_{i:04d}.pgm", f"ir_{i:04d}.pgm")
        write_pgm(out / names[0], depth.depth_mm)
        write_pgm(out / names[1], gray.pixels)
        write_pgm(out / names[2], ir.intensity)
        write_pose_file(out / f"pose_{i:04d}.txt", truth)
        rows_depth.append(ManifestRow("depth", names[0], ts))
        rows_gray.append(ManifestRow("gray", names[1], ts))
        rows_ir.append(ManifestRow("ir", names[2], ts))
    write_intrinsics(out / "intrinsics.txt", k)
    manifest = StreamManifest(
        rows=rows_depth + rows_gray + rows_ir,
        intrinsics=k,
        frame_period_us=spec.frame_period_us,
        subject_id=spec.subject_id,
        base_dir=out,
    )
    write_manifest(out / "manifest.csv", manifest, "intrinsics.txt")
    return manifest


def pose_file_for_depth(depth_path: str | Path) -> Path:
    """Companion pose file of a depth frame (depth_NNNN.pgm -> pose_NNNN.txt)."""
    p = Path(depth_path)
    return p.with_name(p.stem.replace("depth_", "pose_") + ".txt")


def quick_pose_estimate(depth: DepthFrame, k: CameraIntrinsics) -> HeadPose | None:
    """Plane-plus-extremum sanity estimator.

    Background level comes from the frame border; head pixels sit well in
    front of it.  The nose is the near-depth extremum (mean of the minimum-
    depth pixels); the head center is the silhouette centroid backprojected
    at the far-depth extremum, which for a convex head approximates the
    terminator plane through the center.
    """
    d = depth.depth_mm.astype(np.float64)
    valid = d > 0
    if not valid.any():
        return None
    border = np.concatenate([d[0, :], d[-1, :], d[:, 0], d[:, -1]])
    border = border[border > 0]
    if len(border) == 0:
        return None
    background = np.median(border)
    head = valid & (d < background - 100.0)
    if head.sum() < 50:
        return None
    ys, xs = np.nonzero(head)
    zs = d[ys, xs]
    tip = zs == zs.min()
    nu, nv, nz = xs[tip].mean(), ys[tip].mean(), zs[tip].mean()
    nose = np.array([(nu - k.cx) * nz / k.fx, (nv - k.cy) * nz / k.fy, nz])
    z_c = zs.max()
    center = np.array(
        [(xs.mean() - k.cx) * z_c / k.fx, (ys.mean() - k.cy) * z_c / k.fy, z_c]
    )
    gaze_phys = nose - center
    direction = Vec3(gaze_phys[0], gaze_phys[1], -gaze_phys[2])
    if direction.norm() < 1e-9:
        return None
    return HeadPose.from_direction(Vec3(*center), direction.normalized())
