"""IR intensity-to-temperature calibration, ROI readings, and blood flow.

Temperature follows a fitted line temp_c = slope * intensity + intercept;
the intercept doubles as the room temperature (the reading of an intensity-0
pixel).  Blood flow uses a linear surrogate through two reference
(temperature, flow) anchor readings: the underlying thermodynamic relation
couples skin and core blood temperature, but only these two anchors are
published, so the core-temperature term is absorbed into the fitted
constants.  Treat blood-flow numbers as indicative, not physiological
ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .frames import IrFrame

# Factory line for the reference IR camera: 0.2087 degC per gray level over
# a 22.28 degC room.
DEFAULT_SLOPE_C_PER_LEVEL = 0.2087
DEFAULT_INTERCEPT_C = 22.28

# Reference (skin temperature degC, blood flow ml/100g tissue/min) anchors:
# a forehead reading and a whole-head reading from the same calibrated rig.
BLOOD_FLOW_ANCHORS = ((33.727, 39.6536), (31.5156, 19.2156))

Rect = tuple[int, int, int, int]


@dataclass(frozen=True)
class ThermalCalibration:
    """Line mapping IR gray level to degrees Celsius."""

    slope: float
    intercept: float
    residual_rms: float = 0.0
    n_points: int = 2

    def __post_init__(self) -> None:
        if self.n_points < 2:
            raise ValueError("calibration needs at least 2 points")
        if not np.isfinite(self.slope):
            raise ValueError("slope must be finite")


DEFAULT_CALIBRATION = ThermalCalibration(
    slope=DEFAULT_SLOPE_C_PER_LEVEL, intercept=DEFAULT_INTERCEPT_C
)


@dataclass(frozen=True)
class BloodFlowModel:
    """Linear temperature -> blood-flow surrogate through two anchors."""

    bf_slope: float
    bf_intercept: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.bf_slope) and np.isfinite(self.bf_intercept)):
            raise ValueError("blood-flow constants must be finite")

    @classmethod
    def from_anchors(
        cls,
        a: tuple[float, float] = BLOOD_FLOW_ANCHORS[0],
        b: tuple[float, float] = BLOOD_FLOW_ANCHORS[1],
    ) -> "BloodFlowModel":
        (t1, v1), (t2, v2) = a, b
        if t1 == t2:
            raise ValueError("anchor temperatures must differ")
        slope = (v1 - v2) / (t1 - t2)
        return cls(bf_slope=slope, bf_intercept=v1 - slope * t1)


DEFAULT_BLOOD_FLOW = BloodFlowModel.from_anchors()


@dataclass(frozen=True)
class RoiMap:
    """2x3 affine mapping RGB pixel coordinates to IR pixel coordinates."""

    matrix: np.ndarray
    residual_px: float = 0.0

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (2, 3):
            raise ValueError(f"affine must be 2x3, got {m.shape}")
        if abs(np.linalg.det(m[:, :2])) < 1e-12:
            raise ValueError("affine 2x2 block is singular")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "RoiMap":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    def apply(self, u: float, v: float) -> tuple[float, float]:
        m = self.matrix
        return (
            m[0, 0] * u + m[0, 1] * v + m[0, 2],
            m[1, 0] * u + m[1, 1] * v + m[1, 2],
        )


@dataclass(frozen=True)
class ThermalReading:
    """Mean ROI intensity with its temperature and blood-flow conversion."""

    roi: Rect
    mean_intensity: float
    temp_c: float
    blood_flow: float


@dataclass(frozen=True)
class Finding:
    """Something the pipeline wants a human to look at."""

    kind: str  # "fever" | "appearance-anomaly"
    value: float
    frame_index: int = 0
    detail: str = ""


def fit_calibration(points: Iterable[tuple[float, float]]) -> ThermalCalibration:
    """Ordinary least squares line through (intensity, temp_c) samples."""
    pts = list(points)
    if len(pts) < 2:
        raise ValueError(f"need at least 2 calibration points, got {len(pts)}")
    x = np.array([p[0] for p in pts], dtype=np.float64)
    y = np.array([p[1] for p in pts], dtype=np.float64)
    if np.ptp(x) == 0.0:
        raise ValueError("calibration points need at least 2 distinct intensities")
    a = np.stack([x, np.ones_like(x)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - (slope * x + intercept)
    rms = float(np.sqrt(np.mean(resid**2)))
    return ThermalCalibration(float(slope), float(intercept), rms, len(pts))


def intensity_to_temp(x: float, cal: ThermalCalibration) -> float:
    """Gray level to degrees Celsius along the calibration line."""
    return cal.slope * x + cal.intercept


def temp_to_intensity(temp_c: float, cal: ThermalCalibration) -> float:
    if cal.slope == 0.0:
        raise ValueError("cannot invert a zero-slope calibration")
    return (temp_c - cal.intercept) / cal.slope


def blood_flow(temp_c: float, model: BloodFlowModel = DEFAULT_BLOOD_FLOW) -> float:
    """Skin-level perfusion in ml/100g tissue/min for a skin temperature."""
    return model.bf_slope * temp_c + model.bf_intercept


def temp_of_roi(
    ir: IrFrame,
    roi: Rect,
    cal: ThermalCalibration,
    bf_model: BloodFlowModel = DEFAULT_BLOOD_FLOW,
) -> ThermalReading:
    """Mean-intensity temperature reading over a rectangle of an IR frame."""
    x, y, w, h = (int(v) for v in roi)
    if w <= 0 or h <= 0:
        raise ValueError(f"empty ROI {roi}")
    if x < 0 or y < 0 or x + w > ir.width or y + h > ir.height:
        raise ValueError(f"ROI {roi} outside {ir.width}x{ir.height} frame")
    mean = float(ir.intensity[y : y + h, x : x + w].mean())
    t = intensity_to_temp(mean, cal)
    return ThermalReading(roi=(x, y, w, h), mean_intensity=mean, temp_c=t, blood_flow=blood_flow(t, bf_model))


def fit_roi_map(correspondences: Sequence[tuple[float, float, float, float]]) -> RoiMap:
    """Least-squares affine from >= 3 (rgb_u, rgb_v, ir_u, ir_v) point pairs."""
    if len(correspondences) < 3:
        raise ValueError(f"need at least 3 correspondences, got {len(correspondences)}")
    src = np.array([(c[0], c[1]) for c in correspondences], dtype=np.float64)
    dst = np.array([(c[2], c[3]) for c in correspondences], dtype=np.float64)
    a = np.hstack([src, np.ones((len(src), 1))])
    if np.linalg.matrix_rank(a) < 3:
        raise ValueError("correspondences are collinear; affine fit is singular")
    sol, *_ = np.linalg.lstsq(a, dst, rcond=None)
    matrix = sol.T  # 2x3
    fitted = a @ sol
    residual = float(np.sqrt(np.mean(np.sum((fitted - dst) ** 2, axis=1))))
    return RoiMap(matrix=matrix, residual_px=residual)


# Forehead slice of a face box: central span of the width, top slice of the
# height.  Plain proportions; tune per deployment.
FOREHEAD_WIDTH_FRAC = 0.60
FOREHEAD_HEIGHT_FRAC = 0.25


def forehead_roi(
    face_box,
    roi_map: RoiMap | None = None,
    ir_size: tuple[int, int] | None = None,
    width_frac: float = FOREHEAD_WIDTH_FRAC,
    height_frac: float = FOREHEAD_HEIGHT_FRAC,
) -> Rect:
    """Forehead rectangle of a face box, mapped into IR coordinates.

    `face_box` is anything with x/y/w/h attributes or a 4-tuple.  With
    `ir_size` given, the result is clipped to the frame; a fully-outside ROI
    is an error.
    """
    x, y, w, h = _rect(face_box)
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate face box {(x, y, w, h)}")
    fx = x + (1.0 - width_frac) / 2.0 * w
    fy = float(y)
    fw = width_frac * w
    fh = height_frac * h
    if roi_map is not None:
        corners = [
            roi_map.apply(fx, fy),
            roi_map.apply(fx + fw, fy),
            roi_map.apply(fx, fy + fh),
            roi_map.apply(fx + fw, fy + fh),
        ]
        us = [c[0] for c in corners]
        vs = [c[1] for c in corners]
        fx, fy = min(us), min(vs)
        fw, fh = max(us) - fx, max(vs) - fy
    rx, ry = int(round(fx)), int(round(fy))
    rw, rh = int(round(fw)), int(round(fh))
    if ir_size is not None:
        fw_px, fh_px = ir_size
        x0, y0 = max(rx, 0), max(ry, 0)
        x1, y1 = min(rx + rw, fw_px), min(ry + rh, fh_px)
        if x0 >= x1 or y0 >= y1:
            raise ValueError(f"forehead ROI {(rx, ry, rw, rh)} falls outside the IR frame")
        rx, ry, rw, rh = x0, y0, x1 - x0, y1 - y0
    return (rx, ry, rw, rh)


def fever_check(temp_c: float, fever_threshold_c: float = 38.0, frame_index: int = 0) -> Finding | None:
    """Fever finding iff the temperature reaches the threshold (inclusive)."""
    if temp_c >= fever_threshold_c:
        return Finding(kind="fever", value=float(temp_c), frame_index=frame_index)
    return None


def _rect(box) -> Rect:
    if hasattr(box, "x"):
        return (box.x, box.y, box.w, box.h)
    x, y, w, h = box
    return (int(x), int(y), int(w), int(h))


def read_calibration_points(path: str | Path) -> list[tuple[float, float]]:
    """Read `intensity,temp_c` CSV (header required) into point pairs."""
    lines = [ln.strip() for ln in Path(path).read_text().split("\n") if ln.strip()]
    if not lines or lines[0].replace(" ", "") != "intensity,temp_c":
        raise ValueError(f"{path}: expected header 'intensity,temp_c'")
    points = []
    for ln in lines[1:]:
        a, b = ln.split(",")
        points.append((float(a), float(b)))
    return points


def read_correspondences(path: str | Path) -> list[tuple[float, float, float, float]]:
    """Read `rgb_u,rgb_v,ir_u,ir_v` CSV (header required)."""
    lines = [ln.strip() for ln in Path(path).read_text().split("\n") if ln.strip()]
    if not lines or lines[0].replace(" ", "") != "rgb_u,rgb_v,ir_u,ir_v":
        raise ValueError(f"{path}: expected header 'rgb_u,rgb_v,ir_u,ir_v'")
    rows = []
    for ln in lines[1:]:
        vals = [float(v) for v in ln.split(",")]
        if len(vals) != 4:
            raise ValueError(f"{path}: bad correspondence row {ln!r}")
        rows.append(tuple(vals))
    return rows
