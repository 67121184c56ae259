"""Thermal-path tests.  The reference line is temp = 0.2087 * intensity
+ 22.28 with the intercept doubling as room temperature; blood-flow
constants are rederived here by solving the two-anchor linear system with
numpy.linalg.solve as an independent oracle."""

from __future__ import annotations

import numpy as np
import pytest

from msface.frames import IrFrame
from msface.thermal import (
    BLOOD_FLOW_ANCHORS,
    DEFAULT_CALIBRATION,
    BloodFlowModel,
    RoiMap,
    ThermalCalibration,
    fever_check,
    fit_calibration,
    fit_roi_map,
    forehead_roi,
    intensity_to_temp,
    temp_of_roi,
    temp_to_intensity,
    blood_flow,
)


# ── calibration fit ──────────────────────────────────────────────────────

class TestFitCalibration:
    def test_exact_line_recovered(self):
        xs = np.linspace(0, 250, 20)
        pts = [(x, 0.2087 * x + 22.28) for x in xs]
        cal = fit_calibration(pts)
        assert cal.slope == pytest.approx(0.2087, abs=1e-9)
        assert cal.intercept == pytest.approx(22.28, abs=1e-9)
        assert cal.residual_rms == pytest.approx(0.0, abs=1e-9)

    def test_two_point_line(self):
        cal = fit_calibration([(0, 22.28), (100, 43.15)])
        assert cal.slope == pytest.approx(0.2087, abs=1e-12)
        assert cal.intercept == pytest.approx(22.28, abs=1e-12)

    def test_symmetric_noise_keeps_slope(self):
        # +/- 0.5 degC perturbations applied symmetrically cancel in OLS.
        xs = np.arange(0, 200, 10, dtype=float)
        pts = []
        for i, x in enumerate(xs):
            pts.append((x, 0.2087 * x + 22.28 + (0.5 if i % 2 == 0 else -0.5)))
        cal = fit_calibration(pts)
        assert cal.slope == pytest.approx(0.2087, abs=0.01)
        assert cal.residual_rms > 0

    def test_identical_intensities_unfittable(self):
        with pytest.raises(ValueError):
            fit_calibration([(5, 20.0), (5, 30.0)])

    def test_single_point_rejected(self):
        with pytest.raises(ValueError):
            fit_calibration([(0, 22.28)])


# ── intensity <-> temperature ────────────────────────────────────────────

class TestIntensityToTemp:
    def test_zero_is_room_temperature(self):
        assert intensity_to_temp(0, DEFAULT_CALIBRATION) == pytest.approx(22.28)

    def test_level_100(self):
        assert intensity_to_temp(100, DEFAULT_CALIBRATION) == pytest.approx(43.15)

    def test_forehead_reference_level(self):
        # invert the line for 33.727 degC: (33.727 - 22.28) / 0.2087
        x = temp_to_intensity(33.727, DEFAULT_CALIBRATION)
        assert x == pytest.approx(54.849, abs=1e-3)
        assert intensity_to_temp(x, DEFAULT_CALIBRATION) == pytest.approx(33.727, abs=1e-12)

    def test_roundtrip_identity(self):
        for x in range(0, 256, 5):
            back = temp_to_intensity(intensity_to_temp(x, DEFAULT_CALIBRATION), DEFAULT_CALIBRATION)
            assert back == pytest.approx(x, abs=1e-9)


# ── blood flow ───────────────────────────────────────────────────────────

class TestBloodFlow:
    def test_anchors_reproduced(self):
        for temp, flow in BLOOD_FLOW_ANCHORS:
            assert blood_flow(temp) == pytest.approx(flow, abs=1e-4)

    def test_constants_match_independent_solve(self):
        (t1, v1), (t2, v2) = BLOOD_FLOW_ANCHORS
        slope, intercept = np.linalg.solve([[t1, 1.0], [t2, 1.0]], [v1, v2])
        assert slope == pytest.approx(9.2422, abs=5e-4)
        assert intercept == pytest.approx(-272.06, abs=5e-2)
        model = BloodFlowModel.from_anchors()
        assert model.bf_slope == pytest.approx(slope, abs=1e-9)
        assert model.bf_intercept == pytest.approx(intercept, abs=1e-9)

    def test_equal_anchor_temperatures_rejected(self):
        with pytest.raises(ValueError):
            BloodFlowModel.from_anchors((30.0, 10.0), (30.0, 20.0))


# ── ROI readings ─────────────────────────────────────────────────────────

def _uniform_ir(w: int, h: int, level: int) -> IrFrame:
    return IrFrame(w, h, np.full((h, w), level, dtype=np.uint8))


class TestTempOfRoi:
    def test_uniform_level_55(self):
        # 0.2087 * 55 + 22.28 = 33.7585
        frame = _uniform_ir(40, 30, 55)
        reading = temp_of_roi(frame, (5, 5, 10, 10), DEFAULT_CALIBRATION)
        assert reading.mean_intensity == 55.0
        assert reading.temp_c == pytest.approx(33.7585, abs=1e-9)

    def test_reading_internally_consistent(self):
        rng = np.random.default_rng(9)
        frame = IrFrame(32, 32, rng.integers(0, 256, size=(32, 32), dtype=np.uint8))
        reading = temp_of_roi(frame, (3, 4, 20, 19), DEFAULT_CALIBRATION)
        expected = DEFAULT_CALIBRATION.slope * reading.mean_intensity + DEFAULT_CALIBRATION.intercept
        assert reading.temp_c == pytest.approx(expected, abs=1e-9)

    def test_quantized_render_within_half_level(self):
        # render 33.727 degC to the nearest integer level, read it back:
        # error bounded by half a gray level on the slope.
        level = int(round(temp_to_intensity(33.727, DEFAULT_CALIBRATION)))
        frame = _uniform_ir(16, 16, level)
        reading = temp_of_roi(frame, (0, 0, 16, 16), DEFAULT_CALIBRATION)
        assert reading.temp_c == pytest.approx(33.727, abs=0.5 * DEFAULT_CALIBRATION.slope + 1e-9)

    def test_background_roi_reads_room_temperature(self):
        frame = _uniform_ir(16, 16, 0)
        reading = temp_of_roi(frame, (0, 0, 16, 16), DEFAULT_CALIBRATION)
        assert reading.temp_c == pytest.approx(DEFAULT_CALIBRATION.intercept, abs=1e-9)

    def test_empty_roi_rejected(self):
        with pytest.raises(ValueError):
            temp_of_roi(_uniform_ir(8, 8, 10), (2, 2, 0, 3), DEFAULT_CALIBRATION)

    def test_out_of_frame_roi_rejected(self):
        with pytest.raises(ValueError):
            temp_of_roi(_uniform_ir(8, 8, 10), (5, 5, 6, 6), DEFAULT_CALIBRATION)


# ── affine ROI map ───────────────────────────────────────────────────────

class TestFitRoiMap:
    def test_identity_correspondences(self):
        pairs = [(0, 0, 0, 0), (10, 0, 10, 0), (0, 10, 0, 10), (10, 10, 10, 10)]
        m = fit_roi_map(pairs)
        assert np.allclose(m.matrix, [[1, 0, 0], [0, 1, 0]], atol=1e-12)
        assert m.residual_px == pytest.approx(0.0, abs=1e-9)

    def test_pure_translation(self):
        pairs = [(0, 0, 3, -2), (10, 0, 13, -2), (0, 10, 3, 8)]
        m = fit_roi_map(pairs)
        assert np.allclose(m.matrix, [[1, 0, 3], [0, 1, -2]], atol=1e-9)

    def test_noisy_known_affine_recovered(self):
        rng = np.random.default_rng(21)
        true = np.array([[1.02, 0.05, 4.0], [-0.03, 0.98, -2.5]])
        pairs = []
        for _ in range(6):
            u, v = rng.uniform(0, 100, size=2)
            x = true @ [u, v, 1.0] + rng.uniform(-0.2, 0.2, size=2)
            pairs.append((u, v, x[0], x[1]))
        m = fit_roi_map(pairs)
        assert m.residual_px <= 0.5
        assert np.allclose(m.matrix[:, :2], true[:, :2], atol=0.05)
        assert np.allclose(m.matrix[:, 2], true[:, 2], atol=0.5)

    def test_collinear_points_rejected(self):
        pairs = [(0, 0, 0, 0), (1, 1, 1, 1), (2, 2, 2, 2)]
        with pytest.raises(ValueError):
            fit_roi_map(pairs)


# ── forehead ROI ─────────────────────────────────────────────────────────

class TestForeheadRoi:
    def test_unit_box_proportions(self):
        assert forehead_roi((0, 0, 100, 100), RoiMap.identity()) == (20, 0, 60, 25)

    def test_offset_box(self):
        assert forehead_roi((50, 50, 200, 100), RoiMap.identity()) == (90, 50, 120, 25)

    def test_scaling_affine_doubles_coordinates(self):
        double = RoiMap(np.array([[2.0, 0, 0], [0, 2.0, 0]]))
        assert forehead_roi((0, 0, 100, 100), double) == (40, 0, 120, 50)

    def test_no_map_means_identity(self):
        assert forehead_roi((0, 0, 100, 100)) == forehead_roi((0, 0, 100, 100), RoiMap.identity())

    def test_clipped_to_frame(self):
        roi = forehead_roi((90, 0, 100, 100), ir_size=(120, 120))
        x, y, w, h = roi
        assert x + w <= 120 and x >= 0

    def test_fully_outside_is_error(self):
        with pytest.raises(ValueError):
            forehead_roi((500, 500, 100, 100), ir_size=(120, 120))

    def test_degenerate_box_rejected(self):
        with pytest.raises(ValueError):
            forehead_roi((0, 0, 0, 10))


# ── fever check ──────────────────────────────────────────────────────────

class TestFeverCheck:
    def test_fever_found(self):
        finding = fever_check(38.5)
        assert finding is not None and finding.kind == "fever" and finding.value == 38.5

    def test_normal_forehead_reading_is_not_fever(self):
        assert fever_check(33.727) is None

    def test_boundary_inclusive(self):
        assert fever_check(38.0) is not None

    def test_custom_threshold(self):
        assert fever_check(37.6, fever_threshold_c=37.5) is not None
        assert fever_check(37.4, fever_threshold_c=37.5) is None


class TestCalibrationType:
    def test_requires_two_points(self):
        with pytest.raises(ValueError):
            ThermalCalibration(slope=0.2, intercept=20.0, n_points=1)

    def test_line_roundtrip_any_fit(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            slope = rng.uniform(0.05, 0.5)
            intercept = rng.uniform(15, 25)
            xs = rng.uniform(0, 255, size=12)
            cal = fit_calibration([(x, slope * x + intercept) for x in xs])
            assert cal.slope == pytest.approx(slope, abs=1e-9)
            assert cal.intercept == pytest.approx(intercept, abs=1e-9)
