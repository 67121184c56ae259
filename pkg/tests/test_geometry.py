"""Geometry tests: every expected value below is hand-computed from the
pinhole formula or constructed analytically (great-circle identities)."""

from __future__ import annotations

import math

import numpy as np
import pytest

from msface.geometry import (
    CameraIntrinsics,
    HeadPose,
    InvalidDepthError,
    Vec3,
    angles_from_rotation,
    backproject,
    direction_to_euler,
    euler_to_direction,
    gate,
    offset_angle,
    project,
    read_pose_file,
    rotation_from_angles,
    write_pose_file,
)

K = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


# ── backproject ──────────────────────────────────────────────────────────

class TestBackproject:
    def test_principal_point_maps_to_optical_axis(self):
        p = backproject(K.cx, K.cy, 1000.0, K)
        assert (p.x, p.y, p.z) == (0.0, 0.0, 1000.0)

    def test_one_focal_length_off_axis_gives_x_equal_z(self):
        # u = cx + fx is outside this sensor, so use a wider one
        k = CameraIntrinsics(fx=200.0, fy=200.0, cx=320.0, cy=240.0, width=640, height=480)
        p = backproject(k.cx + k.fx, k.cy, 1000.0, k)
        assert (p.x, p.y, p.z) == (1000.0, 0.0, 1000.0)

    def test_hand_evaluated_pinhole(self):
        # (100-320)*800/500 = -352, (200-240)*800/500 = -64
        p = backproject(100, 200, 800, K)
        assert (p.x, p.y, p.z) == (-352.0, -64.0, 800.0)

    def test_zero_depth_rejected(self):
        with pytest.raises(InvalidDepthError):
            backproject(100, 100, 0, K)

    def test_out_of_bounds_pixel_rejected(self):
        with pytest.raises(ValueError):
            backproject(640, 100, 500, K)

    def test_reproject_roundtrip(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            u = rng.uniform(0, K.width - 1e-6)
            v = rng.uniform(0, K.height - 1e-6)
            z = rng.uniform(1.0, 10000.0)
            u2, v2 = project(backproject(u, v, z, K), K)
            assert u2 == pytest.approx(u, abs=1e-6)
            assert v2 == pytest.approx(v, abs=1e-6)


# ── offset_angle / euler_to_direction ────────────────────────────────────

class TestOffsetAngle:
    def test_aligned_with_axis(self):
        assert offset_angle(Vec3(0, 0, 1)) == 0.0

    def test_diagonal_is_45(self):
        s = 1.0 / math.sqrt(2.0)
        assert offset_angle(Vec3(s, 0, s)) == pytest.approx(45.0, abs=1e-12)

    def test_constructed_15_degrees(self):
        d = Vec3(0.0, math.sin(math.radians(15)), math.cos(math.radians(15)))
        assert offset_angle(d) == pytest.approx(15.0, abs=1e-12)

    def test_non_unit_rejected(self):
        with pytest.raises(ValueError):
            offset_angle(Vec3(0, 0, 1.001))

    def test_roll_symmetry_about_camera_axis(self):
        # Any roll applied around (0, 0, 1) leaves the offset unchanged.
        rng = np.random.default_rng(11)
        d = euler_to_direction(37.0, -22.0).as_array()
        base = offset_angle(Vec3.from_array(d))
        for _ in range(100):
            a = rng.uniform(0, 2 * math.pi)
            c, s = math.cos(a), math.sin(a)
            rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
            rolled = Vec3.from_array(rz @ d)
            assert offset_angle(rolled) == pytest.approx(base, abs=1e-9)


class TestEuler:
    def test_identity(self):
        d = euler_to_direction(0, 0)
        assert (d.x, d.y, d.z) == (0.0, 0.0, 1.0)

    def test_quarter_turn(self):
        d = euler_to_direction(90, 0)
        assert d.x == pytest.approx(1.0, abs=1e-15)
        assert d.y == 0.0
        assert d.z == pytest.approx(0.0, abs=1e-15)

    def test_yaw_roundtrip_identity(self):
        assert offset_angle(euler_to_direction(30, 0)) == pytest.approx(30.0, abs=1e-9)

    def test_abs_yaw_up_to_180(self):
        for a in (-180, -120, -45, 45, 120, 179.5):
            assert offset_angle(euler_to_direction(a, 0)) == pytest.approx(abs(a), abs=1e-9)

    def test_great_circle_angle(self):
        # offset(yaw=a, pitch=b) equals arccos(cos a * cos b)
        rng = np.random.default_rng(3)
        for _ in range(300):
            a = rng.uniform(-89, 89)
            b = rng.uniform(-89, 89)
            expected = math.degrees(
                math.acos(math.cos(math.radians(a)) * math.cos(math.radians(b)))
            )
            assert offset_angle(euler_to_direction(a, b)) == pytest.approx(expected, abs=1e-9)

    def test_direction_roundtrip(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            yaw = rng.uniform(-179, 179)
            pitch = rng.uniform(-89, 89)
            y2, p2 = direction_to_euler(euler_to_direction(yaw, pitch))
            assert y2 == pytest.approx(yaw, abs=1e-9)
            assert p2 == pytest.approx(pitch, abs=1e-9)


# ── gate ─────────────────────────────────────────────────────────────────

def _pose(yaw: float, pitch: float = 0.0) -> HeadPose:
    return HeadPose.from_angles(Vec3(0, 0, 1000), yaw, pitch)


class TestGate:
    def test_frontal_accepted(self):
        d = gate(_pose(0), 15)
        assert d.accepted and d.offset_deg == 0.0

    def test_boundary_equality_accepts(self):
        assert gate(_pose(15), 15).accepted

    def test_rejected_beyond_threshold(self):
        d = gate(_pose(20), 15)
        assert not d.accepted
        assert d.offset_deg == pytest.approx(20.0, abs=1e-9)

    def test_threshold_domain(self):
        for bad in (0.0, -5.0, 90.1):
            with pytest.raises(ValueError):
                gate(_pose(0), bad)

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            pose = _pose(rng.uniform(-80, 80), rng.uniform(-60, 60))
            t1, t2 = sorted(rng.uniform(1, 90, size=2))
            if gate(pose, t1).accepted:
                assert gate(pose, t2).accepted

    def test_decision_consistency(self):
        d = gate(_pose(14.999), 15)
        assert d.accepted == (d.offset_deg <= d.threshold_deg)


# ── rotations and pose files ─────────────────────────────────────────────

class TestPoseFile:
    def test_rotation_angle_roundtrip(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            yaw = rng.uniform(-170, 170)
            pitch = rng.uniform(-85, 85)
            roll = rng.uniform(-170, 170)
            y, p, r = angles_from_rotation(rotation_from_angles(yaw, pitch, roll))
            assert y == pytest.approx(yaw, abs=1e-9)
            assert p == pytest.approx(pitch, abs=1e-9)
            assert r == pytest.approx(roll, abs=1e-9)

    def test_rotation_is_orthonormal(self):
        r = rotation_from_angles(33, -20, 75)
        assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)

    def test_file_roundtrip(self, tmp_path):
        pose = HeadPose.from_angles(Vec3(12.5, -40.0, 950.0), yaw_deg=25.0, pitch_deg=-10.0, roll_deg=5.0)
        path = tmp_path / "pose.txt"
        write_pose_file(path, pose)
        back = read_pose_file(path)
        assert back.yaw_deg == pytest.approx(25.0, abs=1e-6)
        assert back.pitch_deg == pytest.approx(-10.0, abs=1e-6)
        assert back.roll_deg == pytest.approx(5.0, abs=1e-6)
        assert back.center.as_array() == pytest.approx(pose.center.as_array(), abs=1e-5)
        assert offset_angle(back.direction) == pytest.approx(offset_angle(pose.direction), abs=1e-6)

    def test_frontal_pose_stores_identity_rotation(self, tmp_path):
        # Physical convention: a frontal head has its frame aligned with the
        # camera (stored rotation = identity) and looks along R @ (0, 0, -1).
        path = tmp_path / "pose.txt"
        write_pose_file(path, HeadPose.from_angles(Vec3(0, 0, 1000), 0, 0))
        rows = [line.split() for line in path.read_text().strip().split("\n")]
        r = np.array([[float(v) for v in row] for row in rows[:3]])
        assert np.allclose(r, np.eye(3), atol=1e-12)
        assert np.allclose(r @ [0, 0, -1], [0, 0, -1], atol=1e-12)
        back = read_pose_file(path)
        assert offset_angle(back.direction) == pytest.approx(0.0, abs=1e-9)

    def test_malformed_file_rejected(self, tmp_path):
        path = tmp_path / "pose.txt"
        path.write_text("1 0 0\n0 1 0\n")
        with pytest.raises(ValueError):
            read_pose_file(path)


class TestHeadPoseInvariant:
    def test_direction_matches_angles_when_roll_zero(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            yaw = rng.uniform(-75, 75)
            pitch = rng.uniform(-60, 60)
            pose = HeadPose.from_angles(Vec3(0, 0, 800), yaw, pitch)
            d = euler_to_direction(pose.yaw_deg, pose.pitch_deg)
            assert np.allclose(d.as_array(), pose.direction.as_array(), atol=1e-6)
