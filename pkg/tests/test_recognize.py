"""Recognizer tests over small synthetic chip galleries.

Chips are smooth seeded random fields, one field per subject, so subjects
are separable by construction; expected values for the analytic cases
(2-point PCA, LBP code of a constant image) are derived in comments.
"""

from __future__ import annotations

import numpy as np
import pytest

from msface.frames import GrayFrame, write_pgm
from msface.recognize import (
    DEFAULT_CHIP_SIZE,
    FaceChip,
    Gallery,
    chi_square,
    eigen_reconstruction_error,
    equalize,
    lbp_codes,
    lbp_histogram,
    load_gallery,
    load_model,
    normalize_chip,
    predict,
    predict_eigen,
    predict_fisher,
    predict_lbph,
    recognition_accuracy,
    resize_bilinear,
    save_model,
    train_eigen,
    train_fisher,
    train_lbph,
)

CHIP = (32, 40)  # small chips keep these tests fast


def subject_chip(subject: int, variant: int = 0, size=CHIP, noise: float = 0.0) -> FaceChip:
    """Smooth per-subject random field, optionally perturbed per variant."""
    w, h = size
    rng = np.random.default_rng(1000 + subject)
    coarse = rng.uniform(30, 220, size=(5, 4))
    base = resize_bilinear(coarse, (w, h))
    if variant or noise:
        vr = np.random.default_rng(7700 + 131 * subject + variant)
        base = base + vr.normal(0.0, max(noise, 2.0), size=base.shape)
    return FaceChip(np.clip(np.round(base), 0, 255).astype(np.uint8), subject_label=subject)


def make_gallery(n_subjects: int, chips_each: int = 3) -> Gallery:
    chips = [
        subject_chip(s, variant=v)
        for s in range(n_subjects)
        for v in range(chips_each)
    ]
    return Gallery(chips=chips, label_names={s: f"subject_{s}" for s in range(n_subjects)})


# ── normalize_chip ───────────────────────────────────────────────────────

class TestNormalizeChip:
    def test_constant_crop_stays_constant(self):
        frame = GrayFrame(20, 20, np.full((20, 20), 77, dtype=np.uint8))
        chip = normalize_chip(frame, (2, 2, 10, 10), out_size=(8, 8))
        assert np.all(chip.pixels == 77)

    def test_upscaled_gradient_stays_monotone(self):
        grad = np.tile(np.arange(0, 160, 10, dtype=np.uint8), (16, 1))
        frame = GrayFrame(16, 16, grad)
        chip = normalize_chip(frame, (0, 0, 16, 16), out_size=(32, 32))
        rows = chip.pixels.astype(int)
        assert np.all(np.diff(rows, axis=1) >= 0)

    def test_output_size_exact(self):
        frame = GrayFrame(50, 40, np.zeros((40, 50), dtype=np.uint8))
        chip = normalize_chip(frame, (3, 5, 17, 23), out_size=DEFAULT_CHIP_SIZE)
        assert chip.size == DEFAULT_CHIP_SIZE

    def test_degenerate_box_rejected(self):
        frame = GrayFrame(10, 10, np.zeros((10, 10), dtype=np.uint8))
        with pytest.raises(ValueError):
            normalize_chip(frame, (0, 0, 0, 5))

    def test_equalization_fills_range(self):
        rng = np.random.default_rng(3)
        pixels = rng.integers(100, 140, size=(20, 20), dtype=np.uint8)
        out = equalize(pixels)
        assert out.min() == 0 and out.max() == 255


# ── eigen ────────────────────────────────────────────────────────────────

class TestEigen:
    def test_two_chip_basis_is_difference_direction(self):
        a = subject_chip(1)
        b = subject_chip(2)
        gallery = Gallery(chips=[a, b])
        model = train_eigen(gallery, k=1)
        diff = a.pixels.astype(np.float64).ravel() - b.pixels.astype(np.float64).ravel()
        diff /= np.linalg.norm(diff)
        cos = abs(float(model.basis[:, 0] @ diff))
        assert cos == pytest.approx(1.0, abs=1e-9)

    def test_basis_orthonormal_and_eigenvalues_sorted(self):
        model = train_eigen(make_gallery(6, 3), k=10)
        btb = model.basis.T @ model.basis
        assert np.max(np.abs(btb - np.eye(model.k))) <= 1e-6
        assert np.all(np.diff(model.eigenvalues) <= 1e-9)

    def test_reconstruction_error_monotone_in_k(self):
        gallery = make_gallery(5, 3)
        model = train_eigen(gallery, k=len(gallery.chips) - 1)
        probe = subject_chip(2, variant=9)
        errors = [eigen_reconstruction_error(model, probe, k) for k in range(1, model.k + 1)]
        assert all(e2 <= e1 + 1e-9 for e1, e2 in zip(errors, errors[1:]))

    def test_identical_gallery_degenerates_gracefully(self):
        chip = subject_chip(4)
        chips = [FaceChip(chip.pixels.copy(), subject_label=i) for i in range(3)]
        model = train_eigen(Gallery(chips=chips), k=1)
        assert np.allclose(model.projections, model.projections[0])
        pred = predict_eigen(model, FaceChip(chip.pixels.copy()))
        assert pred.distance == 0.0
        assert pred.label == 0  # tie breaks to lowest label

    def test_k_clamped_with_warning(self):
        gallery = make_gallery(2, 2)
        with pytest.warns(UserWarning):
            model = train_eigen(gallery, k=50)
        assert model.k <= len(gallery.chips)

    def test_self_prediction_distance_zero(self):
        gallery = make_gallery(4, 3)
        model = train_eigen(gallery, k=8)
        for chip in gallery.chips[:4]:
            pred = predict_eigen(model, chip)
            assert pred.label == chip.subject_label
            assert pred.distance == pytest.approx(0.0, abs=1e-6)

    def test_small_noise_keeps_label(self):
        gallery = make_gallery(6, 3)
        model = train_eigen(gallery, k=12)
        rng = np.random.default_rng(11)
        for chip in gallery.chips[::3]:
            noisy = np.clip(
                chip.pixels.astype(np.float64) + rng.normal(0, 1.0, chip.pixels.shape), 0, 255
            )
            pred = predict_eigen(model, FaceChip(np.round(noisy).astype(np.uint8)))
            assert pred.label == chip.subject_label

    def test_ten_subject_frontal_accuracy(self):
        gallery = make_gallery(10, 3)
        model = train_eigen(gallery, k=20)
        probes = [subject_chip(s, variant=5) for s in range(10)]
        assert recognition_accuracy(model, probes) == 1.0


# ── fisher ───────────────────────────────────────────────────────────────

class TestFisher:
    def test_two_classes_well_separated(self):
        chips = [subject_chip(1, v) for v in range(4)] + [subject_chip(2, v) for v in range(4)]
        for i, c in enumerate(chips):
            c.subject_label = 1 if i < 4 else 2
        model = train_fisher(Gallery(chips=chips))
        proj = model.projections
        m1 = proj[:4].mean(axis=0)
        m2 = proj[4:].mean(axis=0)
        within = np.std(np.vstack([proj[:4] - m1, proj[4:] - m2]))
        separation = np.linalg.norm(m1 - m2)
        assert separation > 5 * max(within, 1e-12)

    def test_self_prediction(self):
        gallery = make_gallery(5, 3)
        model = train_fisher(gallery)
        for chip in gallery.chips[:5]:
            pred = predict_fisher(model, chip)
            assert pred.label == chip.subject_label
            assert pred.distance == pytest.approx(0.0, abs=1e-6)

    def test_output_dimension_bounded_by_classes(self):
        model = train_fisher(make_gallery(10, 3))
        assert model.projection.shape[1] <= 9

    def test_needs_two_classes(self):
        chips = [subject_chip(1, v) for v in range(3)]
        with pytest.raises(ValueError):
            train_fisher(Gallery(chips=chips))

    def test_needs_two_chips_per_class(self):
        chips = [subject_chip(1, 0), subject_chip(1, 1), subject_chip(2, 0)]
        chips[2].subject_label = 2
        with pytest.raises(ValueError):
            train_fisher(Gallery(chips=chips))

    def test_ten_subject_accuracy(self):
        gallery = make_gallery(10, 3)
        model = train_fisher(gallery)
        probes = [subject_chip(s, variant=6) for s in range(10)]
        assert recognition_accuracy(model, probes) == 1.0


# ── lbph ─────────────────────────────────────────────────────────────────

class TestLbph:
    def test_constant_chip_codes_are_255(self):
        # every neighbor >= center, so all 8 bits set
        codes = lbp_codes(np.full((10, 10), 50, dtype=np.uint8))
        assert np.all(codes == 255)

    def test_histogram_sums_to_cell_pixel_count(self):
        rng = np.random.default_rng(13)
        pixels = rng.integers(0, 256, size=(40, 32), dtype=np.uint8)
        hist = lbp_histogram(pixels, grid=(8, 8))
        assert hist.shape == (8 * 8 * 256,)
        cells = hist.reshape(64, 256)
        # 40x32 split into 8x8 cells of 5x4 pixels
        assert np.all(cells.sum(axis=1) == 20)

    def test_self_prediction(self):
        gallery = make_gallery(5, 3)
        model = train_lbph(gallery)
        for chip in gallery.chips[:5]:
            pred = predict_lbph(model, chip)
            assert pred.label == chip.subject_label
            assert pred.distance == 0.0

    def test_translation_closer_than_other_subject(self):
        a = subject_chip(1).pixels
        shifted = np.roll(a, 1, axis=1)
        other = subject_chip(2).pixels
        d_shift = chi_square(lbp_histogram(a), lbp_histogram(shifted))
        d_other = chi_square(lbp_histogram(a), lbp_histogram(other))
        assert d_shift < d_other

    def test_monotone_affine_invariance(self):
        # alpha * I + beta with alpha > 0 preserves all >= comparisons
        rng = np.random.default_rng(17)
        pixels = rng.integers(0, 120, size=(24, 24), dtype=np.uint8)
        mapped = np.clip(pixels.astype(np.float64) * 2.0 + 10.0, 0, 255).astype(np.uint8)
        assert np.array_equal(lbp_codes(pixels), lbp_codes(mapped))
        assert np.array_equal(lbp_histogram(pixels), lbp_histogram(mapped))

    def test_ten_subject_accuracy(self):
        gallery = make_gallery(10, 3)
        model = train_lbph(gallery)
        probes = [subject_chip(s, variant=7) for s in range(10)]
        assert recognition_accuracy(model, probes) == 1.0

    def test_chip_smaller_than_grid_rejected(self):
        chips = [FaceChip(np.zeros((4, 4), dtype=np.uint8), subject_label=i) for i in range(2)]
        with pytest.raises(ValueError):
            train_lbph(Gallery(chips=chips))


class TestChiSquare:
    def test_properties(self):
        rng = np.random.default_rng(19)
        a = rng.integers(0, 50, size=256).astype(np.float64)
        b = rng.integers(0, 50, size=256).astype(np.float64)
        assert chi_square(a, b) == pytest.approx(chi_square(b, a))
        assert chi_square(a, b) >= 0.0
        assert chi_square(a, a) == 0.0

    def test_zero_iff_equal(self):
        a = np.array([1.0, 2.0, 0.0])
        b = np.array([1.0, 2.0, 1.0])
        assert chi_square(a, b) > 0.0


# ── accuracy semantics ───────────────────────────────────────────────────

class TestRecognitionAccuracy:
    def test_training_probes_are_perfect(self):
        gallery = make_gallery(4, 3)
        model = train_eigen(gallery, k=8)
        assert recognition_accuracy(model, gallery.chips) == 1.0

    def test_adversarial_labels_give_zero(self):
        gallery = make_gallery(3, 3)
        model = train_eigen(gallery, k=6)
        probes = [
            FaceChip(subject_chip(s).pixels.copy(), subject_label=(s + 1) % 3)
            for s in range(3)
        ]
        assert recognition_accuracy(model, probes) == 0.0

    def test_gated_frontal_at_least_ungated(self):
        # Rotated probes are horizontally compressed fields; near-frontal
        # probes must never score below the mixed pool.
        from msface.synth import render_face_gray
        from msface.geometry import HeadPose, Vec3

        def chip_at(subject: int, yaw: float) -> FaceChip:
            pose = HeadPose.from_angles(Vec3(0, 0, 900), yaw, 0)
            frame = render_face_gray(subject, pose, size=64)
            chip = normalize_chip(frame, (0, 0, 64, 64), out_size=CHIP)
            chip.subject_label = subject
            return chip

        subjects = range(6)
        gallery = Gallery(chips=[chip_at(s, 0.0) for s in subjects])
        model = train_eigen(gallery, k=6)
        gated = [chip_at(s, yaw) for s in subjects for yaw in (5.0, 10.0, 15.0)]
        ungated = gated + [chip_at(s, yaw) for s in subjects for yaw in (40.0, 55.0, 70.0)]
        acc_gated = recognition_accuracy(model, gated)
        acc_ungated = recognition_accuracy(model, ungated)
        assert acc_gated >= acc_ungated
        assert acc_gated == 1.0

    def test_no_probes_rejected(self):
        model = train_eigen(make_gallery(2, 2), k=2)
        with pytest.raises(ValueError):
            recognition_accuracy(model, [])


# ── persistence and gallery loading ──────────────────────────────────────

class TestModelIo:
    @pytest.mark.parametrize("kind", ["eigen", "fisher", "lbph"])
    def test_roundtrip_predictions_identical(self, tmp_path, kind):
        gallery = make_gallery(4, 3)
        if kind == "eigen":
            model = train_eigen(gallery, k=6)
        elif kind == "fisher":
            model = train_fisher(gallery)
        else:
            model = train_lbph(gallery)
        path = tmp_path / f"{kind}.msrm"
        save_model(path, model)
        assert path.read_bytes()[:5] == b"MSRM1"
        back = load_model(path)
        probe = subject_chip(2, variant=3)
        assert predict(back, probe) == predict(model, probe)
        assert back.label_names == model.label_names

    def test_save_deterministic(self, tmp_path):
        gallery = make_gallery(3, 3)
        model = train_eigen(gallery, k=4)
        p1, p2 = tmp_path / "a.msrm", tmp_path / "b.msrm"
        save_model(p1, model)
        save_model(p2, model)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.msrm"
        path.write_bytes(b"XXXXX" + b"\x00" * 16)
        with pytest.raises(ValueError):
            load_model(path)


class TestLoadGallery:
    def test_orl_style_tree(self, tmp_path):
        for s in (1, 2):
            d = tmp_path / f"subject_{s}"
            d.mkdir()
            for v in range(3):
                write_pgm(d / f"{v:02d}.pgm", subject_chip(s, v, size=(92, 112)).pixels)
        gallery = load_gallery(tmp_path, chip_size=(92, 112))
        assert sorted(set(gallery.labels)) == [1, 2]
        assert len(gallery.chips) == 6
        assert gallery.chip_size == (92, 112)
        assert gallery.label_names[1] == "subject_1"

    def test_empty_tree_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            load_gallery(tmp_path)
