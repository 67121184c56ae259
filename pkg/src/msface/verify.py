"""Verification-mode scoring: ROC curves, EER, and FRR at a fixed FAR.

Scores are distance-like by default (lower = more similar); similarity
scores are negated on the way in so a single accept-if-score-at-most-
threshold sweep covers both polarities.  The curve is evaluated at every
distinct score plus -inf/+inf sentinel endpoints.  Sentinels exist for the
curve shape and EER interpolation; FRR-at-FAR treats only finite observed
scores as honest operating thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np


@dataclass
class ScoreSet:
    """Genuine and impostor trial scores with a shared polarity."""

    genuine: list[float]
    impostor: list[float]
    polarity: str = "distance"  # "distance" (lower = better) or "similarity"

    def __post_init__(self) -> None:
        if self.polarity not in ("distance", "similarity"):
            raise ValueError(f"unknown polarity {self.polarity!r}")

    def as_distances(self) -> tuple[np.ndarray, np.ndarray]:
        g = np.asarray(self.genuine, dtype=np.float64)
        i = np.asarray(self.impostor, dtype=np.float64)
        if self.polarity == "similarity":
            return -g, -i
        return g, i


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    far: float
    frr: float


@dataclass
class VerifyReport:
    eer: float
    frr_at_far: dict[float, float]
    curve: list[RocPoint]
    frr_at_far_flagged: dict[float, bool] = field(default_factory=dict)
    excluded_subjects: list[int] = field(default_factory=list)


def roc(scores: ScoreSet) -> list[RocPoint]:
    """ROC sweep: accept iff score <= threshold (distance polarity).

    Thresholds are every distinct score plus sentinels; the returned list is
    ordered strict-to-permissive, so FAR is non-decreasing and FRR
    non-increasing along it.
    """
    g, i = scores.as_distances()
    if len(g) == 0 or len(i) == 0:
        raise ValueError("both genuine and impostor scores are required")
    thresholds = np.concatenate(([-np.inf], np.unique(np.concatenate([g, i])), [np.inf]))
    g_sorted = np.sort(g)
    i_sorted = np.sort(i)
    points = []
    for t in thresholds:
        accepted_g = int(np.searchsorted(g_sorted, t, side="right"))
        accepted_i = int(np.searchsorted(i_sorted, t, side="right"))
        far = accepted_i / len(i)
        frr = (len(g) - accepted_g) / len(g)
        points.append(RocPoint(threshold=float(t), far=float(far), frr=float(frr)))
    return points


def eer(curve: Sequence[RocPoint]) -> float:
    """Equal error rate: interpolated crossing of FAR and FRR along the curve."""
    if len(curve) < 2:
        raise ValueError("EER needs a curve with at least 2 points")
    for k in range(len(curve)):
        d = curve[k].far - curve[k].frr
        if d == 0.0:
            return curve[k].far
        if d > 0.0:
            if k == 0:
                return curve[0].far
            p0, p1 = curve[k - 1], curve[k]
            d0 = p0.far - p0.frr
            d1 = p1.far - p1.frr
            alpha = -d0 / (d1 - d0)
            return p0.far + alpha * (p1.far - p0.far)
    return curve[-1].far


def frr_at_far(curve: Sequence[RocPoint], far_target: float) -> tuple[float, bool]:
    """FRR at the most permissive finite threshold with FAR <= target.

    When even the strictest finite threshold exceeds the target, returns the
    FRR there with the flag set; the flag is also set when the target lies
    below the 1/N quantization floor of the impostor set, where an empirical
    curve cannot distinguish the target from zero.
    """
    if not (0.0 < far_target < 1.0):
        raise ValueError(f"far_target must be in (0, 1), got {far_target}")
    finite = [p for p in curve if np.isfinite(p.threshold)]
    if not finite:
        raise ValueError("curve has no finite-threshold operating points")
    eligible = [p for p in finite if p.far <= far_target]
    smallest_positive_far = min((p.far for p in finite if p.far > 0.0), default=1.0)
    floor_flag = far_target < smallest_positive_far
    if not eligible:
        strictest = min(finite, key=lambda p: p.threshold)
        return (strictest.frr, True)
    best = max(eligible, key=lambda p: p.threshold)
    return (best.frr, floor_flag)


def enrollment_protocol(
    chips_by_subject: dict[int, Sequence],
    n_enroll: int = 3,
    matcher: Callable | None = None,
) -> tuple[ScoreSet, list[int]]:
    """First-n-enroll verification trials over per-subject frontal chips.

    The first `n_enroll` chips of each subject enroll it; every remaining
    chip scores against every enrolled subject (minimum distance over that
    subject's enrolled chips).  Same-subject scores are genuine trials, the
    rest impostor trials.  Subjects without n_enroll + 1 chips are excluded
    and reported.
    """
    if matcher is None:
        matcher = chip_distance
    enrolled: dict[int, list] = {}
    probes: list[tuple[int, object]] = []
    excluded: list[int] = []
    for subject in sorted(chips_by_subject):
        chips = list(chips_by_subject[subject])
        if len(chips) < n_enroll + 1:
            excluded.append(subject)
            continue
        enrolled[subject] = chips[:n_enroll]
        probes.extend((subject, chip) for chip in chips[n_enroll:])
    if len(enrolled) < 2:
        raise ValueError(
            f"need at least 2 enrollable subjects for impostor trials, got {len(enrolled)}"
        )
    genuine: list[float] = []
    impostor: list[float] = []
    for true_subject, chip in probes:
        for candidate, gallery in enrolled.items():
            score = min(matcher(chip, g) for g in gallery)
            (genuine if candidate == true_subject else impostor).append(float(score))
    return ScoreSet(genuine=genuine, impostor=impostor, polarity="distance"), excluded


def chip_distance(a, b) -> float:
    """Euclidean pixel distance between two same-size chips (default matcher)."""
    pa = np.asarray(a.pixels if hasattr(a, "pixels") else a, dtype=np.float64)
    pb = np.asarray(b.pixels if hasattr(b, "pixels") else b, dtype=np.float64)
    if pa.shape != pb.shape:
        raise ValueError(f"chip shapes differ: {pa.shape} vs {pb.shape}")
    return float(np.linalg.norm(pa - pb))


def report(scores: ScoreSet, far_targets: Iterable[float] = (0.001, 0.01)) -> VerifyReport:
    """Full report: curve, EER, and FRR at each requested FAR level."""
    curve = roc(scores)
    frrs: dict[float, float] = {}
    flags: dict[float, bool] = {}
    for target in far_targets:
        value, flagged = frr_at_far(curve, target)
        frrs[target] = value
        flags[target] = flagged
    return VerifyReport(eer=eer(curve), frr_at_far=frrs, curve=curve, frr_at_far_flagged=flags)


def write_scores(path: str | Path, scores: ScoreSet) -> None:
    lines = ["kind,score"]
    lines.extend(f"genuine,{s:.9g}" for s in scores.genuine)
    lines.extend(f"impostor,{s:.9g}" for s in scores.impostor)
    Path(path).write_text("\n".join(lines) + "\n")


def read_scores(path: str | Path, polarity: str = "distance") -> ScoreSet:
    lines = [ln.strip() for ln in Path(path).read_text().split("\n") if ln.strip()]
    if not lines or lines[0].replace(" ", "") != "kind,score":
        raise ValueError(f"{path}: expected header 'kind,score'")
    genuine: list[float] = []
    impostor: list[float] = []
    for ln in lines[1:]:
        kind, value = ln.split(",")
        if kind == "genuine":
            genuine.append(float(value))
        elif kind == "impostor":
            impostor.append(float(value))
        else:
            raise ValueError(f"{path}: unknown score kind {kind!r}")
    return ScoreSet(genuine=genuine, impostor=impostor, polarity=polarity)


def write_curve(path: str | Path, curve: Sequence[RocPoint]) -> None:
    lines = ["threshold,far,frr"]
    lines.extend(f"{p.threshold:.9g},{p.far:.9g},{p.frr:.9g}" for p in curve)
    Path(path).write_text("\n".join(lines) + "\n")
