"""Face localization: rectangle-feature sliding-window detection plus the
depth-head-pose (DHP) assisted variant.

The baseline detector is the classic boosted-cascade construction: rectangle
(Haar-like) features over an integral image, decision stumps boosted into
stages, a window pyramid grown by a scale factor, and overlap grouping of
raw hits.  The DHP variant estimates head pose from the synchronized depth
frame first; frames failing the frontal gate never touch the detector, and
accepted frames only scan a head-sized region of interest around the
projected head center.

Feature values are normalized by window area and standard deviation, so a
trained cascade transfers across window scales and global contrast changes.
"""

from __future__ import annotations

import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .forest import PoseForest, estimate
from .frames import DepthFrame, GrayFrame
from .geometry import CameraIntrinsics, GateDecision, project

BASE_WINDOW = 24
CASCADE_MAGIC = b"MSHC1"

FEATURE_KINDS = ("two_h", "two_v", "three_h", "three_v")


@dataclass
class IntegralImage:
    """Summed-area tables of pixel values and squared values (exact ints)."""

    ii: np.ndarray   # (h+1, w+1) int64
    ii2: np.ndarray  # (h+1, w+1) int64
    width: int
    height: int

    def rect_sum(self, x: int, y: int, w: int, h: int) -> int:
        t = self.ii
        return int(t[y + h, x + w] - t[y, x + w] - t[y + h, x] + t[y, x])

    def rect_sum_sq(self, x: int, y: int, w: int, h: int) -> int:
        t = self.ii2
        return int(t[y + h, x + w] - t[y, x + w] - t[y + h, x] + t[y, x])


def integral_image(frame: GrayFrame | np.ndarray) -> IntegralImage:
    pixels = frame.pixels if isinstance(frame, GrayFrame) else np.asarray(frame)
    p = pixels.astype(np.int64)
    h, w = p.shape
    ii = np.zeros((h + 1, w + 1), dtype=np.int64)
    ii2 = np.zeros((h + 1, w + 1), dtype=np.int64)
    ii[1:, 1:] = p.cumsum(axis=0).cumsum(axis=1)
    ii2[1:, 1:] = (p * p).cumsum(axis=0).cumsum(axis=1)
    return IntegralImage(ii=ii, ii2=ii2, width=w, height=h)


@dataclass(frozen=True)
class HaarFeature:
    """Weighted rectangles relative to the 24x24 base window.

    Weights are chosen so the weighted areas sum to zero: the response on
    any constant image is exactly 0.
    """

    kind: str
    rects: tuple[tuple[tuple[int, int, int, int], int], ...]

    def __post_init__(self) -> None:
        weighted_area = sum(w * r[2] * r[3] for r, w in self.rects)
        if weighted_area != 0:
            raise ValueError(f"feature weighted areas sum to {weighted_area}, not 0")


def make_feature(kind: str, x: int, y: int, part_w: int, part_h: int) -> HaarFeature:
    """Build one feature from its top-left corner and per-part dimensions."""
    if kind == "two_h":
        rects = (((x, y, part_w, part_h), +1), ((x + part_w, y, part_w, part_h), -1))
    elif kind == "two_v":
        rects = (((x, y, part_w, part_h), +1), ((x, y + part_h, part_w, part_h), -1))
    elif kind == "three_h":
        rects = (
            ((x, y, part_w, part_h), +1),
            ((x + part_w, y, part_w, part_h), -2),
            ((x + 2 * part_w, y, part_w, part_h), +1),
        )
    elif kind == "three_v":
        rects = (
            ((x, y, part_w, part_h), +1),
            ((x, y + part_h, part_w, part_h), -2),
            ((x, y + 2 * part_h, part_w, part_h), +1),
        )
    else:
        raise ValueError(f"unknown feature kind {kind!r}")
    return HaarFeature(kind=kind, rects=rects)


def random_features(rng: np.random.Generator, count: int) -> list[HaarFeature]:
    """Sample `count` features uniformly over kinds and placements."""
    features = []
    while len(features) < count:
        kind = FEATURE_KINDS[int(rng.integers(0, len(FEATURE_KINDS)))]
        nx = 3 if kind == "three_h" else 2 if kind == "two_h" else 1
        ny = 3 if kind == "three_v" else 2 if kind == "two_v" else 1
        part_w = int(rng.integers(1, BASE_WINDOW // nx + 1))
        part_h = int(rng.integers(1, BASE_WINDOW // ny + 1))
        x = int(rng.integers(0, BASE_WINDOW - nx * part_w + 1))
        y = int(rng.integers(0, BASE_WINDOW - ny * part_h + 1))
        features.append(make_feature(kind, x, y, part_w, part_h))
    return features


@dataclass
class Stump:
    feature: HaarFeature
    threshold: float
    polarity: int  # +1: value < threshold is a face; -1: value > threshold
    alpha: float


@dataclass
class BoostedStage:
    stumps: list[Stump]
    stage_threshold: float

    def __post_init__(self) -> None:
        if any(s.alpha <= 0 for s in self.stumps):
            raise ValueError("stump alphas must be positive")


@dataclass
class Cascade:
    stages: list[BoostedStage]
    base_window: int = BASE_WINDOW
    warning: bool = False

    def __post_init__(self) -> None:
        if not self.stages:
            raise ValueError("cascade needs at least one stage")


@dataclass
class DetBox:
    x: int
    y: int
    w: int
    h: int
    score: float = 0.0


class DetectorStats:
    """Per-run accumulator counting real detector invocations."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.detector_invocations = 0

    def count_detector_call(self) -> None:
        with self._lock:
            self.detector_invocations += 1


@dataclass
class DhpDetection:
    gate: GateDecision
    boxes: list[DetBox]
    dhp_ms: float = 0.0


@dataclass
class CascadeParams:
    n_stages: int = 4
    stumps_per_stage: int = 20
    stage_fpr_target: float = 0.5
    feature_pool: int = 2000
    min_positive_rate: float = 0.99
    seed: int = 0


# ── training ─────────────────────────────────────────────────────────────

def _chip_matrix(chips: list[GrayFrame] | list[np.ndarray]) -> np.ndarray:
    out = []
    for c in chips:
        pixels = c.pixels if isinstance(c, GrayFrame) else np.asarray(c)
        if pixels.shape != (BASE_WINDOW, BASE_WINDOW):
            raise ValueError(
                f"training chips must be {BASE_WINDOW}x{BASE_WINDOW}, got {pixels.shape}"
            )
        out.append(pixels.astype(np.uint8))
    return np.stack(out)


def _feature_values(chips: np.ndarray, features: list[HaarFeature]) -> np.ndarray:
    """(n_chips, n_features) normalized feature values on base-size chips."""
    n = chips.shape[0]
    p = chips.astype(np.int64)
    ii = np.zeros((n, BASE_WINDOW + 1, BASE_WINDOW + 1), dtype=np.int64)
    ii[:, 1:, 1:] = p.cumsum(axis=1).cumsum(axis=2)
    area = BASE_WINDOW * BASE_WINDOW
    total = ii[:, -1, -1].astype(np.float64)
    total_sq = (p.astype(np.float64) ** 2).sum(axis=(1, 2))
    mean = total / area
    var = np.maximum(total_sq / area - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), 1e-6)
    values = np.zeros((n, len(features)), dtype=np.float64)
    for j, feature in enumerate(features):
        raw = np.zeros(n, dtype=np.int64)
        for (x, y, w, h), weight in feature.rects:
            raw += weight * (
                ii[:, y + h, x + w] - ii[:, y, x + w] - ii[:, y + h, x] + ii[:, y, x]
            )
        values[:, j] = raw / (area * std)
    return values


def _best_stump(
    values: np.ndarray, order: np.ndarray, labels: np.ndarray, weights: np.ndarray
) -> tuple[int, float, int, float]:
    """Exhaustive threshold scan; returns (feature_idx, threshold, polarity, error)."""
    n, n_features = values.shape
    wo = weights[order]                      # (n, F) weights in value order
    yo = labels[order]
    sorted_vals = np.take_along_axis(values, order, axis=0)
    cum_pos = np.cumsum(wo * yo, axis=0)
    cum_neg = np.cumsum(wo * (1 - yo), axis=0)
    total_pos = cum_pos[-1]
    total_neg = cum_neg[-1]
    # classify "value <= cut as face": misses positives above, accepts negatives below
    err_below = (total_pos - cum_pos) + cum_neg
    err_above = cum_pos + (total_neg - cum_neg)
    # cuts between equal consecutive values cannot be realized by a threshold
    invalid = np.zeros_like(err_below, dtype=bool)
    invalid[:-1] = sorted_vals[:-1] == sorted_vals[1:]
    err_below[invalid] = np.inf
    err_above[invalid] = np.inf
    best_b = np.argmin(err_below, axis=0)
    best_a = np.argmin(err_above, axis=0)
    cols = np.arange(n_features)
    eb = err_below[best_b, cols]
    ea = err_above[best_a, cols]
    use_below = eb <= ea
    errors = np.where(use_below, eb, ea)
    j = int(np.argmin(errors))
    i = int(best_b[j] if use_below[j] else best_a[j])
    if i + 1 < n:
        threshold = 0.5 * (sorted_vals[i, j] + sorted_vals[i + 1, j])
    else:
        threshold = sorted_vals[i, j] + 1e-9
    polarity = 1 if use_below[j] else -1
    return j, float(threshold), polarity, float(errors[j])


def train_cascade(
    positives: list, negatives: list, params: CascadeParams | None = None
) -> Cascade:
    """Boosted-stump cascade over random rectangle features.

    Stage thresholds are lowered until at least `min_positive_rate` of the
    positives pass; negatives surviving earlier stages feed the next stage.
    If a stage cannot reach `stage_fpr_target` with its stump budget the
    cascade built so far is returned with the warning flag set.
    """
    params = params or CascadeParams()
    if len(positives) < 50 or len(negatives) < 50:
        raise ValueError(
            f"need >= 50 positives and negatives, got {len(positives)}/{len(negatives)}"
        )
    pos = _chip_matrix(positives)
    neg = _chip_matrix(negatives)
    rng = np.random.default_rng(params.seed)
    stages: list[BoostedStage] = []
    warning = False
    for _stage_idx in range(params.n_stages):
        chips = np.concatenate([pos, neg])
        labels = np.concatenate([np.ones(len(pos), dtype=np.int8), np.zeros(len(neg), dtype=np.int8)])
        features = random_features(rng, params.feature_pool)
        values = _feature_values(chips, features)
        order = np.argsort(values, axis=0, kind="stable")
        weights = np.where(labels == 1, 0.5 / labels.sum(), 0.5 / (len(labels) - labels.sum()))
        stumps: list[Stump] = []
        scores = np.zeros(len(chips))
        stage_threshold = 0.0
        reached = False
        for _round in range(params.stumps_per_stage):
            j, threshold, polarity, error = _best_stump(values, order, labels, weights)
            error = min(max(error, 1e-10), 1.0 - 1e-10)
            if error >= 0.5:
                warning = True
                break
            beta = error / (1.0 - error)
            alpha = float(np.log(1.0 / beta))
            predicted = (polarity * values[:, j] < polarity * threshold).astype(np.int8)
            correct = predicted == labels
            weights = weights * np.where(correct, beta, 1.0)
            weights = weights / weights.sum()
            stumps.append(Stump(features[j], threshold, polarity, alpha))
            scores = scores + alpha * predicted
            pos_scores = np.sort(scores[labels == 1])
            cut = int(np.floor((1.0 - params.min_positive_rate) * len(pos_scores)))
            stage_threshold = float(pos_scores[cut])
            neg_scores = scores[labels == 0]
            fpr = float(np.mean(neg_scores >= stage_threshold))
            if fpr <= params.stage_fpr_target:
                reached = True
                break
        if not stumps:
            warning = True
            break
        stages.append(BoostedStage(stumps=stumps, stage_threshold=stage_threshold))
        if not reached:
            warning = True
            break
        pos_pass = scores[labels == 1] >= stage_threshold
        neg_pass = scores[labels == 0] >= stage_threshold
        pos = pos[pos_pass]
        neg = neg[neg_pass]
        if len(neg) < 10 or len(pos) < 10:
            break  # ran out of training signal; cascade is done
    if not stages:
        raise ValueError("could not train any stage (inseparable data?)")
    return Cascade(stages=stages, base_window=BASE_WINDOW, warning=warning)


# ── detection ────────────────────────────────────────────────────────────

def _window_scores(
    integral: IntegralImage,
    cascade: Cascade,
    side: int,
    xs: np.ndarray,
    ys: np.ndarray,
    min_window_std: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate all windows of one scale; returns (alive mask, margin score)."""
    scale = side / cascade.base_window
    area = side * side
    s = integral.ii
    s2 = integral.ii2
    total = s[ys + side, xs + side] - s[ys, xs + side] - s[ys + side, xs] + s[ys, xs]
    total2 = s2[ys + side, xs + side] - s2[ys, xs + side] - s2[ys + side, xs] + s2[ys, xs]
    mean = total / area
    var = np.maximum(total2 / area - mean * mean, 0.0)
    std = np.sqrt(var)
    alive = std >= min_window_std
    margin = np.zeros(len(xs), dtype=np.float64)
    denom = area * np.maximum(std, 1e-6)
    for stage in cascade.stages:
        scores = np.zeros(len(xs), dtype=np.float64)
        idx = np.flatnonzero(alive)
        if len(idx) == 0:
            return alive, margin
        axs = xs[idx]
        ays = ys[idx]
        for stump in stage.stumps:
            raw = np.zeros(len(idx), dtype=np.float64)
            scaled = []
            for (fx, fy, fw, fh), weight in stump.feature.rects:
                rx = int(round(fx * scale))
                ry = int(round(fy * scale))
                rw = max(1, int(round(fw * scale)))
                rh = max(1, int(round(fh * scale)))
                rx = min(rx, side - rw)
                ry = min(ry, side - rh)
                scaled.append(((rx, ry, rw, rh), weight))
            # compensate rounding so a constant window still scores zero
            areas = [w * r[2] * r[3] for r, w in scaled]
            correction = sum(areas[1:])
            (r0, w0) = scaled[0]
            w0_eff = -correction / (r0[2] * r0[3])
            for n_r, ((rx, ry, rw, rh), weight) in enumerate(scaled):
                eff = w0_eff if n_r == 0 else weight
                raw += eff * (
                    s[ays + ry + rh, axs + rx + rw]
                    - s[ays + ry, axs + rx + rw]
                    - s[ays + ry + rh, axs + rx]
                    + s[ays + ry, axs + rx]
                )
            value = raw / denom[idx]
            votes = (stump.polarity * value < stump.polarity * stump.threshold)
            scores[idx] += stump.alpha * votes
        passed = scores >= stage.stage_threshold
        margin += np.where(alive & passed, scores - stage.stage_threshold, 0.0)
        alive &= passed
    return alive, margin


def detect_haar(
    frame: GrayFrame,
    cascade: Cascade,
    scale_factor: float = 1.1,
    min_neighbors: int = 3,
    min_window_std: float = 1.0,
    stats: DetectorStats | None = None,
) -> list[DetBox]:
    """Multi-scale sliding-window detection; returns grouped boxes by score."""
    if scale_factor <= 1.0:
        raise ValueError(f"scale_factor must exceed 1, got {scale_factor}")
    if stats is not None:
        stats.count_detector_call()
    h, w = frame.pixels.shape
    if min(h, w) < cascade.base_window:
        return []
    integral = integral_image(frame)
    candidates: list[DetBox] = []
    side = cascade.base_window
    seen_sides = set()
    scale = 1.0
    while True:
        side = int(round(cascade.base_window * scale))
        if side > min(h, w):
            break
        if side not in seen_sides:
            seen_sides.add(side)
            step = max(1, int(round(side * 0.1)))
            xs0 = np.arange(0, w - side + 1, step)
            ys0 = np.arange(0, h - side + 1, step)
            gx, gy = np.meshgrid(xs0, ys0)
            xs = gx.ravel()
            ys = gy.ravel()
            alive, margin = _window_scores(integral, cascade, side, xs, ys, min_window_std)
            for i in np.flatnonzero(alive):
                candidates.append(
                    DetBox(x=int(xs[i]), y=int(ys[i]), w=side, h=side, score=float(margin[i]))
                )
        scale *= scale_factor
    return group_boxes(candidates, min_neighbors)


def box_iou(a: DetBox, b: DetBox) -> float:
    x0 = max(a.x, b.x)
    y0 = max(a.y, b.y)
    x1 = min(a.x + a.w, b.x + b.w)
    y1 = min(a.y + a.h, b.y + b.h)
    if x0 >= x1 or y0 >= y1:
        return 0.0
    inter = (x1 - x0) * (y1 - y0)
    union = a.w * a.h + b.w * b.h - inter
    return inter / union


def group_boxes(
    candidates: list[DetBox], min_neighbors: int = 3, iou_threshold: float = 0.3
) -> list[DetBox]:
    """Transitively merge overlapping candidates; emit mean boxes of clusters
    with at least `min_neighbors` members."""
    n = len(candidates)
    if n == 0:
        return []
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if box_iou(candidates[i], candidates[j]) >= iou_threshold:
                parent[find(i)] = find(j)
    clusters: dict[int, list[DetBox]] = {}
    for i in range(n):
        clusters.setdefault(find(i), []).append(candidates[i])
    out = []
    for members in clusters.values():
        if len(members) < min_neighbors:
            continue
        out.append(
            DetBox(
                x=int(round(np.mean([b.x for b in members]))),
                y=int(round(np.mean([b.y for b in members]))),
                w=int(round(np.mean([b.w for b in members]))),
                h=int(round(np.mean([b.h for b in members]))),
                score=float(len(members)),
            )
        )
    out.sort(key=lambda b: (-b.score, b.x, b.y, b.w))
    return out


DEFAULT_HEAD_SIZE_MM = 300.0


def detect_dhp(
    depth: DepthFrame,
    gray: GrayFrame,
    forest: PoseForest,
    cascade: Cascade,
    k: CameraIntrinsics,
    threshold_deg: float = 15.0,
    k_head_mm: float = DEFAULT_HEAD_SIZE_MM,
    scale_factor: float = 1.1,
    min_neighbors: int = 3,
    stats: DetectorStats | None = None,
) -> DhpDetection:
    """Pose-gated detection: estimate head pose from depth, gate, then scan
    only a head-sized ROI around the projected head center.

    A frame with no detectable head is reported as a rejected gate with a
    180 degree offset; the detector is never invoked for rejected frames.
    """
    from .geometry import gate as gate_fn

    t0 = time.perf_counter()
    pose = estimate(forest, depth, k)
    dhp_ms = (time.perf_counter() - t0) * 1000.0
    if pose is None:
        return DhpDetection(
            gate=GateDecision(offset_deg=180.0, threshold_deg=threshold_deg, accepted=False),
            boxes=[],
            dhp_ms=dhp_ms,
        )
    decision = gate_fn(pose, threshold_deg)
    if not decision.accepted:
        return DhpDetection(gate=decision, boxes=[], dhp_ms=dhp_ms)
    u, v = project(pose.center, k)
    side = int(round(k_head_mm * k.fx / pose.center.z))
    x0 = max(0, int(round(u - side / 2)))
    y0 = max(0, int(round(v - side / 2)))
    x1 = min(gray.width, x0 + side)
    y1 = min(gray.height, y0 + side)
    if x1 - x0 < cascade.base_window or y1 - y0 < cascade.base_window:
        return DhpDetection(gate=decision, boxes=[], dhp_ms=dhp_ms)
    roi = GrayFrame(x1 - x0, y1 - y0, gray.pixels[y0:y1, x0:x1], gray.timestamp_us)
    boxes = detect_haar(
        roi, cascade, scale_factor=scale_factor, min_neighbors=min_neighbors, stats=stats
    )
    shifted = [DetBox(b.x + x0, b.y + y0, b.w, b.h, b.score) for b in boxes]
    return DhpDetection(gate=decision, boxes=shifted, dhp_ms=dhp_ms)


# ── serialization ────────────────────────────────────────────────────────

def save_cascade(path: str | Path, cascade: Cascade) -> None:
    """Little-endian binary: magic, version, base window, warning flag,
    stage count, then per stage the threshold and stump list."""
    blob = CASCADE_MAGIC + struct.pack(
        "<BHBI", 1, cascade.base_window, int(cascade.warning), len(cascade.stages)
    )
    for stage in cascade.stages:
        blob += struct.pack("<dI", stage.stage_threshold, len(stage.stumps))
        for stump in stage.stumps:
            kind_idx = FEATURE_KINDS.index(stump.feature.kind)
            blob += struct.pack("<BB", kind_idx, len(stump.feature.rects))
            for (x, y, w, h), weight in stump.feature.rects:
                blob += struct.pack("<BBBBb", x, y, w, h, weight)
            blob += struct.pack("<dbd", stump.threshold, stump.polarity, stump.alpha)
    Path(path).write_bytes(blob)


def load_cascade(path: str | Path) -> Cascade:
    data = Path(path).read_bytes()
    if data[:5] != CASCADE_MAGIC:
        raise ValueError(f"{path}: not a cascade file")
    version, base_window, warning, n_stages = struct.unpack_from("<BHBI", data, 5)
    if version != 1:
        raise ValueError(f"{path}: unsupported cascade version {version}")
    offset = 5 + 8
    stages = []
    for _ in range(n_stages):
        stage_threshold, n_stumps = struct.unpack_from("<dI", data, offset)
        offset += 12
        stumps = []
        for _ in range(n_stumps):
            kind_idx, n_rects = struct.unpack_from("<BB", data, offset)
            offset += 2
            rects = []
            for _ in range(n_rects):
                x, y, w, h, weight = struct.unpack_from("<BBBBb", data, offset)
                offset += 5
                rects.append(((x, y, w, h), weight))
            threshold, polarity, alpha = struct.unpack_from("<dbd", data, offset)
            offset += 17
            stumps.append(
                Stump(
                    feature=HaarFeature(kind=FEATURE_KINDS[kind_idx], rects=tuple(rects)),
                    threshold=threshold,
                    polarity=polarity,
                    alpha=alpha,
                )
            )
        stages.append(BoostedStage(stumps=stumps, stage_threshold=stage_threshold))
    return Cascade(stages=stages, base_window=base_window, warning=bool(warning))
