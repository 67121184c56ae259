"""Random regression forest mapping depth patches to head-pose votes.

Each tree routes a square depth patch by comparing mean depths of two
sub-rectangles against a learned threshold; a leaf stores the mean of the
training votes that reached it (offset from patch center to head center,
plus yaw/pitch/roll).  Features are differences of means, so routing is
invariant to constant depth shifts.  Training minimizes the summed vote
variance of the children at every split (center in mm, angles weighted at
1 mm per degree, i.e. equally).

At estimation time a dense patch grid votes; patches without enough depth
structure (flat background) are skipped, votes from high-variance leaves
are discarded, and the survivors are aggregated with a per-coordinate-group
trimmed mean.  Fewer than `min_votes` surviving votes means no head.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frames import DepthFrame
from .geometry import CameraIntrinsics, HeadPose, Vec3, euler_to_direction, project

FOREST_MAGIC = b"MSPF1"


@dataclass(frozen=True)
class PatchTest:
    """Two sub-rectangles (x, y, w, h in patch coordinates) and a millimeter
    threshold on their mean-depth difference."""

    rect1: tuple[int, int, int, int]
    rect2: tuple[int, int, int, int]
    tau: float


@dataclass
class ForestParams:
    n_trees: int = 10
    max_depth: int = 12
    min_samples: int = 20
    n_candidate_tests: int = 500
    patch_size: int = 80
    patches_per_frame: int = 20
    head_radius_mm: float = 120.0
    min_head_fraction: float = 0.5  # head pixels required per training patch
    seed: int = 0
    # estimation knobs
    min_votes: int = 10
    trim_frac: float = 0.2
    min_patch_std_mm: float = 5.0
    trace_percentile: float = 75.0


@dataclass
class RegressionTree:
    """Flat node table; `left`/`right` are node indices, -1 on leaves."""

    kind: np.ndarray        # (n,) uint8, 0 internal / 1 leaf
    rect1: np.ndarray       # (n, 4) uint16
    rect2: np.ndarray       # (n, 4) uint16
    tau: np.ndarray         # (n,) float64
    left: np.ndarray        # (n,) int32
    right: np.ndarray       # (n,) int32
    mean_vote: np.ndarray   # (n, 6) float64: dx, dy, dz, yaw, pitch, roll
    vote_count: np.ndarray  # (n,) uint32
    vote_trace: np.ndarray  # (n,) float64, summed per-dim variance
    parent_var: np.ndarray  # (n,) float64, node variance before the split
    child_var: np.ndarray   # (n,) float64, weighted child variance
    max_depth: int

    def node_test(self, i: int) -> PatchTest:
        return PatchTest(
            rect1=tuple(int(v) for v in self.rect1[i]),
            rect2=tuple(int(v) for v in self.rect2[i]),
            tau=float(self.tau[i]),
        )

    @property
    def n_nodes(self) -> int:
        return len(self.kind)


@dataclass
class PoseForest:
    trees: list[RegressionTree]
    patch_size: int
    params: ForestParams
    max_leaf_trace: float = np.inf

    def __post_init__(self) -> None:
        if not self.trees:
            raise ValueError("forest needs at least one tree")


# ── features ─────────────────────────────────────────────────────────────

def feature_value(patch: np.ndarray, test: PatchTest) -> float:
    """Mean valid depth of rect1 minus mean valid depth of rect2.

    Depth 0 marks invalid samples; a rectangle with no valid sample makes
    the feature undefined (NaN), and callers skip the patch.
    """
    p = np.asarray(patch, dtype=np.float64)
    means = []
    for x, y, w, h in (test.rect1, test.rect2):
        if w <= 0 or h <= 0 or x + w > p.shape[1] or y + h > p.shape[0]:
            raise ValueError(f"rect {(x, y, w, h)} outside {p.shape[1]}x{p.shape[0]} patch")
        window = p[y : y + h, x : x + w]
        valid = window > 0
        if not valid.any():
            return float("nan")
        means.append(window[valid].mean())
    return means[0] - means[1]


@dataclass
class _FrameData:
    """Per-frame integral tables for O(1) masked rectangle means."""

    sum_d: np.ndarray   # (h+1, w+1) float64, depths with invalids zeroed
    sum_d2: np.ndarray  # (h+1, w+1) float64
    count: np.ndarray   # (h+1, w+1) int64, valid-pixel counts
    width: int
    height: int


def _frame_data(frame: DepthFrame) -> _FrameData:
    d = frame.depth_mm.astype(np.float64)
    valid = d > 0
    dz = np.where(valid, d, 0.0)
    h, w = d.shape
    sum_d = np.zeros((h + 1, w + 1))
    sum_d2 = np.zeros((h + 1, w + 1))
    count = np.zeros((h + 1, w + 1), dtype=np.int64)
    sum_d[1:, 1:] = dz.cumsum(axis=0).cumsum(axis=1)
    sum_d2[1:, 1:] = (dz * dz).cumsum(axis=0).cumsum(axis=1)
    count[1:, 1:] = valid.astype(np.int64).cumsum(axis=0).cumsum(axis=1)
    return _FrameData(sum_d=sum_d, sum_d2=sum_d2, count=count, width=w, height=h)


def _corner_offsets(rects: np.ndarray, stride: int) -> np.ndarray:
    """(n, 4) corner offsets (br, tr, bl, tl signs +,-,-,+) per rect within a
    row-major integral of row stride `stride`."""
    x = rects[:, 0].astype(np.int64)
    y = rects[:, 1].astype(np.int64)
    w = rects[:, 2].astype(np.int64)
    h = rects[:, 3].astype(np.int64)
    return np.stack(
        [
            (y + h) * stride + (x + w),
            y * stride + (x + w),
            (y + h) * stride + x,
            y * stride + x,
        ],
        axis=1,
    )


def _gather_rect(flat: np.ndarray, base: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Rectangle sums for base positions (k,) against offsets (k, 4) or (4,)."""
    if offsets.ndim == 1:
        idx = base[:, None] + offsets[None, :]
    else:
        idx = base[:, None] + offsets
    vals = flat[idx]
    return vals[..., 0] - vals[..., 1] - vals[..., 2] + vals[..., 3]


# ── training ─────────────────────────────────────────────────────────────

@dataclass
class _TrainingSet:
    flat_sum: np.ndarray    # concatenated per-frame integral tables
    flat_count: np.ndarray
    bases: np.ndarray       # (P,) flat index of each patch's top-left corner
    votes: np.ndarray       # (P, 6)
    stride: int             # integral row stride (frame width + 1)


def _prepare_training_set(
    frames: list[tuple[DepthFrame, HeadPose]],
    params: ForestParams,
    k: CameraIntrinsics,
    rng: np.random.Generator,
) -> _TrainingSet:
    ps = params.patch_size
    sums = []
    counts = []
    bases = []
    votes = []
    table_size = None
    for f_idx, (frame, pose) in enumerate(frames):
        if frame.width < ps or frame.height < ps:
            raise ValueError(f"frame {f_idx} smaller than patch size {ps}")
        data = _frame_data(frame)
        if table_size is None:
            table_size = data.sum_d.size
        elif data.sum_d.size != table_size:
            raise ValueError("all training frames must share one resolution")
        sums.append(data.sum_d.ravel())
        counts.append(data.count.ravel())
        u, v = project(pose.center, k)
        r_px = 1.5 * params.head_radius_mm * k.fx / pose.center.z
        x_lo = max(0, int(round(u - r_px - ps / 2)))
        x_hi = min(frame.width - ps, int(round(u + r_px - ps / 2)))
        y_lo = max(0, int(round(v - r_px - ps / 2)))
        y_hi = min(frame.height - ps, int(round(v + r_px - ps / 2)))
        if x_hi < x_lo or y_hi < y_lo:
            continue  # head-centered sampling box misses the frame
        # patches must actually sit on the head: count head-band pixels
        # (depth within 1.5 radii of the head center) per candidate patch
        band = 1.5 * params.head_radius_mm
        d_mm = frame.depth_mm.astype(np.float64)
        head_px = (d_mm > 0) & (np.abs(d_mm - pose.center.z) <= band)
        head_int = np.zeros((frame.height + 1, frame.width + 1), dtype=np.int64)
        head_int[1:, 1:] = head_px.astype(np.int64).cumsum(axis=0).cumsum(axis=1)
        n_want = params.patches_per_frame
        xs_all = rng.integers(x_lo, x_hi + 1, size=8 * n_want)
        ys_all = rng.integers(y_lo, y_hi + 1, size=8 * n_want)
        head_counts = (
            head_int[ys_all + ps, xs_all + ps]
            - head_int[ys_all, xs_all + ps]
            - head_int[ys_all + ps, xs_all]
            + head_int[ys_all, xs_all]
        )
        good = head_counts >= params.min_head_fraction * ps * ps
        xs = xs_all[good][:n_want]
        ys = ys_all[good][:n_want]
        stride = frame.width + 1
        table = data.sum_d
        ctable = data.count
        for x, y in zip(xs, ys):
            c = (
                ctable[y + ps, x + ps] - ctable[y, x + ps] - ctable[y + ps, x] + ctable[y, x]
            )
            if c == 0:
                continue
            s = table[y + ps, x + ps] - table[y, x + ps] - table[y + ps, x] + table[y, x]
            z = s / c
            cx_px = x + ps / 2.0
            cy_px = y + ps / 2.0
            center = np.array(
                [(cx_px - k.cx) * z / k.fx, (cy_px - k.cy) * z / k.fy, z]
            )
            offset = pose.center.as_array() - center
            bases.append(f_idx * table_size + y * stride + x)
            votes.append(
                [offset[0], offset[1], offset[2], pose.yaw_deg, pose.pitch_deg, pose.roll_deg]
            )
    if not bases:
        raise ValueError("no usable training patches; are heads inside the frames?")
    return _TrainingSet(
        flat_sum=np.concatenate(sums),
        flat_count=np.concatenate(counts),
        bases=np.array(bases, dtype=np.int64),
        votes=np.array(votes, dtype=np.float64),
        stride=frames[0][0].width + 1,
    )


def _random_rects(rng: np.random.Generator, count: int, patch_size: int) -> np.ndarray:
    w = rng.integers(2, patch_size + 1, size=count)
    h = rng.integers(2, patch_size + 1, size=count)
    x = rng.integers(0, patch_size + 1 - w)
    y = rng.integers(0, patch_size + 1 - h)
    return np.stack([x, y, w, h], axis=1).astype(np.int64)


@dataclass
class _NodeDraft:
    kind: int
    rect1: tuple = (0, 0, 0, 0)
    rect2: tuple = (0, 0, 0, 0)
    tau: float = 0.0
    left: int = -1
    right: int = -1
    mean_vote: np.ndarray = field(default_factory=lambda: np.zeros(6))
    vote_count: int = 0
    vote_trace: float = 0.0
    parent_var: float = 0.0
    child_var: float = 0.0


def _sse(votes: np.ndarray) -> float:
    if len(votes) == 0:
        return 0.0
    return float(np.sum(votes.var(axis=0)) * len(votes))


def _grow_tree(ts: _TrainingSet, params: ForestParams, rng: np.random.Generator) -> RegressionTree:
    n = len(ts.bases)
    boot = rng.integers(0, n, size=n)
    nodes: list[_NodeDraft] = []
    # (node_index, patch_indices, depth) work queue, depth-first
    stack: list[tuple[int, np.ndarray, int]] = []

    def make_leaf(draft: _NodeDraft, idx: np.ndarray) -> None:
        v = ts.votes[idx]
        draft.kind = 1
        draft.mean_vote = v.mean(axis=0)
        draft.vote_count = len(idx)
        draft.vote_trace = float(np.sum(v.var(axis=0)))

    root = _NodeDraft(kind=1)
    nodes.append(root)
    stack.append((0, boot, 0))
    while stack:
        node_idx, idx, depth = stack.pop()
        draft = nodes[node_idx]
        votes = ts.votes[idx]
        sse_total = _sse(votes)
        if (
            depth >= params.max_depth
            or len(idx) < 2 * params.min_samples
            or sse_total <= 1e-12
        ):
            make_leaf(draft, idx)
            continue
        t = params.n_candidate_tests
        r1 = _random_rects(rng, t, params.patch_size)
        r2 = _random_rects(rng, t, params.patch_size)
        off1 = _corner_offsets(r1, ts.stride)
        off2 = _corner_offsets(r2, ts.stride)
        b = ts.bases[idx]
        # rectangle sums for every (patch, candidate) pair, chunked over
        # candidates to bound transient memory at the root node
        features = np.empty((len(idx), t), dtype=np.float64)
        defined = np.empty((len(idx), t), dtype=bool)
        chunk = max(1, 4_000_000 // max(len(idx), 1))
        for c0 in range(0, t, chunk):
            c1 = min(t, c0 + chunk)
            i1 = b[:, None, None] + off1[None, c0:c1, :]
            i2 = b[:, None, None] + off2[None, c0:c1, :]
            sum1 = ts.flat_sum[i1]
            cnt1 = ts.flat_count[i1]
            sum2 = ts.flat_sum[i2]
            cnt2 = ts.flat_count[i2]
            rect_sum1 = sum1[..., 0] - sum1[..., 1] - sum1[..., 2] + sum1[..., 3]
            rect_cnt1 = cnt1[..., 0] - cnt1[..., 1] - cnt1[..., 2] + cnt1[..., 3]
            rect_sum2 = sum2[..., 0] - sum2[..., 1] - sum2[..., 2] + sum2[..., 3]
            rect_cnt2 = cnt2[..., 0] - cnt2[..., 1] - cnt2[..., 2] + cnt2[..., 3]
            with np.errstate(invalid="ignore", divide="ignore"):
                features[:, c0:c1] = rect_sum1 / rect_cnt1 - rect_sum2 / rect_cnt2
            defined[:, c0:c1] = (rect_cnt1 > 0) & (rect_cnt2 > 0)
        candidate_ok = defined.all(axis=0)
        lo = np.where(candidate_ok, features.min(axis=0, where=defined, initial=np.inf), 0.0)
        hi = np.where(candidate_ok, features.max(axis=0, where=defined, initial=-np.inf), 0.0)
        taus = rng.uniform(lo, hi)
        mask = features <= taus[None, :]
        n_left = mask.sum(axis=0)
        n_right = len(idx) - n_left
        maskf = mask.astype(np.float64)
        s1v = maskf.T @ votes                 # (T, 6)
        s2v = maskf.T @ (votes * votes)
        tot1 = votes.sum(axis=0)
        tot2 = (votes * votes).sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            sse_left = np.sum(s2v - s1v * s1v / n_left[:, None], axis=1)
            s1r = tot1[None, :] - s1v
            s2r = tot2[None, :] - s2v
            sse_right = np.sum(s2r - s1r * s1r / n_right[:, None], axis=1)
        score = sse_left + sse_right
        usable = (
            candidate_ok
            & (n_left >= params.min_samples)
            & (n_right >= params.min_samples)
        )
        score = np.where(usable, score, np.inf)
        best = int(np.argmin(score))
        if not np.isfinite(score[best]):
            make_leaf(draft, idx)
            continue
        go_left = mask[:, best]
        draft.kind = 0
        draft.rect1 = tuple(int(v) for v in r1[best])
        draft.rect2 = tuple(int(v) for v in r2[best])
        draft.tau = float(taus[best])
        draft.parent_var = sse_total / len(idx)
        draft.child_var = float(score[best]) / len(idx)
        left_draft = _NodeDraft(kind=1)
        right_draft = _NodeDraft(kind=1)
        nodes.append(left_draft)
        draft.left = len(nodes) - 1
        nodes.append(right_draft)
        draft.right = len(nodes) - 1
        stack.append((draft.right, idx[~go_left], depth + 1))
        stack.append((draft.left, idx[go_left], depth + 1))
    count = len(nodes)
    return RegressionTree(
        kind=np.array([d.kind for d in nodes], dtype=np.uint8),
        rect1=np.array([d.rect1 for d in nodes], dtype=np.uint16),
        rect2=np.array([d.rect2 for d in nodes], dtype=np.uint16),
        tau=np.array([d.tau for d in nodes], dtype=np.float64),
        left=np.array([d.left for d in nodes], dtype=np.int32),
        right=np.array([d.right for d in nodes], dtype=np.int32),
        mean_vote=np.array([d.mean_vote for d in nodes], dtype=np.float64).reshape(count, 6),
        vote_count=np.array([d.vote_count for d in nodes], dtype=np.uint32),
        vote_trace=np.array([d.vote_trace for d in nodes], dtype=np.float64),
        parent_var=np.array([d.parent_var for d in nodes], dtype=np.float64),
        child_var=np.array([d.child_var for d in nodes], dtype=np.float64),
        max_depth=params.max_depth,
    )


def train(
    frames: list[tuple[DepthFrame, HeadPose]],
    params: ForestParams | None = None,
    k: CameraIntrinsics | None = None,
) -> PoseForest:
    """Train the forest on labeled depth frames; deterministic given seed."""
    params = params or ForestParams()
    if k is None:
        raise ValueError("camera intrinsics are required")
    if len(frames) < 10:
        raise ValueError(f"need at least 10 training frames, got {len(frames)}")
    sample_rng = np.random.default_rng([params.seed, 0xFACE])
    ts = _prepare_training_set(frames, params, k, sample_rng)
    trees = []
    for tree_idx in range(params.n_trees):
        tree_rng = np.random.default_rng([params.seed, 1 + tree_idx])
        trees.append(_grow_tree(ts, params, tree_rng))
    leaf_traces = np.concatenate(
        [t.vote_trace[t.kind == 1] for t in trees]
    )
    max_trace = float(np.percentile(leaf_traces, params.trace_percentile))
    return PoseForest(
        trees=trees, patch_size=params.patch_size, params=params, max_leaf_trace=max_trace
    )


# ── estimation ───────────────────────────────────────────────────────────

def _patch_grid(width: int, height: int, patch_size: int) -> tuple[np.ndarray, np.ndarray]:
    stride = max(1, patch_size // 2)
    xs = np.arange(0, width - patch_size + 1, stride)
    ys = np.arange(0, height - patch_size + 1, stride)
    gx, gy = np.meshgrid(xs, ys)
    return gx.ravel(), gy.ravel()


def route_patches(
    forest: PoseForest, frame: DepthFrame, k: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Route the dense patch grid through every tree.

    Returns (patch_centers_3d (P, 3), leaf_idx (P, n_trees) with -1 for
    skipped patches, keep_mask (P,) after the flat-patch filter).
    """
    ps = forest.patch_size
    if frame.width < ps or frame.height < ps:
        raise ValueError(f"frame {frame.width}x{frame.height} smaller than patch size {ps}")
    data = _frame_data(frame)
    xs, ys = _patch_grid(frame.width, frame.height, ps)
    stride = frame.width + 1
    bases = ys.astype(np.int64) * stride + xs.astype(np.int64)
    flat_sum = data.sum_d.ravel()
    flat_sum2 = data.sum_d2.ravel()
    flat_count = data.count.ravel()
    full = _corner_offsets(np.array([[0, 0, ps, ps]]), stride)[0]
    cnt = _gather_rect(flat_count, bases, full)
    s = _gather_rect(flat_sum, bases, full)
    s2 = _gather_rect(flat_sum2, bases, full)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = s / cnt
        var = np.maximum(s2 / cnt - mean * mean, 0.0)
    std = np.sqrt(var)
    # flat patches carry no pose signal; patches whose mean depth sits far
    # behind the nearest surface are background even if their variance is
    # high (head/background boundaries)
    valid_depths = frame.depth_mm[frame.depth_mm > 0]
    near = float(valid_depths.min()) if len(valid_depths) else 0.0
    band = 2.0 * forest.params.head_radius_mm
    keep = (
        (cnt > 0)
        & (std >= forest.params.min_patch_std_mm)
        & (mean <= near + band)
    )
    cx_px = xs + ps / 2.0
    cy_px = ys + ps / 2.0
    with np.errstate(invalid="ignore"):
        centers = np.stack(
            [(cx_px - k.cx) * mean / k.fx, (cy_px - k.cy) * mean / k.fy, mean], axis=1
        )
    n_patches = len(bases)
    leaf_idx = np.full((n_patches, len(forest.trees)), -1, dtype=np.int64)
    active_bases = bases[keep]
    active_rows = np.flatnonzero(keep)
    for t_idx, tree in enumerate(forest.trees):
        off1 = _corner_offsets(tree.rect1.astype(np.int64), stride)
        off2 = _corner_offsets(tree.rect2.astype(np.int64), stride)
        cur = np.zeros(len(active_bases), dtype=np.int64)
        alive = np.ones(len(active_bases), dtype=bool)
        for _ in range(tree.max_depth + 1):
            internal = alive & (tree.kind[cur] == 0)
            rows = np.flatnonzero(internal)
            if len(rows) == 0:
                break
            nodes = cur[rows]
            b = active_bases[rows]
            s1 = _gather_rect(flat_sum, b, off1[nodes])
            c1 = _gather_rect(flat_count, b, off1[nodes])
            s2r = _gather_rect(flat_sum, b, off2[nodes])
            c2 = _gather_rect(flat_count, b, off2[nodes])
            defined = (c1 > 0) & (c2 > 0)
            with np.errstate(invalid="ignore", divide="ignore"):
                f = s1 / c1 - s2r / c2
            go_left = f <= tree.tau[nodes]
            nxt = np.where(go_left, tree.left[nodes], tree.right[nodes])
            cur[rows] = np.where(defined, nxt, cur[rows])
            alive[rows] &= defined
        leaf_rows = alive & (tree.kind[cur] == 1)
        leaf_idx[active_rows[leaf_rows], t_idx] = cur[leaf_rows]
    return centers, leaf_idx, keep


def _trimmed_mean(values: np.ndarray, trim_frac: float) -> np.ndarray:
    """Mean after dropping the trim_frac fraction farthest from the median."""
    n = len(values)
    k_drop = int(trim_frac * n)
    if k_drop == 0:
        return values.mean(axis=0)
    med = np.median(values, axis=0)
    dist = np.linalg.norm(values - med, axis=1)
    keep = np.argsort(dist, kind="stable")[: n - k_drop]
    return values[keep].mean(axis=0)


def estimate(forest: PoseForest, frame: DepthFrame, k: CameraIntrinsics) -> HeadPose | None:
    """Forest vote over a dense patch grid; None when no head is supported."""
    centers, leaf_idx, keep = route_patches(forest, frame, k)
    votes = []
    for t_idx, tree in enumerate(forest.trees):
        rows = np.flatnonzero(leaf_idx[:, t_idx] >= 0)
        if len(rows) == 0:
            continue
        leaves = leaf_idx[rows, t_idx]
        ok = tree.vote_trace[leaves] <= forest.max_leaf_trace
        rows = rows[ok]
        leaves = leaves[ok]
        if len(rows) == 0:
            continue
        mv = tree.mean_vote[leaves]
        votes.append(np.hstack([centers[rows] + mv[:, :3], mv[:, 3:]]))
    if not votes:
        return None
    all_votes = np.vstack(votes)
    if len(all_votes) < forest.params.min_votes:
        return None
    center = _trimmed_mean(all_votes[:, :3], forest.params.trim_frac)
    angles = _trimmed_mean(all_votes[:, 3:], forest.params.trim_frac)
    yaw, pitch, roll = (float(a) for a in angles)
    return HeadPose(
        center=Vec3(*(float(c) for c in center)),
        direction=euler_to_direction(yaw, pitch),
        yaw_deg=yaw,
        pitch_deg=pitch,
        roll_deg=roll,
    )


# ── serialization ────────────────────────────────────────────────────────

def save_forest(path: str | Path, forest: PoseForest) -> None:
    """Little-endian binary: magic, version, params, then per-tree flat node
    arrays in the documented order (kind, rect1, rect2, tau, left, right,
    mean_vote, vote_count, vote_trace, parent_var, child_var)."""
    p = forest.params
    header = FOREST_MAGIC + struct.pack(
        "<BHIIIIIqdIdddd",
        1,
        forest.patch_size,
        len(forest.trees),
        p.max_depth,
        p.min_samples,
        p.n_candidate_tests,
        p.patches_per_frame,
        p.seed,
        p.head_radius_mm,
        p.min_votes,
        p.trim_frac,
        p.min_patch_std_mm,
        p.trace_percentile,
        forest.max_leaf_trace,
    )
    blob = bytearray(header)
    for tree in forest.trees:
        blob += struct.pack("<II", tree.n_nodes, tree.max_depth)
        blob += tree.kind.astype("<u1").tobytes()
        blob += tree.rect1.astype("<u2").tobytes()
        blob += tree.rect2.astype("<u2").tobytes()
        blob += tree.tau.astype("<f8").tobytes()
        blob += tree.left.astype("<i4").tobytes()
        blob += tree.right.astype("<i4").tobytes()
        blob += tree.mean_vote.astype("<f8").tobytes()
        blob += tree.vote_count.astype("<u4").tobytes()
        blob += tree.vote_trace.astype("<f8").tobytes()
        blob += tree.parent_var.astype("<f8").tobytes()
        blob += tree.child_var.astype("<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_forest(path: str | Path) -> PoseForest:
    data = Path(path).read_bytes()
    if data[:5] != FOREST_MAGIC:
        raise ValueError(f"{path}: not a pose-forest file")
    fmt = "<BHIIIIIqdIdddd"
    fields = struct.unpack_from(fmt, data, 5)
    (
        version,
        patch_size,
        n_trees,
        max_depth,
        min_samples,
        n_candidate_tests,
        patches_per_frame,
        seed,
        head_radius_mm,
        min_votes,
        trim_frac,
        min_patch_std_mm,
        trace_percentile,
        max_leaf_trace,
    ) = fields
    if version != 1:
        raise ValueError(f"{path}: unsupported forest version {version}")
    offset = 5 + struct.calcsize(fmt)
    params = ForestParams(
        n_trees=n_trees,
        max_depth=max_depth,
        min_samples=min_samples,
        n_candidate_tests=n_candidate_tests,
        patch_size=patch_size,
        patches_per_frame=patches_per_frame,
        head_radius_mm=head_radius_mm,
        seed=seed,
        min_votes=min_votes,
        trim_frac=trim_frac,
        min_patch_std_mm=min_patch_std_mm,
        trace_percentile=trace_percentile,
    )

    def take(dtype: str, count: int) -> np.ndarray:
        nonlocal offset
        a = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        offset += a.nbytes
        return a.copy()

    trees = []
    for _ in range(n_trees):
        n_nodes, tree_depth = struct.unpack_from("<II", data, offset)
        offset += 8
        trees.append(
            RegressionTree(
                kind=take("<u1", n_nodes),
                rect1=take("<u2", 4 * n_nodes).reshape(n_nodes, 4),
                rect2=take("<u2", 4 * n_nodes).reshape(n_nodes, 4),
                tau=take("<f8", n_nodes),
                left=take("<i4", n_nodes).astype(np.int32),
                right=take("<i4", n_nodes).astype(np.int32),
                mean_vote=take("<f8", 6 * n_nodes).reshape(n_nodes, 6),
                vote_count=take("<u4", n_nodes),
                vote_trace=take("<f8", n_nodes),
                parent_var=take("<f8", n_nodes),
                child_var=take("<f8", n_nodes),
                max_depth=tree_depth,
            )
        )
    return PoseForest(
        trees=trees, patch_size=patch_size, params=params, max_leaf_trace=max_leaf_trace
    )
