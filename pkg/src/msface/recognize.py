"""Closed-set face recognition over normalized chips.

Three recognizers share the same nearest-neighbor prediction surface:

* eigen  - PCA subspace via the small-covariance (Gram matrix) trick,
  Euclidean distance between projections.
* fisher - PCA to N-c dimensions followed by LDA (generalized eigenproblem
  between/within scatter), Euclidean distance.
* lbph   - local binary pattern codes histogrammed over a cell grid,
  chi-square distance.

Ties in nearest-neighbor search break toward the lowest label.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .frames import GrayFrame, read_pgm

DEFAULT_CHIP_SIZE = (92, 112)  # (width, height)

MODEL_MAGIC = b"MSRM1"
_MODEL_TAGS = {"eigen": 1, "fisher": 2, "lbph": 3}
_TAG_NAMES = {v: k for k, v in _MODEL_TAGS.items()}


@dataclass
class FaceChip:
    """Fixed-size, histogram-equalized grayscale face crop."""

    pixels: np.ndarray
    subject_label: int | None = None

    def __post_init__(self) -> None:
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 2:
            raise ValueError(f"chip must be 2D, got shape {self.pixels.shape}")

    @property
    def size(self) -> tuple[int, int]:
        h, w = self.pixels.shape
        return (w, h)


@dataclass
class Gallery:
    """Labeled enrollment chips, all the same size."""

    chips: list[FaceChip]
    label_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.chips:
            raise ValueError("gallery is empty")
        sizes = {c.size for c in self.chips}
        if len(sizes) > 1:
            raise ValueError(f"gallery chips have mixed sizes: {sorted(sizes)}")
        if any(c.subject_label is None for c in self.chips):
            raise ValueError("every gallery chip needs a subject label")

    @property
    def labels(self) -> list[int]:
        return [c.subject_label for c in self.chips]

    @property
    def chip_size(self) -> tuple[int, int]:
        return self.chips[0].size


@dataclass(frozen=True)
class Prediction:
    label: int
    distance: float


# ── chip preparation ─────────────────────────────────────────────────────

def equalize(pixels: np.ndarray) -> np.ndarray:
    """Histogram equalization; constant images pass through unchanged."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.min() == pixels.max():
        return pixels.copy()
    hist = np.bincount(pixels.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    cdf_min = cdf[np.nonzero(cdf)[0][0]]
    total = pixels.size
    lut = np.round((cdf - cdf_min) / (total - cdf_min) * 255.0).astype(np.uint8)
    return lut[pixels]


def resize_bilinear(pixels: np.ndarray, out_size: tuple[int, int]) -> np.ndarray:
    """Bilinear resample to (width, height), pixel-center aligned."""
    out_w, out_h = out_size
    src = np.asarray(pixels, dtype=np.float64)
    in_h, in_w = src.shape
    if (in_w, in_h) == (out_w, out_h):
        return src.copy()
    # map output pixel centers into source coordinates
    xs = (np.arange(out_w) + 0.5) * in_w / out_w - 0.5
    ys = (np.arange(out_h) + 0.5) * in_h / out_h - 0.5
    xs = np.clip(xs, 0, in_w - 1)
    ys = np.clip(ys, 0, in_h - 1)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1 = np.minimum(x0 + 1, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    wx = xs - x0
    wy = ys - y0
    top = src[np.ix_(y0, x0)] * (1 - wx) + src[np.ix_(y0, x1)] * wx
    bot = src[np.ix_(y1, x0)] * (1 - wx) + src[np.ix_(y1, x1)] * wx
    return top * (1 - wy[:, None]) + bot * wy[:, None]


def normalize_chip(frame: GrayFrame, box, out_size: tuple[int, int] = DEFAULT_CHIP_SIZE) -> FaceChip:
    """Crop a detection box, resize to the chip geometry, equalize."""
    x, y, w, h = (int(v) for v in ((box.x, box.y, box.w, box.h) if hasattr(box, "x") else box))
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate box {(x, y, w, h)}")
    if x < 0 or y < 0 or x + w > frame.width or y + h > frame.height:
        raise ValueError(f"box {(x, y, w, h)} outside {frame.width}x{frame.height} frame")
    crop = frame.pixels[y : y + h, x : x + w]
    resized = resize_bilinear(crop, out_size)
    return FaceChip(equalize(np.clip(np.round(resized), 0, 255).astype(np.uint8)))


# ── eigen ────────────────────────────────────────────────────────────────

@dataclass
class EigenModel:
    mean: np.ndarray            # (D,)
    basis: np.ndarray           # (D, k), orthonormal columns
    eigenvalues: np.ndarray     # (k,), non-increasing
    projections: np.ndarray     # (N, k)
    labels: np.ndarray          # (N,)
    chip_size: tuple[int, int]
    label_names: dict[int, str] = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.basis.shape[1]


def _as_matrix(gallery: Gallery) -> tuple[np.ndarray, np.ndarray]:
    data = np.stack([c.pixels.ravel().astype(np.float64) for c in gallery.chips])
    labels = np.array(gallery.labels, dtype=np.int64)
    return data, labels


def train_eigen(gallery: Gallery, k: int) -> EigenModel:
    """PCA on mean-centered chips via the N x N Gram matrix."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    data, labels = _as_matrix(gallery)
    n = data.shape[0]
    if k > n:
        warnings.warn(f"k={k} exceeds gallery size {n}; clamping", stacklevel=2)
        k = n
    mean = data.mean(axis=0)
    centered = data - mean
    gram = centered @ centered.T
    eigvals, eigvecs = np.linalg.eigh(gram)       # ascending
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = eigvecs[:, order]
    basis_cols = []
    kept_vals = []
    for i in range(min(k, n)):
        v = centered.T @ eigvecs[:, i]
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            break  # reached the rank of the data
        basis_cols.append(v / norm)
        kept_vals.append(float(eigvals[i]) / max(n, 1))
    if not basis_cols:
        # zero-variance gallery (identical chips): one arbitrary unit axis
        v = np.zeros(centered.shape[1])
        v[0] = 1.0
        basis_cols.append(v)
        kept_vals.append(0.0)
    if len(basis_cols) < min(k, n):
        warnings.warn(
            f"gallery rank {len(basis_cols)} is below requested k={k}", stacklevel=2
        )
    basis = np.stack(basis_cols, axis=1)
    projections = centered @ basis
    return EigenModel(
        mean=mean,
        basis=basis,
        eigenvalues=np.array(kept_vals),
        projections=projections,
        labels=labels,
        chip_size=gallery.chip_size,
        label_names=dict(gallery.label_names),
    )


def _nearest(projections: np.ndarray, labels: np.ndarray, query: np.ndarray) -> Prediction:
    d = np.linalg.norm(projections - query, axis=1)
    best = np.min(d)
    # ties break toward the lowest label
    label = int(np.min(labels[d == best]))
    return Prediction(label=label, distance=float(best))


def _check_chip_size(chip: FaceChip, expected: tuple[int, int]) -> None:
    if chip.size != expected:
        raise ValueError(f"chip size {chip.size} does not match model {expected}")


def predict_eigen(model: EigenModel, chip: FaceChip) -> Prediction:
    _check_chip_size(chip, model.chip_size)
    q = (chip.pixels.ravel().astype(np.float64) - model.mean) @ model.basis
    return _nearest(model.projections, model.labels, q)


def eigen_reconstruction_error(model: EigenModel, chip: FaceChip, k: int | None = None) -> float:
    """RMS error of the rank-k reconstruction of a chip."""
    _check_chip_size(chip, model.chip_size)
    k = model.k if k is None else min(k, model.k)
    x = chip.pixels.ravel().astype(np.float64) - model.mean
    coeff = x @ model.basis[:, :k]
    recon = model.basis[:, :k] @ coeff
    return float(np.sqrt(np.mean((x - recon) ** 2)))


# ── fisher ───────────────────────────────────────────────────────────────

@dataclass
class FisherModel:
    mean: np.ndarray            # (D,)
    projection: np.ndarray      # (D, m) combined PCA @ LDA, m <= c-1
    projections: np.ndarray     # (N, m)
    labels: np.ndarray
    chip_size: tuple[int, int]
    label_names: dict[int, str] = field(default_factory=dict)


def train_fisher(gallery: Gallery) -> FisherModel:
    """PCA to N-c dimensions, then LDA in the reduced space."""
    data, labels = _as_matrix(gallery)
    classes = np.unique(labels)
    c = len(classes)
    if c < 2:
        raise ValueError("fisher training needs at least 2 classes")
    counts = {int(cl): int(np.sum(labels == cl)) for cl in classes}
    thin = [cl for cl, n in counts.items() if n < 2]
    if thin:
        raise ValueError(f"classes {thin} have fewer than 2 chips; within-class scatter degenerate")
    n = data.shape[0]
    n_pca = max(1, n - c)
    pca = train_eigen_matrix(data, n_pca)
    mean, basis = pca
    reduced = (data - mean) @ basis

    overall = reduced.mean(axis=0)
    dim = reduced.shape[1]
    s_w = np.zeros((dim, dim))
    s_b = np.zeros((dim, dim))
    for cl in classes:
        rows = reduced[labels == cl]
        mu = rows.mean(axis=0)
        centered = rows - mu
        s_w += centered.T @ centered
        diff = (mu - overall)[:, None]
        s_b += len(rows) * (diff @ diff.T)
    try:
        eigvals, eigvecs = scipy.linalg.eigh(s_b, s_w)
    except scipy.linalg.LinAlgError:
        eps = 1e-6 * np.trace(s_w) / dim
        warnings.warn("within-class scatter is singular; regularizing", stacklevel=2)
        eigvals, eigvecs = scipy.linalg.eigh(s_b, s_w + eps * np.eye(dim))
    order = np.argsort(eigvals)[::-1]
    m = min(c - 1, dim)
    w_lda = eigvecs[:, order[:m]]
    projection = basis @ w_lda
    projections = (data - mean) @ projection
    return FisherModel(
        mean=mean,
        projection=projection,
        projections=projections,
        labels=labels,
        chip_size=gallery.chip_size,
        label_names=dict(gallery.label_names),
    )


def train_eigen_matrix(data: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean and top-k orthonormal PCA basis of a row-sample matrix."""
    n = data.shape[0]
    k = min(k, n)
    mean = data.mean(axis=0)
    centered = data - mean
    gram = centered @ centered.T
    eigvals, eigvecs = np.linalg.eigh(gram)
    order = np.argsort(eigvals)[::-1][:k]
    cols = []
    for i in order:
        v = centered.T @ eigvecs[:, i]
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            continue
        cols.append(v / norm)
    if not cols:
        raise ValueError("degenerate data: no principal components")
    return mean, np.stack(cols, axis=1)


def predict_fisher(model: FisherModel, chip: FaceChip) -> Prediction:
    _check_chip_size(chip, model.chip_size)
    q = (chip.pixels.ravel().astype(np.float64) - model.mean) @ model.projection
    return _nearest(model.projections, model.labels, q)


# ── lbph ─────────────────────────────────────────────────────────────────

@dataclass
class LbphModel:
    grid: tuple[int, int]       # (cells_x, cells_y)
    radius: int
    neighbors: int
    histograms: np.ndarray      # (N, cells_x * cells_y * 256)
    labels: np.ndarray
    chip_size: tuple[int, int]
    label_names: dict[int, str] = field(default_factory=dict)


# neighbor offsets clockwise from top-left; bit 7 first
_LBP_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def lbp_codes(pixels: np.ndarray) -> np.ndarray:
    """8-neighbor LBP code per pixel; neighbor >= center sets the bit.

    Borders use edge replication so every pixel gets a code.
    """
    p = np.asarray(pixels, dtype=np.int16)
    padded = np.pad(p, 1, mode="edge")
    h, w = p.shape
    codes = np.zeros((h, w), dtype=np.uint8)
    for bit, (dy, dx) in enumerate(_LBP_OFFSETS):
        neighbor = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        codes |= ((neighbor >= p).astype(np.uint8)) << (7 - bit)
    return codes


def lbp_histogram(pixels: np.ndarray, grid: tuple[int, int] = (8, 8)) -> np.ndarray:
    """Concatenated 256-bin histograms over a grid of cells."""
    codes = lbp_codes(pixels)
    gx, gy = grid
    hists = []
    for rows in np.array_split(codes, gy, axis=0):
        for cell in np.array_split(rows, gx, axis=1):
            hists.append(np.bincount(cell.ravel(), minlength=256))
    return np.concatenate(hists).astype(np.float64)


def chi_square(a: np.ndarray, b: np.ndarray) -> float:
    """Chi-square histogram distance over bins with mass."""
    s = a + b
    mask = s > 0
    d = a - b
    return float(np.sum(d[mask] ** 2 / s[mask]))


def train_lbph(gallery: Gallery, grid: tuple[int, int] = (8, 8), radius: int = 1, neighbors: int = 8) -> LbphModel:
    if radius != 1 or neighbors != 8:
        raise ValueError("only radius=1, neighbors=8 is implemented")
    w, h = gallery.chip_size
    if w < grid[0] or h < grid[1]:
        raise ValueError(f"chip {w}x{h} smaller than grid {grid}")
    hists = np.stack([lbp_histogram(c.pixels, grid) for c in gallery.chips])
    return LbphModel(
        grid=grid,
        radius=radius,
        neighbors=neighbors,
        histograms=hists,
        labels=np.array(gallery.labels, dtype=np.int64),
        chip_size=gallery.chip_size,
        label_names=dict(gallery.label_names),
    )


def predict_lbph(model: LbphModel, chip: FaceChip) -> Prediction:
    _check_chip_size(chip, model.chip_size)
    q = lbp_histogram(chip.pixels, model.grid)
    d = np.array([chi_square(q, h) for h in model.histograms])
    best = np.min(d)
    label = int(np.min(model.labels[d == best]))
    return Prediction(label=label, distance=float(best))


# ── shared surface ───────────────────────────────────────────────────────

Model = EigenModel | FisherModel | LbphModel


def predict(model: Model, chip: FaceChip) -> Prediction:
    if isinstance(model, EigenModel):
        return predict_eigen(model, chip)
    if isinstance(model, FisherModel):
        return predict_fisher(model, chip)
    if isinstance(model, LbphModel):
        return predict_lbph(model, chip)
    raise TypeError(f"unknown model type {type(model)!r}")


def recognition_accuracy(model: Model, probes: list[FaceChip]) -> float:
    """Fraction of labeled probe chips whose prediction matches the label."""
    if not probes:
        raise ValueError("no probes")
    if any(p.subject_label is None for p in probes):
        raise ValueError("every probe needs a subject label")
    correct = sum(1 for p in probes if predict(model, p).label == p.subject_label)
    return correct / len(probes)


def load_gallery(root: str | Path, chip_size: tuple[int, int] = DEFAULT_CHIP_SIZE) -> Gallery:
    """Load `subject_<id>/<frame>.pgm` trees into a normalized gallery."""
    root = Path(root)
    chips: list[FaceChip] = []
    names: dict[int, str] = {}
    for subject_dir in sorted(root.glob("subject_*")):
        label = int(subject_dir.name.split("_", 1)[1])
        names[label] = subject_dir.name
        for pgm in sorted(subject_dir.glob("*.pgm")):
            pixels = read_pgm(pgm)
            if pixels.dtype != np.uint8:
                raise ValueError(f"{pgm}: gallery chips must be 8-bit")
            resized = resize_bilinear(pixels, chip_size)
            chip = FaceChip(
                equalize(np.clip(np.round(resized), 0, 255).astype(np.uint8)),
                subject_label=label,
            )
            chips.append(chip)
    if not chips:
        raise ValueError(f"no subject_*/??.pgm chips under {root}")
    return Gallery(chips=chips, label_names=names)


# ── serialization ────────────────────────────────────────────────────────

def _pack_array(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype=np.float64)
    return struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape) + a.astype("<f8").tobytes()


def _unpack_array(buf: memoryview, offset: int) -> tuple[np.ndarray, int]:
    (ndim,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    shape = struct.unpack_from(f"<{ndim}I", buf, offset)
    offset += 4 * ndim
    count = int(np.prod(shape)) if shape else 1
    a = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).reshape(shape)
    offset += 8 * count
    return a.copy(), offset


def _pack_names(names: dict[int, str]) -> bytes:
    out = struct.pack("<I", len(names))
    for label in sorted(names):
        encoded = names[label].encode("utf-8")
        out += struct.pack("<iH", label, len(encoded)) + encoded
    return out


def _unpack_names(buf: memoryview, offset: int) -> tuple[dict[int, str], int]:
    (count,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    names = {}
    for _ in range(count):
        label, length = struct.unpack_from("<iH", buf, offset)
        offset += 6
        names[label] = bytes(buf[offset : offset + length]).decode("utf-8")
        offset += length
    return names, offset


def save_model(path: str | Path, model: Model) -> None:
    """Versioned binary model file: magic, recognizer tag, then fields.

    All arrays are little-endian float64 preceded by ndim and shape; labels
    travel as a float array and are restored to integers.
    """
    if isinstance(model, EigenModel):
        tag = _MODEL_TAGS["eigen"]
        arrays = [model.mean, model.basis, model.eigenvalues, model.projections,
                  model.labels.astype(np.float64)]
    elif isinstance(model, FisherModel):
        tag = _MODEL_TAGS["fisher"]
        arrays = [model.mean, model.projection, model.projections,
                  model.labels.astype(np.float64)]
    elif isinstance(model, LbphModel):
        tag = _MODEL_TAGS["lbph"]
        arrays = [np.array(model.grid, dtype=np.float64),
                  np.array([model.radius, model.neighbors], dtype=np.float64),
                  model.histograms, model.labels.astype(np.float64)]
    else:
        raise TypeError(f"unknown model type {type(model)!r}")
    blob = MODEL_MAGIC + struct.pack("<BB", 1, tag)
    blob += struct.pack("<HH", *model.chip_size)
    blob += _pack_names(model.label_names)
    for a in arrays:
        blob += _pack_array(a)
    Path(path).write_bytes(blob)


def load_model(path: str | Path) -> Model:
    data = memoryview(Path(path).read_bytes())
    if bytes(data[:5]) != MODEL_MAGIC:
        raise ValueError(f"{path}: not a recognizer model file")
    version, tag = struct.unpack_from("<BB", data, 5)
    if version != 1:
        raise ValueError(f"{path}: unsupported model version {version}")
    w, h = struct.unpack_from("<HH", data, 7)
    names, offset = _unpack_names(data, 11)
    kind = _TAG_NAMES.get(tag)
    arrays = []
    while offset < len(data):
        a, offset = _unpack_array(data, offset)
        arrays.append(a)
    if kind == "eigen":
        mean, basis, eigenvalues, projections, labels = arrays
        return EigenModel(mean, basis, eigenvalues, projections,
                          labels.astype(np.int64), (w, h), names)
    if kind == "fisher":
        mean, projection, projections, labels = arrays
        return FisherModel(mean, projection, projections,
                           labels.astype(np.int64), (w, h), names)
    if kind == "lbph":
        grid, rn, histograms, labels = arrays
        return LbphModel((int(grid[0]), int(grid[1])), int(rn[0]), int(rn[1]),
                         histograms, labels.astype(np.int64), (w, h), names)
    raise ValueError(f"{path}: unknown recognizer tag {tag}")
