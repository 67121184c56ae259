"""Stream manifests, frame synchronization, the two end-to-end pipelines,
and the benchmark harness comparing them.

A recorded sequence is indexed by a CSV manifest (`stream,path,timestamp_us`)
plus a key=value sidecar holding the intrinsics path, frame period, and
optional subject id.  Paths are resolved relative to the manifest.  The
"traditional" pipeline runs detection and recognition on every (optionally
strided) gray frame; the "proposed" pipeline estimates head pose from depth
first and only spends detector/recognizer time on frames that pass the
frontal gate, reading forehead temperature off the synchronized IR frame
when one exists.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .detect import Cascade, DetBox, DetectorStats, detect_dhp, detect_haar
from .forest import PoseForest
from .frames import DepthFrame, GrayFrame, IrFrame, read_depth, read_gray, read_ir
from .geometry import CameraIntrinsics
from .recognize import Model, Prediction, normalize_chip
from .recognize import predict as predict_chip
from .thermal import (
    DEFAULT_CALIBRATION,
    Finding,
    RoiMap,
    ThermalCalibration,
    ThermalReading,
    fever_check,
    forehead_roi,
    temp_of_roi,
)

STREAMS = ("depth", "gray", "ir")


@dataclass
class ManifestRow:
    stream: str
    path: str
    timestamp_us: int


@dataclass
class StreamManifest:
    rows: list[ManifestRow]
    intrinsics: CameraIntrinsics
    frame_period_us: int
    subject_id: int | None = None
    base_dir: Path = Path(".")

    def stream_rows(self, stream: str) -> list[ManifestRow]:
        return [r for r in self.rows if r.stream == stream]

    def resolve(self, row: ManifestRow) -> Path:
        return self.base_dir / row.path


@dataclass
class SyncedTriple:
    depth: DepthFrame
    gray: GrayFrame
    ir: IrFrame | None
    timestamp_us: int


@dataclass
class SyncStats:
    pairs: int = 0
    dropped_depth: int = 0
    unmatched_gray: int = 0
    unmatched_ir: int = 0


@dataclass
class FrameTimings:
    recognition_ms: float = 0.0
    dhp_ms: float = 0.0
    detection_ms: float = 0.0
    processing_ms: float = 0.0


@dataclass
class FrameResult:
    index: int
    timestamp_us: int
    gate_offset_deg: float | None
    gate_accepted: bool | None
    boxes: list[DetBox]
    prediction: Prediction | None
    reading: ThermalReading | None
    error: str | None = None


@dataclass
class RunResult:
    frames: list[FrameResult]
    timings: list[FrameTimings]
    findings: list[Finding]
    detector_invocations: int
    recognizer_invocations: int
    gate_accepted_count: int
    first_frontal_index: int | None
    error_count: int


@dataclass(frozen=True)
class ProtocolMessage:
    severity: str  # "ACTION" | "WARNING"
    text: str


FEVER_MESSAGE = "POSSIBLE ACTION: Inquire: Have you been experiencing a high fever?"
APPEARANCE_MESSAGE = "WARNING: Possible intention to change appearance; {detail}."


# ── manifest io ──────────────────────────────────────────────────────────

def write_intrinsics(path: str | Path, k: CameraIntrinsics) -> None:
    lines = [
        f"fx={k.fx:.9g}",
        f"fy={k.fy:.9g}",
        f"cx={k.cx:.9g}",
        f"cy={k.cy:.9g}",
        f"width={k.width}",
        f"height={k.height}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_intrinsics(path: str | Path) -> CameraIntrinsics:
    values: dict[str, str] = {}
    for line in Path(path).read_text().split("\n"):
        line = line.strip()
        if line and "=" in line:
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    try:
        return CameraIntrinsics(
            fx=float(values["fx"]),
            fy=float(values["fy"]),
            cx=float(values["cx"]),
            cy=float(values["cy"]),
            width=int(values["width"]),
            height=int(values["height"]),
        )
    except KeyError as missing:
        raise ValueError(f"{path}: missing intrinsics key {missing}") from None


def write_manifest(path: str | Path, manifest: StreamManifest, intrinsics_path: str) -> None:
    path = Path(path)
    lines = ["stream,path,timestamp_us"]
    lines.extend(f"{r.stream},{r.path},{r.timestamp_us}" for r in manifest.rows)
    path.write_text("\n".join(lines) + "\n")
    meta = [
        f"intrinsics={intrinsics_path}",
        f"frame_period_us={manifest.frame_period_us}",
    ]
    if manifest.subject_id is not None:
        meta.append(f"subject_id={manifest.subject_id}")
    path.with_suffix(".meta").write_text("\n".join(meta) + "\n")


def load_manifest(path: str | Path) -> StreamManifest:
    path = Path(path)
    base = path.parent
    lines = [ln.strip() for ln in path.read_text().split("\n") if ln.strip()]
    if not lines or lines[0].replace(" ", "") != "stream,path,timestamp_us":
        raise ValueError(f"{path}: expected header 'stream,path,timestamp_us'")
    rows = []
    for ln in lines[1:]:
        stream, rel, ts = ln.split(",")
        if stream not in STREAMS:
            raise ValueError(f"{path}: unknown stream {stream!r}")
        rows.append(ManifestRow(stream=stream, path=rel, timestamp_us=int(ts)))
    meta_path = path.with_suffix(".meta")
    meta: dict[str, str] = {}
    if meta_path.exists():
        for line in meta_path.read_text().split("\n"):
            line = line.strip()
            if line and "=" in line:
                key, _, val = line.partition("=")
                meta[key.strip()] = val.strip()
    if "intrinsics" not in meta or "frame_period_us" not in meta:
        raise ValueError(f"{meta_path}: needs intrinsics= and frame_period_us=")
    manifest = StreamManifest(
        rows=rows,
        intrinsics=read_intrinsics(base / meta["intrinsics"]),
        frame_period_us=int(meta["frame_period_us"]),
        subject_id=int(meta["subject_id"]) if "subject_id" in meta else None,
        base_dir=base,
    )
    last: dict[str, int] = {}
    for r in rows:
        if r.timestamp_us < last.get(r.stream, 0):
            raise ValueError(f"{path}: {r.stream} timestamps decrease at {r.path}")
        last[r.stream] = r.timestamp_us
        if not (base / r.path).exists():
            raise FileNotFoundError(base / r.path)
    return manifest


# ── synchronization ──────────────────────────────────────────────────────

def _nearest_row(rows: list[ManifestRow], ts: int) -> ManifestRow | None:
    if not rows:
        return None
    best = min(rows, key=lambda r: (abs(r.timestamp_us - ts), r.timestamp_us))
    return best


def sync_streams(
    manifest: StreamManifest, tolerance_us: int | None = None
) -> tuple[list[SyncedTriple], SyncStats]:
    """Pair each depth frame with its nearest gray (and IR) frame.

    Unmatched frames beyond the tolerance (default frame_period / 2) are
    dropped and counted.
    """
    if tolerance_us is None:
        tolerance_us = manifest.frame_period_us // 2
    depth_rows = manifest.stream_rows("depth")
    gray_rows = manifest.stream_rows("gray")
    ir_rows = manifest.stream_rows("ir")
    stats = SyncStats()
    triples: list[SyncedTriple] = []
    used_gray: set[int] = set()
    used_ir: set[int] = set()
    for d in depth_rows:
        g = _nearest_row(gray_rows, d.timestamp_us)
        if g is None or abs(g.timestamp_us - d.timestamp_us) > tolerance_us:
            stats.dropped_depth += 1
            continue
        ir_row = _nearest_row(ir_rows, d.timestamp_us)
        if ir_row is not None and abs(ir_row.timestamp_us - d.timestamp_us) > tolerance_us:
            ir_row = None
        depth = read_depth(manifest.resolve(d), d.timestamp_us)
        gray = read_gray(manifest.resolve(g), g.timestamp_us)
        ir = read_ir(manifest.resolve(ir_row), ir_row.timestamp_us) if ir_row else None
        used_gray.add(id(g))
        if ir_row:
            used_ir.add(id(ir_row))
        triples.append(SyncedTriple(depth=depth, gray=gray, ir=ir, timestamp_us=d.timestamp_us))
        stats.pairs += 1
    stats.unmatched_gray = len(gray_rows) - len(used_gray)
    stats.unmatched_ir = len(ir_rows) - len(used_ir) if ir_rows else 0
    if depth_rows and not triples:
        raise ValueError(
            f"no synchronized frames: {len(depth_rows)} depth, {len(gray_rows)} gray, "
            f"{len(ir_rows)} ir rows, tolerance {tolerance_us} us"
        )
    return triples, stats


# ── pipelines ────────────────────────────────────────────────────────────

class _Counter:
    """Thread-safe accumulator for per-run work counters."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.value = 0

    def add(self, n: int = 1) -> None:
        with self._lock:
            self.value += n


def run_traditional(
    triples: list[SyncedTriple],
    cascade: Cascade,
    recognizer: Model | None,
    subsample: int = 1,
    chip_size: tuple[int, int] | None = None,
) -> RunResult:
    """Detect and recognize on every subsample-th gray frame, no gating."""
    frames: list[FrameResult] = []
    timings: list[FrameTimings] = []
    detector_calls = _Counter()
    recognizer_calls = _Counter()
    errors = 0
    for index in range(0, len(triples), subsample):
        triple = triples[index]
        t = FrameTimings()
        start = time.perf_counter()
        boxes: list[DetBox] = []
        prediction = None
        error = None
        try:
            t0 = time.perf_counter()
            boxes = detect_haar(triple.gray, cascade)
            detector_calls.add()
            t.detection_ms = (time.perf_counter() - t0) * 1000.0
            if boxes and recognizer is not None:
                t0 = time.perf_counter()
                chip = normalize_chip(
                    triple.gray, boxes[0], chip_size or recognizer.chip_size
                )
                prediction = predict_chip(recognizer, chip)
                recognizer_calls.add()
                t.recognition_ms = (time.perf_counter() - t0) * 1000.0
        except Exception as exc:  # per-frame isolation
            error = f"{type(exc).__name__}: {exc}"
            errors += 1
        t.processing_ms = (time.perf_counter() - start) * 1000.0
        frames.append(
            FrameResult(
                index=index,
                timestamp_us=triple.timestamp_us,
                gate_offset_deg=None,
                gate_accepted=None,
                boxes=boxes,
                prediction=prediction,
                reading=None,
                error=error,
            )
        )
        timings.append(t)
    return RunResult(
        frames=frames,
        timings=timings,
        findings=[],
        detector_invocations=detector_calls.value,
        recognizer_invocations=recognizer_calls.value,
        gate_accepted_count=0,
        first_frontal_index=None,
        error_count=errors,
    )


def run_proposed(
    triples: list[SyncedTriple],
    forest: PoseForest,
    cascade: Cascade,
    recognizer: Model | None,
    k: CameraIntrinsics,
    threshold_deg: float = 15.0,
    calibration: ThermalCalibration = DEFAULT_CALIBRATION,
    roi_map: RoiMap | None = None,
    fever_threshold_c: float = 38.0,
    subsample: int = 1,
    chip_size: tuple[int, int] | None = None,
) -> RunResult:
    """Gate on depth head pose first; detect/recognize/read IR only when frontal."""
    frames: list[FrameResult] = []
    timings: list[FrameTimings] = []
    findings: list[Finding] = []
    seen_kinds: set[str] = set()
    stats = DetectorStats()
    recognizer_calls = _Counter()
    accepted = 0
    first_frontal: int | None = None
    errors = 0
    for index in range(0, len(triples), subsample):
        triple = triples[index]
        t = FrameTimings()
        start = time.perf_counter()
        boxes: list[DetBox] = []
        prediction = None
        reading = None
        error = None
        offset = None
        ok = False
        try:
            t0 = time.perf_counter()
            result = detect_dhp(
                triple.depth, triple.gray, forest, cascade, k,
                threshold_deg=threshold_deg, stats=stats,
            )
            t1 = time.perf_counter()
            t.dhp_ms = result.dhp_ms
            t.detection_ms = (t1 - t0) * 1000.0 - result.dhp_ms
            offset = result.gate.offset_deg
            ok = result.gate.accepted
            boxes = result.boxes
            if ok:
                accepted += 1
                if first_frontal is None:
                    first_frontal = index
            if ok and boxes:
                if recognizer is not None:
                    t0 = time.perf_counter()
                    chip = normalize_chip(
                        triple.gray, boxes[0], chip_size or recognizer.chip_size
                    )
                    prediction = predict_chip(recognizer, chip)
                    recognizer_calls.add()
                    t.recognition_ms = (time.perf_counter() - t0) * 1000.0
                if triple.ir is not None:
                    roi = forehead_roi(
                        boxes[0], roi_map, ir_size=(triple.ir.width, triple.ir.height)
                    )
                    reading = temp_of_roi(triple.ir, roi, calibration)
                    finding = fever_check(
                        reading.temp_c, fever_threshold_c, frame_index=index
                    )
                    if finding is not None and finding.kind not in seen_kinds:
                        seen_kinds.add(finding.kind)
                        findings.append(finding)
        except Exception as exc:  # per-frame isolation
            error = f"{type(exc).__name__}: {exc}"
            errors += 1
        t.processing_ms = (time.perf_counter() - start) * 1000.0
        frames.append(
            FrameResult(
                index=index,
                timestamp_us=triple.timestamp_us,
                gate_offset_deg=offset,
                gate_accepted=ok,
                boxes=boxes,
                prediction=prediction,
                reading=reading,
                error=error,
            )
        )
        timings.append(t)
    return RunResult(
        frames=frames,
        timings=timings,
        findings=findings,
        detector_invocations=stats.detector_invocations,
        recognizer_invocations=recognizer_calls.value,
        gate_accepted_count=accepted,
        first_frontal_index=first_frontal,
        error_count=errors,
    )


# ── benchmark ────────────────────────────────────────────────────────────

_STAGES = ("recognition", "dhp", "detection", "processing")


@dataclass
class MethodTiming:
    per_frame_ms: dict[str, float]
    per_video_s: dict[str, float]
    total_s: dict[str, float]
    frames: int
    videos: int


@dataclass
class BenchReport:
    traditional: MethodTiming
    proposed: MethodTiming
    speedup_pct: float
    overhead_s: float
    traditional_detector_invocations: int
    proposed_detector_invocations: int
    gate_accepted_count: int


def _aggregate(per_video: list[list[FrameTimings]]) -> MethodTiming:
    totals = dict.fromkeys(_STAGES, 0.0)
    frames = 0
    for video in per_video:
        frames += len(video)
        for t in video:
            totals["recognition"] += t.recognition_ms
            totals["dhp"] += t.dhp_ms
            totals["detection"] += t.detection_ms
            totals["processing"] += t.processing_ms
    n_videos = max(len(per_video), 1)
    frames = max(frames, 1)
    return MethodTiming(
        per_frame_ms={s: totals[s] / frames for s in _STAGES},
        per_video_s={s: totals[s] / 1000.0 / n_videos for s in _STAGES},
        total_s={s: totals[s] / 1000.0 for s in _STAGES},
        frames=frames,
        videos=len(per_video),
    )


def bench(
    sequences: list[list[SyncedTriple]],
    forest: PoseForest,
    cascade: Cascade,
    recognizer: Model | None,
    k: CameraIntrinsics,
    threshold_deg: float = 15.0,
    overhead_s: float = 0.0,
    subsample: int = 1,
    calibration: ThermalCalibration = DEFAULT_CALIBRATION,
) -> tuple[BenchReport, list[RunResult], list[RunResult]]:
    """Time both pipelines over the same sequences, identically configured
    except for the gate."""
    trad_results = [
        run_traditional(seq, cascade, recognizer, subsample=subsample) for seq in sequences
    ]
    prop_results = [
        run_proposed(
            seq, forest, cascade, recognizer, k,
            threshold_deg=threshold_deg, subsample=subsample, calibration=calibration,
        )
        for seq in sequences
    ]
    trad = _aggregate([r.timings for r in trad_results])
    prop = _aggregate([r.timings for r in prop_results])
    t_total = trad.total_s["processing"]
    p_total = prop.total_s["processing"]
    speedup = 100.0 * (t_total - p_total) / t_total if t_total > 0 else 0.0
    report = BenchReport(
        traditional=trad,
        proposed=prop,
        speedup_pct=speedup,
        overhead_s=overhead_s,
        traditional_detector_invocations=sum(r.detector_invocations for r in trad_results),
        proposed_detector_invocations=sum(r.detector_invocations for r in prop_results),
        gate_accepted_count=sum(r.gate_accepted_count for r in prop_results),
    )
    return report, trad_results, prop_results


def bench_report_text(report: BenchReport) -> str:
    """Operation-time table, one row per method, one column per stage."""
    lines = []
    header = f"{'':14s}{'Recognition':>13s}{'DHP':>10s}{'Detection':>11s}{'Processing':>12s}"
    sections = (
        ("Per Frame (ms)", "per_frame_ms", 1.0),
        ("Per Video (s)", "per_video_s", 1.0),
        ("Total (s)", "total_s", 1.0),
    )
    for title, attr, _scale in sections:
        lines.append(title)
        lines.append(header)
        for name, timing in (("Traditional", report.traditional), ("Proposed", report.proposed)):
            row = getattr(timing, attr)
            dhp = "-" if name == "Traditional" else f"{row['dhp']:.2f}"
            lines.append(
                f"{name:14s}{row['recognition']:>13.2f}{dhp:>10s}"
                f"{row['detection']:>11.2f}{row['processing']:>12.2f}"
            )
        lines.append("")
    lines.append(f"Speed gain: {report.speedup_pct:.2f}%")
    lines.append(f"Pose model load/train overhead: {report.overhead_s:.2f} s")
    lines.append(
        "Detector invocations: "
        f"traditional={report.traditional_detector_invocations} "
        f"proposed={report.proposed_detector_invocations} "
        f"(gate accepted {report.gate_accepted_count})"
    )
    return "\n".join(lines) + "\n"


def bench_report_csv(report: BenchReport) -> str:
    lines = ["method,section,stage,value"]
    for name, timing in (("traditional", report.traditional), ("proposed", report.proposed)):
        for section, row in (
            ("per_frame_ms", timing.per_frame_ms),
            ("per_video_s", timing.per_video_s),
            ("total_s", timing.total_s),
        ):
            for stage in _STAGES:
                lines.append(f"{name},{section},{stage},{row[stage]:.9g}")
    lines.append(f"summary,overall,speedup_pct,{report.speedup_pct:.9g}")
    lines.append(f"summary,overall,overhead_s,{report.overhead_s:.9g}")
    return "\n".join(lines) + "\n"


# ── protocol messages ────────────────────────────────────────────────────

def protocol_messages(findings: list[Finding]) -> list[ProtocolMessage]:
    """Render findings as fixed operator-facing message templates."""
    messages = []
    for finding in findings:
        if finding.kind == "fever":
            messages.append(ProtocolMessage(severity="ACTION", text=FEVER_MESSAGE))
        elif finding.kind == "appearance-anomaly":
            detail = finding.detail or "appearance anomaly detected"
            messages.append(
                ProtocolMessage(severity="WARNING", text=APPEARANCE_MESSAGE.format(detail=detail))
            )
        else:
            raise ValueError(f"unknown finding kind {finding.kind!r}")
    return messages
