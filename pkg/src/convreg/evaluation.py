"""OTB-style sequence loading, overlap / precision metrics and one-pass evaluation."""

from __future__ import annotations

import csv
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence as Seq, Union

import numpy as np
from PIL import Image

from .bbox import BBox

__all__ = [
    "Sequence",
    "SequenceError",
    "SeqResult",
    "EvalReport",
    "load_sequence",
    "load_corpus",
    "read_frame",
    "read_boxes",
    "write_boxes",
    "center_error",
    "iou",
    "precision_curve",
    "success_curve",
    "PRECISION_THRESHOLDS",
    "SUCCESS_THRESHOLDS",
    "score_sequence",
    "run_ope",
    "write_report",
]

log = logging.getLogger(__name__)

PRECISION_THRESHOLDS = np.arange(0, 51, dtype=np.float64)
SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 51)
DP_THRESHOLD = 20.0
OS_THRESHOLD = 0.5

_IMAGE_EXT = {".jpg", ".jpeg", ".png", ".bmp", ".pgm", ".ppm", ".tif", ".tiff"}


class SequenceError(ValueError):
    pass


@dataclass
class Sequence:
    name: str
    frames: list  # image paths or in-memory arrays
    gt: list[BBox]

    def __post_init__(self):
        if len(self.frames) != len(self.gt) or not self.gt:
            raise SequenceError(f"{self.name}: {len(self.frames)} frames but {len(self.gt)} boxes")


def read_frame(frame) -> np.ndarray:
    if isinstance(frame, np.ndarray):
        return frame
    with Image.open(frame) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im)


def read_boxes(path) -> list[BBox]:
    """Parse 1-based ``x,y,w,h`` lines (comma, tab or whitespace separated)."""
    path = Path(path)
    if not path.is_file():
        raise SequenceError(f"ground truth not found: {path}")
    boxes = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = [p for p in re.split(r"[,\t ]+", line.strip()) if p]
        try:
            if len(parts) != 4:
                raise ValueError(f"expected 4 fields, got {len(parts)}")
            x, y, w, h = (float(p) for p in parts)
            boxes.append(BBox(x - 1.0, y - 1.0, w, h))
        except ValueError as exc:
            raise SequenceError(f"{path}:{lineno}: cannot parse {line!r} ({exc})") from None
    return boxes


def write_boxes(boxes, path) -> None:
    """Write one 1-based, integer ``x,y,w,h`` line per box."""
    lines = [f"{int(round(b.x)) + 1},{int(round(b.y)) + 1},{int(round(b.w))},{int(round(b.h))}" for b in boxes]
    Path(path).write_text("\n".join(lines) + "\n")


def load_sequence(directory) -> Sequence:
    root = Path(directory)
    img_dir = root / "img"
    if not img_dir.is_dir():
        raise SequenceError(f"image directory not found: {img_dir}")
    frames = sorted(p for p in img_dir.iterdir() if p.suffix.lower() in _IMAGE_EXT)
    gt = read_boxes(root / "groundtruth_rect.txt")
    if len(frames) != len(gt):
        raise SequenceError(f"{root}: {len(frames)} images but {len(gt)} ground-truth boxes")
    return Sequence(root.name, frames, gt)


def load_corpus(directory) -> tuple[list[Sequence], list[str]]:
    """Load every sequence directory under ``directory``; returns (sequences, errors)."""
    root = Path(directory)
    if (root / "groundtruth_rect.txt").exists():
        return [load_sequence(root)], []
    seqs, errors = [], []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        try:
            seqs.append(load_sequence(sub))
        except SequenceError as exc:
            errors.append(str(exc))
            log.error("%s", exc)
    return seqs, errors


def center_error(a: BBox, b: BBox) -> float:
    (ax, ay), (bx, by) = a.center, b.center
    return float(np.hypot(ax - bx, ay - by))


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.w * a.h + b.w * b.h - inter
    return min(1.0, float(inter / union)) if union > 0 else 0.0


def precision_curve(errors, thresholds=PRECISION_THRESHOLDS) -> np.ndarray:
    """Fraction of frames with center error <= t, per threshold t."""
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise ValueError("no errors to score")
    return (e[None, :] <= np.asarray(thresholds)[:, None]).mean(axis=1)


def success_curve(ious, thresholds=SUCCESS_THRESHOLDS) -> np.ndarray:
    """Fraction of frames with IoU > t, per threshold t."""
    o = np.asarray(ious, dtype=np.float64)
    if o.size == 0:
        raise ValueError("no overlaps to score")
    return (o[None, :] > np.asarray(thresholds)[:, None]).mean(axis=1)


@dataclass
class SeqResult:
    name: str
    boxes: list[BBox]
    precision: np.ndarray
    success: np.ndarray
    fps: float = 0.0

    @property
    def dp(self) -> float:
        return float(self.precision[int(DP_THRESHOLD)])

    @property
    def os(self) -> float:
        return float(self.success[int(round(OS_THRESHOLD * 50))])

    @property
    def auc(self) -> float:
        return float(self.success.mean())


@dataclass
class EvalReport:
    results: list[SeqResult]
    errors: list[str] = field(default_factory=list)

    def _mean(self, attr) -> float:
        return float(np.mean([getattr(r, attr) for r in self.results])) if self.results else float("nan")

    @property
    def dp(self) -> float:
        return self._mean("dp")

    @property
    def os(self) -> float:
        return self._mean("os")

    @property
    def auc(self) -> float:
        return self._mean("auc")


def score_sequence(name: str, boxes: Seq[BBox], gt: Seq[BBox], fps: float = 0.0) -> SeqResult:
    if len(boxes) != len(gt):
        raise ValueError(f"{name}: {len(boxes)} predicted boxes for {len(gt)} frames")
    errs = [center_error(p, g) for p, g in zip(boxes, gt)]
    ious = [iou(p, g) for p, g in zip(boxes, gt)]
    return SeqResult(name, list(boxes), precision_curve(errs), success_curve(ious), fps)


TrackFn = Callable[[list, BBox], list]


def _run_one(args) -> Union[SeqResult, str]:
    import time

    seq, tracker = args
    try:
        t0 = time.perf_counter()
        if callable(tracker):
            boxes = tracker((read_frame(f) for f in seq.frames), seq.gt[0])
        else:
            from .tracker import track_sequence

            boxes = track_sequence((read_frame(f) for f in seq.frames), seq.gt[0], tracker)
        dt = time.perf_counter() - t0
        return score_sequence(seq.name, boxes, seq.gt, fps=len(seq.gt) / dt if dt > 0 else 0.0)
    except Exception as exc:  # one bad sequence must not sink the run
        log.exception("sequence %s failed", seq.name)
        return f"{seq.name}: {type(exc).__name__}: {exc}"


def run_ope(sequences: Seq[Sequence], tracker, threads: int = 1, errors: Optional[list[str]] = None) -> EvalReport:
    """One-pass evaluation: initialise from the first ground-truth box, track once, score every frame.

    ``tracker`` is a :class:`~convreg.tracker.TrackerConfig` or any callable
    ``(frames, init_bbox) -> boxes``. Callables must be picklable when
    ``threads > 1``.
    """
    if not sequences:
        raise ValueError("no sequences to evaluate")
    jobs = [(s, tracker) for s in sequences]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(_run_one, jobs))
    else:
        outs = [_run_one(j) for j in jobs]
    results = sorted((o for o in outs if isinstance(o, SeqResult)), key=lambda r: r.name)
    errs = list(errors or []) + [o for o in outs if isinstance(o, str)]
    return EvalReport(results, errs)


def _write_curve_csv(path, thresholds, rows: dict[str, np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", *rows.keys()])
        for i, t in enumerate(thresholds):
            w.writerow([f"{t:g}", *(f"{v[i]:.6f}" for v in rows.values())])


def write_report(report: EvalReport, out_dir) -> Path:
    """Write boxes/, report.csv and curves/{precision,success}.{csv,svg} under ``out_dir``."""
    from .plots import line_plot

    out = Path(out_dir)
    (out / "boxes").mkdir(parents=True, exist_ok=True)
    (out / "curves").mkdir(parents=True, exist_ok=True)
    for r in report.results:
        write_boxes(r.boxes, out / "boxes" / f"{r.name}.txt")
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "dp20", "os50", "auc", "fps"])
        for r in report.results:
            w.writerow([r.name, f"{r.dp:.6f}", f"{r.os:.6f}", f"{r.auc:.6f}", f"{r.fps:.2f}"])
        if report.results:
            fps = np.mean([r.fps for r in report.results])
            w.writerow(["mean", f"{report.dp:.6f}", f"{report.os:.6f}", f"{report.auc:.6f}", f"{fps:.2f}"])
    prec = {r.name: r.precision for r in report.results}
    succ = {r.name: r.success for r in report.results}
    if report.results:
        prec["mean"] = np.mean(list(prec.values()), axis=0)
        succ["mean"] = np.mean(list(succ.values()), axis=0)
    _write_curve_csv(out / "curves" / "precision.csv", PRECISION_THRESHOLDS, prec)
    _write_curve_csv(out / "curves" / "success.csv", SUCCESS_THRESHOLDS, succ)
    line_plot(
        out / "curves" / "precision.svg",
        PRECISION_THRESHOLDS,
        prec,
        "location error threshold (px)",
        "precision",
        "Precision plot (OPE)",
    )
    line_plot(
        out / "curves" / "success.svg",
        SUCCESS_THRESHOLDS,
        succ,
        "overlap threshold",
        "success rate",
        "Success plot (OPE)",
    )
    if report.errors:
        (out / "errors.txt").write_text("\n".join(report.errors) + "\n")
    return out
