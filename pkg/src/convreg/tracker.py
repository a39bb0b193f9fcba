"""Online tracker: train on the first frame, then detect and update per frame."""

from __future__ import annotations

import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .bbox import BBox
from .features import FeatureMap, PcaModel, apply_pca, extract, fit_pca
from .maps import motion_map, target_map
from .regression import (
    AdamState,
    Gradients,
    LossConfig,
    RegressionModel,
    TrainConfig,
    adam_step,
    conv_forward,
    gradient,
    train,
)

__all__ = ["BBox", "TrackerConfig", "TrackerState", "Tracker", "crop_patch", "track_sequence"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrackerConfig:
    patch_scale: tuple[float, float] = (9.0, 5.0)  # (width, height) multiples of the object
    cell: int = 4
    feature: str = "hog"
    pca_channels: int = 64
    loss: LossConfig = LossConfig()
    train: TrainConfig = TrainConfig()
    update_lr: float = 1e-5
    update_iters: int = 2
    history_len: int = 5
    scales: tuple[float, ...] = (0.98, 1.0, 1.02)
    scale_damping: float = 0.6
    score_floor: float = 1e-4
    threads: int = 1

    def __post_init__(self):
        if self.history_len < 1:
            raise ValueError("history_len must be >= 1")
        if min(self.patch_scale) <= 1.0:
            raise ValueError(f"patch must be strictly larger than the object, got scale {self.patch_scale}")
        if not self.scales:
            raise ValueError("at least one scale factor is required")
        if self.update_iters < 0:
            raise ValueError("update_iters must be >= 0")


@dataclass
class _Detection:
    bbox: BBox
    fmap: FeatureMap
    cell: tuple[int, int]


@dataclass
class TrackerState:
    model: RegressionModel
    pca: PcaModel
    adam: AdamState
    last_bbox: BBox
    init_size: tuple[float, float]  # (w, h) of the first box
    object_cells: tuple[int, int]  # (rows, cols) = receptive field
    patch_cells: tuple[int, int]  # (rows, cols) of the train/search grid
    history: deque = field(default_factory=deque)
    last_detection: Optional[_Detection] = None

    @property
    def response_shape(self) -> tuple[int, int]:
        return (self.patch_cells[0] - self.object_cells[0] + 1, self.patch_cells[1] - self.object_cells[1] + 1)


def crop_patch(frame, center, size, out_size=None) -> np.ndarray:
    """Crop a ``size`` = (w, h) region centred at ``center`` = (x, y), resampled to ``out_size``.

    Sampling is bilinear; anything outside the frame repeats the nearest edge
    pixel. With ``out_size == size`` and an integer-aligned region this is a
    plain sub-image. Returns float64 intensities.
    """
    frame = np.asarray(frame)
    w, h = float(size[0]), float(size[1])
    if not (w > 0 and h > 0):
        raise ValueError(f"crop size must be positive, got {size}")
    ow, oh = (int(round(w)), int(round(h))) if out_size is None else (int(out_size[0]), int(out_size[1]))
    x0 = center[0] - w / 2.0
    y0 = center[1] - h / 2.0
    # pixel k of the output has its centre at x0 + (k + 0.5) * w / ow; pixel j of the frame at j + 0.5
    xs = x0 + (np.arange(ow) + 0.5) * (w / ow) - 0.5
    ys = y0 + (np.arange(oh) + 0.5) * (h / oh) - 0.5
    rows, cols = np.meshgrid(ys, xs, indexing="ij")
    src = frame.astype(np.float64)
    if src.ndim == 2:
        return ndimage.map_coordinates(src, [rows, cols], order=1, mode="nearest")
    return np.stack(
        [ndimage.map_coordinates(src[:, :, c], [rows, cols], order=1, mode="nearest") for c in range(src.shape[2])],
        axis=2,
    )


def _mean_gradient(grads: list[Gradients]) -> Gradients:
    d_kernel = np.zeros_like(grads[0].d_kernel)
    d_bias = 0.0
    for g in grads:
        d_kernel += g.d_kernel
        d_bias += g.d_bias
    return Gradients(d_kernel / len(grads), d_bias / len(grads))


class Tracker:
    """Convolutional-regression tracker for a single sequence."""

    def __init__(self, cfg: TrackerConfig = TrackerConfig()):
        self.cfg = cfg
        self.state: Optional[TrackerState] = None

    # geometry -------------------------------------------------------------

    def _patch_px(self) -> tuple[int, int]:
        rows, cols = self.state.patch_cells
        return cols * self.cfg.cell, rows * self.cfg.cell

    def _region_size(self, bbox: BBox, s: float) -> tuple[float, float]:
        pw, ph = self._patch_px()
        iw, ih = self.state.init_size
        return pw * bbox.w / iw * s, ph * bbox.h / ih * s

    def _features(self, frame, center, region) -> FeatureMap:
        patch = crop_patch(frame, center, region, out_size=self._patch_px())
        return apply_pca(extract(patch, self.cfg.cell, self.cfg.feature), self.state.pca)

    def _cell_to_frame(self, cell, center, region) -> tuple[float, float]:
        pw, ph = self._patch_px()
        rf_h, rf_w = self.state.object_cells
        c = self.cfg.cell
        xp = (cell[1] + rf_w / 2.0) * c
        yp = (cell[0] + rf_h / 2.0) * c
        return center[0] + (xp - pw / 2.0) * region[0] / pw, center[1] + (yp - ph / 2.0) * region[1] / ph

    # stages ---------------------------------------------------------------

    def init(self, frame, bbox: BBox) -> TrackerState:
        cfg = self.cfg
        frame = np.asarray(frame)
        fh, fw = frame.shape[:2]
        # clamp the box centre into the frame
        cx = min(max(bbox.center[0], 0.0), fw)
        cy = min(max(bbox.center[1], 0.0), fh)
        bbox = BBox.from_center(cx, cy, bbox.w, bbox.h)
        c = cfg.cell
        obj = (max(1, int(round(bbox.h / c))), max(1, int(round(bbox.w / c))))
        patch = (
            max(obj[0] + 1, int(round(cfg.patch_scale[1] * bbox.h / c))),
            max(obj[1] + 1, int(round(cfg.patch_scale[0] * bbox.w / c))),
        )
        # provisional state so the geometry helpers work before the PCA exists
        self.state = TrackerState(
            model=None, pca=None, adam=None, last_bbox=bbox, init_size=(bbox.w, bbox.h), object_cells=obj, patch_cells=patch
        )
        pw, ph = self._patch_px()
        raw = extract(crop_patch(frame, bbox.center, (pw, ph)), c, cfg.feature)
        pca = fit_pca(raw, min(cfg.pca_channels, raw.channels))
        fmap = apply_pca(raw, pca)
        target = target_map(self.state.response_shape, obj)
        model, trace = train(fmap, target, obj, cfg.train, cfg.loss)
        log.debug("init: %d train steps, final snr %.3f", trace.steps, trace.snr[-1])
        self.state.model = model
        self.state.pca = pca
        self.state.adam = trace.opt_state
        self.state.history = deque([(fmap, target)], maxlen=cfg.history_len)
        return self.state

    def _detect_scale(self, frame, s: float):
        st = self.state
        center = st.last_bbox.center
        region = self._region_size(st.last_bbox, s)
        fmap = self._features(frame, center, region)
        response = conv_forward(fmap, st.model)
        final = response * motion_map(response.shape, st.object_cells)
        idx = int(np.argmax(final))
        cell = np.unravel_index(idx, final.shape)
        return float(final.flat[idx]), (int(cell[0]), int(cell[1])), fmap, center, region

    def detect(self, frame) -> tuple[BBox, float]:
        if self.state is None or self.state.model is None:
            raise RuntimeError("tracker is not initialised; call init() first")
        cfg = self.cfg
        frame = np.asarray(frame)
        # winner preference on ties: smallest |s - 1|, then listed order
        order = sorted(range(len(cfg.scales)), key=lambda k: (abs(cfg.scales[k] - 1.0), k))
        scales = [cfg.scales[k] for k in order]
        if cfg.threads > 1 and len(scales) > 1:
            with ThreadPoolExecutor(max_workers=min(cfg.threads, len(scales))) as pool:
                results = list(pool.map(lambda s: self._detect_scale(frame, s), scales))
        else:
            results = [self._detect_scale(frame, s) for s in scales]
        best = 0
        for k in range(1, len(results)):
            if results[k][0] > results[best][0]:
                best = k
        score, cell, fmap, center, region = results[best]
        s = scales[best]
        cx, cy = self._cell_to_frame(cell, center, region)
        grow = 1.0 + cfg.scale_damping * (s - 1.0)
        last = self.state.last_bbox
        bbox = BBox.from_center(cx, cy, last.w * grow, last.h * grow)
        if score < cfg.score_floor:
            log.info("detection score %.3g below floor %.3g", score, cfg.score_floor)
        self.state.last_detection = _Detection(bbox, fmap, cell)
        self.state.last_bbox = bbox
        return bbox, score

    def update(self, frame, bbox: BBox) -> TrackerState:
        st = self.state
        if st is None or st.model is None:
            raise RuntimeError("tracker is not initialised; call init() first")
        cfg = self.cfg
        det = st.last_detection
        if det is not None and det.bbox == bbox:
            # the search patch already contains the new object position
            fmap = det.fmap
            target = target_map(st.response_shape, st.object_cells, center=det.cell)
        else:
            fmap = self._features(np.asarray(frame), bbox.center, self._region_size(bbox, 1.0))
            target = target_map(st.response_shape, st.object_cells)
        st.history.append((fmap, target))
        st.last_bbox = bbox
        st.last_detection = None
        tc = cfg.train
        for _ in range(cfg.update_iters):
            g = _mean_gradient([gradient(f, st.model, t, cfg.loss) for f, t in st.history])
            st.model, st.adam = adam_step(st.model, g, st.adam, cfg.update_lr, tc.beta1, tc.beta2, tc.eps)
        return st


def track_sequence(frames, init_bbox: BBox, cfg: TrackerConfig = TrackerConfig()) -> list[BBox]:
    """Initialise on frame 0 and run detect/update on every later frame.

    ``frames`` may be any iterable of images; it is consumed lazily.
    """
    it = iter(frames)
    try:
        first = next(it)
    except StopIteration:
        raise ValueError("sequence has no frames") from None
    tracker = Tracker(cfg)
    tracker.init(first, init_bbox)
    boxes = [init_bbox]
    for frame in it:
        bbox, _ = tracker.detect(frame)
        tracker.update(frame, bbox)
        boxes.append(bbox)
    return boxes
