"""Synthetic tracking sequences with exact ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .bbox import BBox

__all__ = ["SynthConfig", "generate_sequence", "save_otb", "suite_config", "SUITES"]

_BLOCK = 4


@dataclass(frozen=True)
class SynthConfig:
    frame_w: int = 160
    frame_h: int = 120
    object_w: int = 24
    object_h: int = 24
    start: Optional[tuple[int, int]] = None  # top-left; default centred
    motion: str = "static"  # static | linear | sinusoidal
    velocity: tuple[float, float] = (0.0, 0.0)  # px/frame, linear
    amplitude: tuple[float, float] = (0.0, 0.0)  # px, sinusoidal
    period: float = 20.0  # frames, sinusoidal
    texture_seed: int = 0
    background: str = "noise"  # flat | noise | clutter
    n_distractors: int = 0
    background_contrast: float = 40.0  # half-range of background block intensities around 128
    background_block: int = 2  # px
    occlusion: Optional[tuple[int, int, float]] = None  # (start, end inclusive, coverage)
    scale_drift: float = 1.0
    appearance_drift: float = 0.0  # blend fraction toward a second texture by the last frame
    noise_std: float = 0.0  # per-frame sensor noise
    n_frames: int = 30

    def __post_init__(self):
        if self.motion not in ("static", "linear", "sinusoidal"):
            raise ValueError(f"unknown motion {self.motion!r}")
        if self.background not in ("flat", "noise", "clutter"):
            raise ValueError(f"unknown background {self.background!r}")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if self.occlusion is not None and not 0.0 <= self.occlusion[2] <= 1.0:
            raise ValueError(f"occlusion coverage must be in [0, 1], got {self.occlusion[2]}")


def _blocks(rng, h, w, lo, hi, block=_BLOCK) -> np.ndarray:
    bh, bw = -(-h // block), -(-w // block)
    vals = rng.uniform(lo, hi, size=(bh, bw))
    return np.kron(vals, np.ones((block, block)))[:h, :w]


def _resize_nearest(tex: np.ndarray, h: int, w: int) -> np.ndarray:
    if tex.shape == (h, w):
        return tex
    rows = np.minimum((np.arange(h) + 0.5) * tex.shape[0] / h, tex.shape[0] - 1).astype(int)
    cols = np.minimum((np.arange(w) + 0.5) * tex.shape[1] / w, tex.shape[1] - 1).astype(int)
    return tex[rows][:, cols]


def _trajectory(cfg: SynthConfig) -> list[BBox]:
    if cfg.start is None:
        x0 = (cfg.frame_w - cfg.object_w) / 2.0
        y0 = (cfg.frame_h - cfg.object_h) / 2.0
    else:
        x0, y0 = cfg.start
    boxes = []
    for t in range(cfg.n_frames):
        f = cfg.scale_drift**t
        w = max(1, int(round(cfg.object_w * f)))
        h = max(1, int(round(cfg.object_h * f)))
        if cfg.motion == "linear":
            dx, dy = cfg.velocity[0] * t, cfg.velocity[1] * t
        elif cfg.motion == "sinusoidal":
            s = math.sin(2 * math.pi * t / cfg.period)
            dx, dy = cfg.amplitude[0] * s, cfg.amplitude[1] * s
        else:
            dx = dy = 0.0
        # keep the box centre on the unscaled trajectory
        cx = x0 + cfg.object_w / 2.0 + dx
        cy = y0 + cfg.object_h / 2.0 + dy
        x = int(round(cx - w / 2.0))
        y = int(round(cy - h / 2.0))
        if x < 0 or y < 0 or x + w > cfg.frame_w or y + h > cfg.frame_h:
            raise ValueError(f"object leaves the frame at frame {t}: box ({x}, {y}, {w}, {h})")
        boxes.append(BBox(x, y, w, h))
    return boxes


def generate_sequence(cfg: SynthConfig) -> tuple[list[np.ndarray], list[BBox]]:
    """Render ``cfg.n_frames`` uint8 grayscale frames and their exact boxes."""
    gt = _trajectory(cfg)
    rng = np.random.default_rng(cfg.texture_seed)
    obj = _blocks(rng, cfg.object_h, cfg.object_w, 0, 255)
    obj_late = _blocks(rng, cfg.object_h, cfg.object_w, 0, 255)

    fh, fw = cfg.frame_h, cfg.frame_w
    if cfg.background == "flat":
        bg = np.full((fh, fw), 128.0)
    else:
        c = cfg.background_contrast
        bg = 128.0 + _blocks(rng, fh, fw, -c, c, block=cfg.background_block)
    if cfg.background == "clutter":
        for _ in range(cfg.n_distractors):
            dh, dw = cfg.object_h, cfg.object_w
            y = int(rng.integers(0, fh - dh + 1))
            x = int(rng.integers(0, fw - dw + 1))
            bg[y : y + dh, x : x + dw] = _blocks(rng, dh, dw, 0, 255)
    occluder = _blocks(rng, cfg.object_h, cfg.object_w, 100, 156, block=8)

    frames = []
    for t, box in enumerate(gt):
        frame = bg.copy()
        x, y, w, h = int(box.x), int(box.y), int(box.w), int(box.h)
        mix = cfg.appearance_drift * t / max(cfg.n_frames - 1, 1)
        frame[y : y + h, x : x + w] = _resize_nearest((1 - mix) * obj + mix * obj_late, h, w)
        if cfg.occlusion is not None:
            o_start, o_end, coverage = cfg.occlusion
            if o_start <= t <= o_end and coverage > 0:
                cw = int(math.ceil(coverage * w))
                frame[y : y + h, x : x + cw] = _resize_nearest(occluder, h, w)[:, :cw]
        if cfg.noise_std > 0:
            frame = frame + np.random.default_rng((cfg.texture_seed, t)).normal(0, cfg.noise_std, frame.shape)
        frames.append(np.clip(np.round(frame), 0, 255).astype(np.uint8))
    return frames, gt


def save_otb(frames, gt, directory) -> Path:
    """Write ``img/%04d.png`` and ``groundtruth_rect.txt`` (1-based) under ``directory``."""
    root = Path(directory)
    (root / "img").mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames, start=1):
        Image.fromarray(frame).save(root / "img" / f"{i:04d}.png")
    lines = [f"{int(round(b.x)) + 1},{int(round(b.y)) + 1},{int(round(b.w))},{int(round(b.h))}" for b in gt]
    (root / "groundtruth_rect.txt").write_text("\n".join(lines) + "\n")
    return root


SUITES = ("easy", "occlusion", "clutter")


def suite_config(kind: str, seed: int, n_frames: Optional[int] = None) -> SynthConfig:
    """Preset configurations for the three benchmark suites."""
    rng = np.random.default_rng(10_000 + seed)
    if kind == "easy":
        angle = rng.uniform(0, 2 * math.pi)
        speed = rng.uniform(1.0, 3.0)
        n = n_frames or 30
        return SynthConfig(
            frame_w=320,
            frame_h=240,
            motion="linear",
            velocity=(speed * math.cos(angle), speed * math.sin(angle)),
            texture_seed=seed,
            background="noise",
            noise_std=4.0,
            n_frames=n,
        )
    if kind == "occlusion":
        n = n_frames or 25
        return SynthConfig(
            frame_w=200,
            frame_h=160,
            motion="linear",
            velocity=(float(rng.choice([-1.0, 1.0])), 0.0),
            texture_seed=seed,
            background="noise",
            occlusion=(8, 12, 1.0),
            noise_std=4.0,
            n_frames=n,
        )
    if kind == "clutter":
        n = n_frames or 30
        return SynthConfig(
            frame_w=200,
            frame_h=160,
            motion="sinusoidal",
            amplitude=(rng.uniform(20, 35) * rng.choice([-1, 1]), rng.uniform(10, 20) * rng.choice([-1, 1])),
            period=15.0,
            texture_seed=seed,
            background="clutter",
            n_distractors=14,
            background_contrast=80.0,
            background_block=4,
            appearance_drift=0.4,
            noise_std=4.0,
            n_frames=n,
        )
    raise ValueError(f"unknown suite {kind!r}; expected one of {SUITES}")
