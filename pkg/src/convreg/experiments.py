"""Convergence and ablation experiments shared by the CLI and the acceptance tests."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .features import FeatureMap, apply_pca, extract, fit_pca, standardize
from .maps import target_map
from .regression import LossConfig, TrainConfig, TrainingDiverged, TrainTrace, train
from .synth import generate_sequence, suite_config
from .tracker import TrackerConfig, crop_patch

__all__ = [
    "CONVERGE_CONFIGS",
    "ABLATIONS",
    "ConvergeResult",
    "convergence_patch",
    "run_convergence",
    "steps_to_snr",
    "ablation_grid",
]

log = logging.getLogger(__name__)

CONVERGE_CONFIGS = ((0.0, 0.0), (0.05, 0.0), (0.05, 1.0))
ABLATIONS = ("ahnm", "patch_size")


def convergence_patch(seed: int = 0, cfg: TrackerConfig = TrackerConfig()):
    """First-frame train patch from a synthetic clutter sequence.

    Returns ``(fmap, target, rf)`` with PCA-projected, standardized features
    and the centred Gaussian target the tracker would train on.
    """
    frames, gt = generate_sequence(suite_config("clutter", seed, n_frames=1))
    box = gt[0]
    c = cfg.cell
    rf = (max(1, round(box.h / c)), max(1, round(box.w / c)))
    rows = max(rf[0] + 1, round(cfg.patch_scale[1] * box.h / c))
    cols = max(rf[1] + 1, round(cfg.patch_scale[0] * box.w / c))
    raw = extract(crop_patch(frames[0], box.center, (cols * c, rows * c)), c, cfg.feature)
    fmap = standardize(apply_pca(raw, fit_pca(raw, min(cfg.pca_channels, raw.channels))))
    target = target_map((rows - rf[0] + 1, cols - rf[1] + 1), rf)
    return fmap, target, rf


@dataclass
class ConvergeResult:
    th: float
    a: float
    trace: Optional[TrainTrace]
    error: Optional[str] = None

    @property
    def label(self) -> str:
        return f"th={self.th:g},a={self.a:g}"


def run_convergence(
    fmap: FeatureMap,
    target: np.ndarray,
    rf: tuple[int, int],
    configs=CONVERGE_CONFIGS,
    steps: int = 500,
    lr: float = 2e-5,
    lam: float = 0.1,
    seed: int = 0,
    init_std: float = 1e-3,
) -> list[ConvergeResult]:
    """Plain SGD for a fixed number of steps under each (th, a); same initial kernel for all."""
    tc = TrainConfig(optimizer="sgd", lr=lr, max_steps=steps, loss_threshold=0.0, init_std=init_std, rng_seed=seed)
    out = []
    for th, a in configs:
        try:
            _, trace = train(fmap, target, rf, tc, LossConfig(th=th, a=a, lam=lam))
            out.append(ConvergeResult(th, a, trace))
        except TrainingDiverged as exc:
            log.warning("th=%g a=%g: %s", th, a, exc)
            out.append(ConvergeResult(th, a, None, str(exc)))
    return out


def steps_to_snr(trace: TrainTrace, level: float) -> Optional[int]:
    """First step whose SNR reaches ``level``; None if it never does."""
    hits = np.flatnonzero(np.asarray(trace.snr) >= level)
    return int(hits[0]) if hits.size else None


def ablation_grid(dimension: str, base: TrackerConfig = TrackerConfig()) -> list[tuple[str, TrackerConfig]]:
    if dimension == "ahnm":
        return [
            (f"th={th:g},a={a:g}", dataclasses.replace(base, loss=dataclasses.replace(base.loss, th=th, a=a)))
            for th, a in ((0.1, 1.0), (0.0, 0.0))
        ]
    if dimension == "patch_size":
        return [
            (f"{w:g}x{h:g}", dataclasses.replace(base, patch_scale=(w, h)))
            for w, h in ((9.0, 5.0), (7.0, 5.0), (5.0, 3.0), (3.0, 3.0))
        ]
    raise ValueError(f"unknown ablation {dimension!r}; expected one of {ABLATIONS}")
