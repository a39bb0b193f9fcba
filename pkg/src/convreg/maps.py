"""Gaussian label maps in response-grid coordinates."""

from __future__ import annotations

import numpy as np

__all__ = ["TARGET_SIGMA_FACTOR", "MOTION_SIGMA_FACTOR", "gaussian_map", "target_map", "motion_map"]

TARGET_SIGMA_FACTOR = 0.1
MOTION_SIGMA_FACTOR = 0.6


def gaussian_map(h: int, w: int, center, sigma, peak: float = 1.0) -> np.ndarray:
    """peak * exp(-((r - cr)^2 / 2 sr^2 + (c - cc)^2 / 2 sc^2)) on an h x w grid."""
    if h < 1 or w < 1:
        raise ValueError(f"map dims must be >= 1, got {h}x{w}")
    sr, sc = sigma
    if not (sr > 0 and sc > 0):
        raise ValueError(f"sigma must be positive, got {sigma}")
    cr, cc = center
    r = (np.arange(h) - cr) ** 2 / (2.0 * sr * sr)
    c = (np.arange(w) - cc) ** 2 / (2.0 * sc * sc)
    return peak * np.exp(-(r[:, None] + c[None, :]))


def _grid_center(shape) -> tuple[float, float]:
    return (shape[0] - 1) / 2.0, (shape[1] - 1) / 2.0


def target_map(response_shape, object_cells, center=None) -> np.ndarray:
    """Regression target: peak 1 at the object's window, sigma = 0.1 x object size.

    ``center`` defaults to the middle of the response grid, which is where a
    patch centred on the object puts it.
    """
    oh, ow = object_cells
    if oh <= 0 or ow <= 0:
        raise ValueError(f"object must span at least one cell, got {object_cells}")
    h, w = response_shape
    if center is None:
        center = _grid_center(response_shape)
    return gaussian_map(h, w, center, (TARGET_SIGMA_FACTOR * oh, TARGET_SIGMA_FACTOR * ow))


def motion_map(response_shape, object_cells, last_center=None) -> np.ndarray:
    """Motion prior: peak 1 at the previous object position, sigma = 0.6 x object size."""
    h, w = response_shape
    if last_center is None:
        last_center = _grid_center(response_shape)
    cr = min(max(float(last_center[0]), 0.0), h - 1.0)
    cc = min(max(float(last_center[1]), 0.0), w - 1.0)
    oh, ow = object_cells
    return gaussian_map(h, w, (cr, cc), (MOTION_SIGMA_FACTOR * oh, MOTION_SIGMA_FACTOR * ow))
