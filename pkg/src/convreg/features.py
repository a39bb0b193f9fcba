"""Feature maps: raw intensity cells, 31-channel HOG, PCA channel reduction and
the CRFM binary container used to ingest precomputed deep features."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "FeatureMap",
    "FeatureError",
    "PcaModel",
    "to_gray",
    "extract_raw",
    "extract_hog",
    "extract",
    "fit_pca",
    "apply_pca",
    "standardize",
    "save_feature_map",
    "load_feature_map",
]

HOG_CHANNELS = 31
_N_ORIENT = 18
_HOG_CLIP = 0.2
_HOG_EPS = 1e-4
_TEXTURE_SCALE = 0.2357

_MAGIC = b"CRFM"
_HEADER = struct.Struct("<4s4I2d")


class FeatureError(ValueError):
    """Raised for invalid images, feature maps or feature files."""


@dataclass
class FeatureMap:
    """H x W x C grid of features sampled every ``stride`` pixels.

    ``origin`` is the (x, y) pixel coordinate of the center of cell (0, 0).
    """

    data: np.ndarray
    stride: int
    origin: tuple[float, float] = field(default=None)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or min(data.shape) < 1:
            raise FeatureError(f"feature map must be a nonempty H x W x C grid, got shape {data.shape}")
        if self.stride < 1:
            raise FeatureError(f"stride must be >= 1, got {self.stride}")
        self.data = data
        self.stride = int(self.stride)
        if self.origin is None:
            self.origin = (self.stride / 2.0, self.stride / 2.0)
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def grid_h(self) -> int:
        return self.data.shape[0]

    @property
    def grid_w(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other):
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return (
            self.stride == other.stride
            and self.origin == other.origin
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


@dataclass
class PcaModel:
    mean: np.ndarray  # (C_in,)
    basis: np.ndarray  # (C_in, C_out), orthonormal columns
    eigenvalues: np.ndarray  # (C_out,), descending
    degenerate: bool = False

    @property
    def in_channels(self) -> int:
        return self.basis.shape[0]

    @property
    def out_channels(self) -> int:
        return self.basis.shape[1]


def _check_image(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim not in (2, 3) or img.size == 0:
        raise FeatureError(f"image must be a nonempty H x W or H x W x 3 array, got shape {img.shape}")
    if img.ndim == 3 and img.shape[2] not in (1, 3):
        raise FeatureError(f"image must have 1 or 3 channels, got {img.shape[2]}")
    return img


def to_gray(img) -> np.ndarray:
    """Luma (ITU-R 601) of an image as float64 in the image's intensity units."""
    img = _check_image(img)
    if img.ndim == 2:
        return img.astype(np.float64)
    if img.shape[2] == 1:
        return img[:, :, 0].astype(np.float64)
    rgb = img.astype(np.float64)
    return 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]


def extract_raw(img, cell: int) -> FeatureMap:
    """Mean intensity of each ``cell`` x ``cell`` block, scaled to [0, 1]."""
    img = _check_image(img)
    if cell < 1:
        raise FeatureError(f"cell must be >= 1, got {cell}")
    h, w = img.shape[:2]
    if cell > h or cell > w:
        raise FeatureError(f"cell {cell} larger than image {h}x{w}")
    gh, gw = h // cell, w // cell
    x = img.astype(np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    x = x[: gh * cell, : gw * cell]
    blocks = x.reshape(gh, cell, gw, cell, x.shape[2]).mean(axis=(1, 3))
    return FeatureMap(blocks / 255.0, stride=cell)


def extract_hog(img, cell: int = 4) -> FeatureMap:
    """Felzenszwalb-style 31-channel HOG with one output cell per input cell.

    Channels: 18 contrast-sensitive orientations, 9 contrast-insensitive
    orientations, 4 texture energies. Orientations are soft-binned between the
    two nearest bin centers and votes are bilinearly spread over neighbouring
    cells. Block normalisation at the border replicates the edge cells so the
    output grid is ``floor(h / cell) x floor(w / cell)``.
    """
    if cell < 1:
        raise FeatureError(f"cell must be >= 1, got {cell}")
    gray = to_gray(img) / 255.0
    h, w = gray.shape
    if h < 2 * cell or w < 2 * cell:
        raise FeatureError(f"image {h}x{w} too small for HOG with cell {cell} (need >= {2 * cell})")
    gh, gw = h // cell, w // cell
    gray = gray[: gh * cell, : gw * cell]
    h, w = gray.shape

    padded = np.pad(gray, 1, mode="edge")
    gx = padded[1:-1, 2:] - padded[1:-1, :-2]
    gy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    mag = np.hypot(gx, gy)
    angle = np.mod(np.arctan2(gy, gx), 2 * np.pi)

    pos = angle * (_N_ORIENT / (2 * np.pi))
    o0 = np.floor(pos)
    fo = pos - o0
    o0 = o0.astype(np.int64) % _N_ORIENT
    o1 = (o0 + 1) % _N_ORIENT

    # pixel center in cell units, relative to cell centers
    ry = (np.arange(h) + 0.5) / cell - 0.5
    rx = (np.arange(w) + 0.5) / cell - 0.5
    cy0 = np.floor(ry).astype(np.int64)
    cx0 = np.floor(rx).astype(np.int64)
    fy = (ry - cy0)[:, None]
    fx = (rx - cx0)[None, :]
    cy0 = np.broadcast_to(cy0[:, None], (h, w))
    cx0 = np.broadcast_to(cx0[None, :], (h, w))

    hist = np.zeros(gh * gw * _N_ORIENT)
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            cy = cy0 + dy
            cx = cx0 + dx
            ok = (cy >= 0) & (cy < gh) & (cx >= 0) & (cx < gw)
            base = (cy * gw + cx) * _N_ORIENT
            wsp = mag * wy * wx
            for ob, wo in ((o0, 1 - fo), (o1, fo)):
                idx = (base + ob)[ok]
                hist += np.bincount(idx, weights=(wsp * wo)[ok], minlength=hist.size)
    sens = hist.reshape(gh, gw, _N_ORIENT)
    insens = sens[:, :, :9] + sens[:, :, 9:]

    energy = np.pad((insens**2).sum(axis=2), 1, mode="edge")
    # block sums over the four 2x2 neighbourhoods containing each cell
    quad = energy[:-1, :-1] + energy[1:, :-1] + energy[:-1, 1:] + energy[1:, 1:]
    norms = [
        1.0 / np.sqrt(quad[ys : ys + gh, xs : xs + gw] + _HOG_EPS)
        for ys in (0, 1)
        for xs in (0, 1)
    ]

    out = np.zeros((gh, gw, HOG_CHANNELS))
    for k, n in enumerate(norms):
        s = np.minimum(sens * n[:, :, None], _HOG_CLIP)
        u = np.minimum(insens * n[:, :, None], _HOG_CLIP)
        out[:, :, :18] += 0.5 * s
        out[:, :, 18:27] += 0.5 * u
        out[:, :, 27 + k] = _TEXTURE_SCALE * s.sum(axis=2)
    return FeatureMap(out, stride=cell)


def extract(img, cell: int, kind: str = "hog") -> FeatureMap:
    if kind == "hog":
        return extract_hog(img, cell)
    if kind == "raw":
        return extract_raw(img, cell)
    raise FeatureError(f"unknown feature kind {kind!r} (expected 'hog' or 'raw')")


def fit_pca(fmap: FeatureMap, out_channels: int) -> PcaModel:
    """Fit a mean-centred PCA over the cells of ``fmap``.

    Basis columns are eigenvectors of the population covariance in
    descending eigenvalue order, each signed so that its largest-magnitude
    component is positive. If a requested component has (numerically) zero
    variance the eigensolver's orthonormal completion is kept and the model
    is flagged ``degenerate``.
    """
    c_in = fmap.channels
    n_cells = fmap.grid_h * fmap.grid_w
    if not 1 <= out_channels <= c_in:
        raise FeatureError(f"out_channels must be in [1, {c_in}], got {out_channels}")
    if n_cells < out_channels:
        raise FeatureError(f"{n_cells} cells are too few to fit {out_channels} components")
    x = fmap.data.reshape(-1, c_in).astype(np.float64)
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / n_cells
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(-evals, kind="stable")[:out_channels]
    evals = np.clip(evals[order], 0.0, None)
    basis = evecs[:, order]
    idx = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[idx, np.arange(out_channels)])
    signs[signs == 0] = 1.0
    basis = basis * signs
    top = evals[0] if evals.size else 0.0
    degenerate = bool(np.any(evals <= 1e-12 * max(top, 1e-300)))
    return PcaModel(mean=mean, basis=basis, eigenvalues=evals, degenerate=degenerate)


def apply_pca(fmap: FeatureMap, pca: PcaModel) -> FeatureMap:
    if fmap.channels != pca.in_channels:
        raise FeatureError(f"channel mismatch: map has {fmap.channels}, PCA expects {pca.in_channels}")
    x = fmap.data.astype(np.float64) - pca.mean
    return FeatureMap(x @ pca.basis, stride=fmap.stride, origin=fmap.origin)


def standardize(fmap: FeatureMap) -> FeatureMap:
    """Per-channel zero mean / unit variance over the cells of ``fmap``."""
    x = fmap.data.astype(np.float64)
    mu = x.mean(axis=(0, 1))
    sd = x.std(axis=(0, 1))
    sd[sd == 0] = 1.0
    return FeatureMap((x - mu) / sd, stride=fmap.stride, origin=fmap.origin)


def save_feature_map(fmap: FeatureMap, path) -> None:
    header = _HEADER.pack(_MAGIC, fmap.grid_h, fmap.grid_w, fmap.channels, fmap.stride, *fmap.origin)
    Path(path).write_bytes(header + fmap.data.astype("<f4").tobytes())


def load_feature_map(path) -> FeatureMap:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FeatureError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, gh, gw, c, stride, ox, oy = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FeatureError(f"{path}: bad magic {magic!r}")
    if min(gh, gw, c, stride) < 1:
        raise FeatureError(f"{path}: invalid header dims grid={gh}x{gw} channels={c} stride={stride}")
    n = gh * gw * c
    payload = raw[_HEADER.size :]
    if len(payload) != 4 * n:
        raise FeatureError(f"{path}: payload has {len(payload)} bytes, header declares {4 * n}")
    data = np.frombuffer(payload, dtype="<f4")
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        raise FeatureError(f"{path}: non-finite value at index {bad[0]}")
    return FeatureMap(data.reshape(gh, gw, c).astype(np.float32), stride=stride, origin=(ox, oy))
