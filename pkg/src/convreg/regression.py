"""Ridge regression over every sliding window of a feature map, evaluated as a
single one-output-channel valid convolution and trained by gradient descent
under a truncated, target-weighted squared loss."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .features import FeatureMap

__all__ = [
    "RegressionError",
    "TrainingDiverged",
    "RegressionModel",
    "LossConfig",
    "TrainConfig",
    "Gradients",
    "AdamState",
    "LossValue",
    "TrainTrace",
    "init_model",
    "conv_forward",
    "extract_samples",
    "truncate",
    "weight",
    "loss",
    "gradient",
    "loss_and_gradient",
    "sgd_step",
    "adam_step",
    "train",
    "closed_form_ridge",
    "snr",
]


class RegressionError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"training diverged at step {step}: loss = {value}")
        self.step = step
        self.value = value


@dataclass
class RegressionModel:
    kernel: np.ndarray  # (rf_h, rf_w, C)
    bias: float = 0.0

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        if self.kernel.ndim != 3 or min(self.kernel.shape) < 1:
            raise RegressionError(f"kernel must be rf_h x rf_w x C, got shape {self.kernel.shape}")
        self.bias = float(self.bias)

    @property
    def rf(self) -> tuple[int, int]:
        return self.kernel.shape[0], self.kernel.shape[1]

    @property
    def channels(self) -> int:
        return self.kernel.shape[2]

    def coefficients(self) -> np.ndarray:
        """Flattened kernel followed by the bias (the bias-augmented ``w``)."""
        return np.append(self.kernel.ravel(), self.bias)


@dataclass(frozen=True)
class LossConfig:
    th: float = 0.1
    a: float = 1.0
    lam: float = 0.1

    def __post_init__(self):
        if self.th < 0 or self.lam < 0:
            raise RegressionError(f"th and lambda must be >= 0, got th={self.th} lambda={self.lam}")


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 5e-5
    max_steps: int = 4000
    loss_threshold: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_std: float = 1e-3
    rng_seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise RegressionError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if not self.lr > 0:
            raise RegressionError(f"lr must be > 0, got {self.lr}")
        if self.max_steps < 0:
            raise RegressionError(f"max_steps must be >= 0, got {self.max_steps}")


@dataclass
class Gradients:
    d_kernel: np.ndarray
    d_bias: float


@dataclass
class AdamState:
    m_kernel: np.ndarray
    v_kernel: np.ndarray
    m_bias: float = 0.0
    v_bias: float = 0.0
    t: int = 0

    @classmethod
    def zeros_like(cls, model: RegressionModel) -> "AdamState":
        return cls(np.zeros_like(model.kernel), np.zeros_like(model.kernel))


@dataclass
class LossValue:
    total: float
    data: float
    mean_data: float
    residuals: np.ndarray


@dataclass
class TrainTrace:
    data_loss: list = field(default_factory=list)
    total_loss: list = field(default_factory=list)
    snr: list = field(default_factory=list)
    opt_state: Optional[AdamState] = None

    @property
    def steps(self) -> int:
        """Number of optimizer steps taken (rows minus the initial row)."""
        return len(self.total_loss) - 1

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "data_loss", "total_loss", "snr"])
            for i, row in enumerate(zip(self.data_loss, self.total_loss, self.snr)):
                w.writerow([i, *(repr(float(v)) for v in row)])


def init_model(rf: tuple[int, int], channels: int, init_std: float, seed: int) -> RegressionModel:
    rng = np.random.default_rng(seed)
    return RegressionModel(rng.normal(0.0, init_std, size=(rf[0], rf[1], channels)), 0.0)


def _response_shape(fmap: FeatureMap, rf: tuple[int, int]) -> tuple[int, int]:
    h = fmap.grid_h - rf[0] + 1
    w = fmap.grid_w - rf[1] + 1
    if h < 1 or w < 1:
        raise RegressionError(f"receptive field {rf} larger than feature grid {fmap.grid_h}x{fmap.grid_w}")
    return h, w


def _check(fmap: FeatureMap, model: RegressionModel) -> tuple[int, int]:
    if fmap.channels != model.channels:
        raise RegressionError(f"channel mismatch: map has {fmap.channels}, kernel has {model.channels}")
    return _response_shape(fmap, model.rf)


def conv_forward(fmap: FeatureMap, model: RegressionModel) -> np.ndarray:
    """Valid, stride-1 correlation of ``fmap`` with the kernel, plus bias."""
    h, w = _check(fmap, model)
    x = fmap.data.astype(np.float64)
    out = np.full((h, w), model.bias)
    # fixed offset order keeps the reduction independent of threading
    for i in range(model.rf[0]):
        for j in range(model.rf[1]):
            out += x[i : i + h, j : j + w] @ model.kernel[i, j]
    return out


def extract_samples(fmap: FeatureMap, rf_h: int, rf_w: int, with_bias_column: bool = False) -> np.ndarray:
    """Sample matrix: one row per window in raster order, kernel flattening order."""
    h, w = _response_shape(fmap, (rf_h, rf_w))
    x = fmap.data.astype(np.float64)
    win = np.lib.stride_tricks.sliding_window_view(x, (rf_h, rf_w), axis=(0, 1))
    # (h, w, C, rf_h, rf_w) -> (h, w, rf_h, rf_w, C)
    rows = win.transpose(0, 1, 3, 4, 2).reshape(h * w, rf_h * rf_w * fmap.channels)
    if with_bias_column:
        rows = np.hstack([rows, np.ones((h * w, 1))])
    return np.ascontiguousarray(rows)


def truncate(e, th: float):
    """Zero residuals with magnitude below ``th``; ``|e| == th`` is kept."""
    e = np.asarray(e, dtype=np.float64)
    out = np.where(np.abs(e) >= th, e, 0.0)
    return float(out) if out.ndim == 0 else out


def weight(y, a: float):
    out = np.exp(a * np.asarray(y, dtype=np.float64))
    return float(out) if out.ndim == 0 else out


def loss(response: np.ndarray, target: np.ndarray, model: RegressionModel, cfg: LossConfig) -> LossValue:
    response = np.asarray(response, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if response.shape != target.shape:
        raise RegressionError(f"response {response.shape} and target {target.shape} differ in shape")
    e = response - target
    data = float(np.sum((weight(target, cfg.a) * truncate(e, cfg.th)) ** 2))
    reg = cfg.lam * float(np.sum(model.kernel**2))
    return LossValue(total=data + reg, data=data, mean_data=data / e.size, residuals=e)


def _backward(fmap: FeatureMap, model: RegressionModel, target: np.ndarray, residuals: np.ndarray, cfg: LossConfig):
    h, w = residuals.shape
    active = np.abs(residuals) >= cfg.th
    g = np.where(active, 2.0 * weight(target, 2.0 * cfg.a) * residuals, 0.0)
    x = fmap.data.astype(np.float64)
    d_kernel = np.empty_like(model.kernel)
    for i in range(model.rf[0]):
        for j in range(model.rf[1]):
            d_kernel[i, j] = np.tensordot(g, x[i : i + h, j : j + w], axes=([0, 1], [0, 1]))
    d_kernel += 2.0 * cfg.lam * model.kernel
    return Gradients(d_kernel, float(g.sum()))


def loss_and_gradient(fmap: FeatureMap, model: RegressionModel, target: np.ndarray, cfg: LossConfig):
    """Forward pass, loss and gradient in one go; returns (response, LossValue, Gradients)."""
    response = conv_forward(fmap, model)
    lv = loss(response, target, model, cfg)
    return response, lv, _backward(fmap, model, target, lv.residuals, cfg)


def gradient(fmap: FeatureMap, model: RegressionModel, target: np.ndarray, cfg: LossConfig) -> Gradients:
    """Gradient of the truncated, weighted ridge loss.

    Per cell, d/de (W(y) T(e))^2 is 2 W(y)^2 e where |e| >= th and 0 elsewhere;
    the regulariser contributes 2 lambda kernel, and the bias is unregularised.
    """
    return loss_and_gradient(fmap, model, target, cfg)[2]


def sgd_step(model: RegressionModel, grads: Gradients, lr: float) -> RegressionModel:
    return RegressionModel(model.kernel - lr * grads.d_kernel, model.bias - lr * grads.d_bias)


def adam_step(
    model: RegressionModel,
    grads: Gradients,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[RegressionModel, AdamState]:
    t = state.t + 1
    m_k = beta1 * state.m_kernel + (1 - beta1) * grads.d_kernel
    v_k = beta2 * state.v_kernel + (1 - beta2) * grads.d_kernel**2
    m_b = beta1 * state.m_bias + (1 - beta1) * grads.d_bias
    v_b = beta2 * state.v_bias + (1 - beta2) * grads.d_bias**2
    bc1 = 1 - beta1**t
    bc2 = 1 - beta2**t
    kernel = model.kernel - lr * (m_k / bc1) / (np.sqrt(v_k / bc2) + eps)
    bias = model.bias - lr * (m_b / bc1) / (np.sqrt(v_b / bc2) + eps)
    return RegressionModel(kernel, bias), AdamState(m_k, v_k, m_b, v_b, t)


def train(
    fmap: FeatureMap,
    target: np.ndarray,
    rf: tuple[int, int],
    cfg: TrainConfig = TrainConfig(),
    loss_cfg: LossConfig = LossConfig(),
    init: Optional[RegressionModel] = None,
    opt_state: Optional[AdamState] = None,
) -> tuple[RegressionModel, TrainTrace]:
    """Fit a model on one (features, target) pair.

    Stops once the mean-per-cell data loss drops below ``cfg.loss_threshold``
    or after ``cfg.max_steps`` optimizer steps. Row 0 of the trace is the
    initial model; row k is the model after k steps.
    """
    target = np.asarray(target, dtype=np.float64)
    shape = _response_shape(fmap, tuple(rf))
    if target.shape != shape:
        raise RegressionError(f"target shape {target.shape} does not match response shape {shape}")
    if init is None:
        model = init_model(tuple(rf), fmap.channels, cfg.init_std, cfg.rng_seed)
    else:
        if init.rf != tuple(rf) or init.channels != fmap.channels:
            raise RegressionError("initial model shape does not match receptive field / channels")
        model = replace(init, kernel=init.kernel.copy())
    state = opt_state if opt_state is not None else AdamState.zeros_like(model)

    trace = TrainTrace()
    step = 0
    while True:
        with np.errstate(over="ignore", invalid="ignore"):
            response, lv, grads = loss_and_gradient(fmap, model, target, loss_cfg)
        if not np.isfinite(lv.total):
            raise TrainingDiverged(step, lv.total)
        trace.data_loss.append(lv.mean_data)
        trace.total_loss.append(lv.total)
        trace.snr.append(snr(response))
        if lv.mean_data < cfg.loss_threshold or step >= cfg.max_steps:
            break
        if cfg.optimizer == "sgd":
            model = sgd_step(model, grads, cfg.lr)
        else:
            model, state = adam_step(model, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        step += 1
    trace.opt_state = state
    return model, trace


def closed_form_ridge(X: np.ndarray, Y: np.ndarray, lam: float, penalty_mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Solve (X^T X + lam D) w = X^T Y, D = diag(penalty_mask) (identity by default).

    Pass ``penalty_mask`` with a 0 on a bias column to leave it unregularised.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.size == 0:
        raise RegressionError(f"X must be a nonempty matrix, got shape {X.shape}")
    if X.shape[0] != Y.size:
        raise RegressionError(f"X has {X.shape[0]} rows but Y has {Y.size} entries")
    n = X.shape[1]
    d = np.ones(n) if penalty_mask is None else np.asarray(penalty_mask, dtype=np.float64)
    A = X.T @ X + lam * np.diag(d)
    b = X.T @ Y
    try:
        w = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise RegressionError(f"singular normal equations (lambda={lam})") from exc
    # one step of iterative refinement, then verify
    w = w + np.linalg.solve(A, b - A @ w)
    res = np.linalg.norm(A @ w - b)
    if not np.isfinite(res) or res > 1e-8 * max(np.linalg.norm(b), np.finfo(float).tiny):
        raise RegressionError(f"normal equations ill-conditioned (lambda={lam}, residual {res:.3e})")
    return w


def snr(response: np.ndarray) -> float:
    """exp(max - mean) of a response map."""
    m = np.asarray(response, dtype=np.float64)
    if m.size == 0:
        raise RegressionError("empty response map")
    # max >= mean always; rounding in the mean can say otherwise for flat maps
    gap = max(float(m.max() - m.mean()), 0.0)
    with np.errstate(over="ignore"):  # a runaway response reports inf
        return float(np.exp(gap))
