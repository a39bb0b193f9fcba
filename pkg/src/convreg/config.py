"""Run configuration: a flat ``key = value`` text file over the tracker, training and loss knobs."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .tracker import TrackerConfig

__all__ = ["ConfigError", "RunConfig", "KEYS"]


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _pair(text: str) -> tuple[float, float]:
    v = _floats(text)
    if len(v) != 2:
        raise ValueError(f"expected two comma-separated numbers, got {text!r}")
    return v


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# key -> (section, field, parser, description)
KEYS: dict[str, tuple[str, str, object, str]] = {
    "patch_scale": ("tracker", "patch_scale", _pair, "train/search patch as width,height multiples of the object box"),
    "cell": ("tracker", "cell", int, "feature cell size in pixels"),
    "feature": ("tracker", "feature", str, "feature kind: hog or raw"),
    "pca_channels": ("tracker", "pca_channels", int, "PCA output channels (clamped to the extractor's channel count)"),
    "update_lr": ("tracker", "update_lr", float, "Adam learning rate for per-frame updates"),
    "update_iters": ("tracker", "update_iters", int, "Adam steps per frame update"),
    "history_len": ("tracker", "history_len", int, "number of recent frames whose gradients are averaged in an update"),
    "scales": ("tracker", "scales", _floats, "comma-separated scale factors searched per frame"),
    "scale_damping": ("tracker", "scale_damping", float, "fraction of the winning scale change applied to the box"),
    "score_floor": ("tracker", "score_floor", float, "responses below this are logged as weak detections"),
    "threads": ("tracker", "threads", int, "worker threads for the per-scale search"),
    "th": ("loss", "th", float, "truncation threshold on the residual"),
    "a": ("loss", "a", float, "exponent of the positive-sample weight exp(a*y)"),
    "lam": ("loss", "lam", float, "ridge penalty on the kernel (bias is not penalised)"),
    "optimizer": ("train", "optimizer", str, "first-frame optimizer: adam or sgd"),
    "lr": ("train", "lr", float, "first-frame learning rate"),
    "max_steps": ("train", "max_steps", int, "cap on first-frame training steps"),
    "loss_threshold": ("train", "loss_threshold", float, "stop when the mean per-cell data loss falls below this"),
    "beta1": ("train", "beta1", float, "Adam first-moment decay"),
    "beta2": ("train", "beta2", float, "Adam second-moment decay"),
    "eps": ("train", "eps", float, "Adam denominator epsilon"),
    "init_std": ("train", "init_std", float, "std of the Gaussian kernel initialisation"),
    "rng_seed": ("train", "rng_seed", int, "seed for the kernel initialisation"),
    "converge_lr": ("run", "converge_lr", float, "SGD learning rate for the convergence experiment"),
}


@dataclass(frozen=True)
class RunConfig:
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    converge_lr: float = 2e-5

    def get(self, key: str):
        section, name, _, _ = KEYS[key]
        if section == "run":
            return getattr(self, name)
        if section == "tracker":
            return getattr(self.tracker, name)
        return getattr(getattr(self.tracker, section), name)

    def replace(self, **values) -> "RunConfig":
        """Return a copy with the given keys overridden (keys as in the text format)."""
        by_section: dict[str, dict] = {"tracker": {}, "loss": {}, "train": {}, "run": {}}
        for key, value in values.items():
            if key not in KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            section, name, _, _ = KEYS[key]
            by_section[section][name] = value
        try:
            loss = dataclasses.replace(self.tracker.loss, **by_section["loss"])
            train = dataclasses.replace(self.tracker.train, **by_section["train"])
            tracker = dataclasses.replace(self.tracker, loss=loss, train=train, **by_section["tracker"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return dataclasses.replace(self, tracker=tracker, **by_section["run"])

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if not sep:
                raise ConfigError(f"{source}:{lineno}: expected key = value")
            if key not in KEYS:
                raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
            if key in values:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            try:
                values[key] = KEYS[key][2](raw)
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
        try:
            return cls().replace(**values)
        except ConfigError as exc:
            raise ConfigError(f"{source}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        return cls.parse(text, str(path))

    def dump(self) -> str:
        lines = []
        for key, (_, _, _, doc) in KEYS.items():
            lines.append(f"# {doc}")
            lines.append(f"{key} = {_fmt(self.get(key))}")
        return "\n".join(lines) + "\n"

