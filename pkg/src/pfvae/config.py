"""Run configuration: defaults, profiles and the flat ``key = value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .nets import ModelConfig


@dataclass
class RunConfig:
    input_dim: int = 784
    hidden_dims: tuple[int, ...] = (10, 10, 10, 10)
    latent_dim: int = 2
    flow_length: int = 4
    lr: float = 0.002
    iterations: int = 500_000
    batch_size: int = 1
    seed: int = 0
    train_images: str = "data/train-images-idx3-ubyte"
    train_labels: str = "data/train-labels-idx1-ubyte"
    test_images: str = "data/t10k-images-idx3-ubyte"
    test_labels: str = "data/t10k-labels-idx1-ubyte"
    subset: int | None = None
    out_dir: str = "runs/default"
    log_interval: int = 1000
    checkpoint_every: int = 0
    clip_norm: float = 0.0
    n_per_class: int = 200
    prior_at: str = "zK"

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        for name in ("input_dim", "latent_dim", "iterations", "batch_size", "log_interval", "n_per_class"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if any(h <= 0 for h in self.hidden_dims):
            raise ValueError("hidden_dims must be positive")
        if self.flow_length < 0:
            raise ValueError("flow_length must be >= 0")
        if self.subset is not None and self.subset <= 0:
            raise ValueError("subset must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.prior_at not in ("zK", "z0"):
            raise ValueError("prior_at must be zK or z0")
        if self.checkpoint_every < 0 or self.clip_norm < 0:
            raise ValueError("checkpoint_every and clip_norm must be >= 0")

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(self.input_dim, self.hidden_dims, self.latent_dim, self.flow_length)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {format_value(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        return (base or cls()).replace(**parse_pairs(text))


PROFILES: dict[str, dict] = {
    "paper": {"subset": None, "iterations": 500_000, "log_interval": 1000},
    "desk": {"subset": 10_000, "iterations": 50_000, "log_interval": 500},
}

FIELD_TYPES = {
    "input_dim": int, "latent_dim": int, "flow_length": int, "iterations": int, "batch_size": int,
    "seed": int, "log_interval": int, "checkpoint_every": int, "n_per_class": int,
    "lr": float, "clip_norm": float,
    "prior_at": str, "out_dir": str,
    "train_images": str, "train_labels": str, "test_images": str, "test_labels": str,
}


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_value(key: str, raw: str):
    raw = raw.strip()
    if key == "hidden_dims":
        return tuple(int(x) for x in raw.split(",") if x.strip())
    if key == "subset":
        return None if raw.lower() in ("", "none") else int(raw)
    try:
        return FIELD_TYPES[key](raw)
    except KeyError:
        raise ValueError(f"unknown config key {key!r}") from None


def parse_pairs(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        out[key] = parse_value(key, raw)
    return out


def load_config(path=None, profile: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the profile preset, then the config file, then explicit overrides."""
    values = dict(PROFILES[profile]) if profile else {}
    if path is not None:
        values.update(parse_pairs(Path(path).read_text()))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**values)
