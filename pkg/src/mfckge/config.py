"""Run configuration shared by training, decoupling, inference and the CLI."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

# hyperparameter grids searched in the original experiments
LEARNING_RATES = (1e-4, 5e-4, 1e-3)
BATCH_SIZES = (512, 1024, 2048)
LOSS_WEIGHTS = (0.01, 0.1, 1.0)


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 200
    margin: float = 8.0
    norm: int = 1
    alpha: float = 0.1
    eta: float = 0.1
    learning_rate: float = 1e-3
    batch_size: int = 1024
    negatives_per_positive: int = 1
    max_epochs: int = 200
    patience: int = 3
    eval_every: int = 10
    max_valid_queries: int = 1000
    seed: int = 1
    # semantic decoupling
    theta: float = 0.97
    keep_dropped: bool = False
    decoupling: bool = True
    # inference
    top_k: int = 3
    importance: bool = True
    renorm: bool = True
    incidence: str = "both"
    workers: int = 1

    def __post_init__(self):
        if self.dim <= 0:
            raise ConfigError("dim must be > 0")
        if self.margin <= 0:
            raise ConfigError("margin must be > 0")
        if self.norm not in (1, 2):
            raise ConfigError("norm must be 1 or 2")
        if self.alpha < 0 or self.eta < 0:
            raise ConfigError("alpha and eta must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size <= 0 or self.negatives_per_positive <= 0:
            raise ConfigError("batch_size and negatives_per_positive must be > 0")
        if self.max_epochs < 0 or self.patience < 1 or self.eval_every < 1:
            raise ConfigError("invalid epoch schedule")
        if not 0 < self.theta <= 1:
            raise ConfigError("theta must lie in (0, 1]")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.incidence not in ("both", "directional"):
            raise ConfigError("incidence must be 'both' or 'directional'")
        if self.workers < 0:
            raise ConfigError("workers must be >= 0")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: _coerce(known[k], v) for k, v in data.items()})

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.to_dict().items())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(f, value):
    if not isinstance(value, str):
        return value
    typ = f.type if isinstance(f.type, type) else {"int": int, "float": float, "bool": bool, "str": str}[f.type]
    if typ is bool:
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{f.name}: not a boolean: {value!r}")
    try:
        return typ(value.strip())
    except ValueError as exc:
        raise ConfigError(f"{f.name}: {exc}") from None


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config_file(path) -> dict:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


# Small, fast settings for the synthetic acceptance runs on one CPU core.
DESK = TrainConfig(dim=32, norm=2, margin=2.0, learning_rate=5e-3, batch_size=64, max_epochs=60,
                   eval_every=10, alpha=1.0, eta=0.01)
PRESETS = {"full": TrainConfig(), "desk": DESK}
