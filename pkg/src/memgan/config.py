"""Run configuration and the plain-text ``key=value`` config file format.

Keys (flags mirror them 1:1, with ``-`` for ``_``)::

    dataset       mnist | cifar10
    normal_class  0-9 (CIFAR-10 also accepts class names, e.g. airplane)
    n_mem         memory units (default 50 MNIST, 100 CIFAR-10)
    latent_dim    memory unit / code width (default 64 MNIST, 256 CIFAR-10)
    batch_size    minibatch size m (default 64)
    k_steps       discriminator updates per step (default 1)
    epochs        training epochs (default 7 MNIST, 10 CIFAR-10)
    lr_d, lr_e, lr_g, lr_m
                  per-player Adam learning rates (1e-4 for E, G and M and 1e-5
                  for the discriminator on both datasets)
    seed          integer seed
    runs          independent seeds for bench/sweep/ablate (default 3)
    disable_loss  comma list from cyc,proj,mi (sets those weights to 0)
    w_cyc, w_proj, w_mi
                  auxiliary loss weights (default 1.0)
    mem_init_std  std of the Gaussian memory initialization (default 0.1)
    eps_hull      hull-containment threshold in units of the memory's RMS radius (default 1e-2)
    dtype         float32 | float64
    wall_time     record wall-clock seconds in metrics.csv (default true)
    keep_checkpoints  per-epoch checkpoints retained (default 2)
    out           output directory
    cache_dir     dataset cache (default $MEMGAN_DATA_DIR or ~/.cache/memgan)

Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

import torch

from .data import CIFAR10_CLASSES, DATASETS

AUX_LOSSES = ("cyc", "proj", "mi")

DATASET_DEFAULTS = {
    # a slower discriminator keeps the adversarial signal from saturating
    "mnist": dict(n_mem=50, latent_dim=64, epochs=7, lr=1e-4, lr_d=1e-5),
    "cifar10": dict(n_mem=100, latent_dim=256, epochs=10, lr=1e-4, lr_d=1e-5),
}


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    dataset: str = "mnist"
    normal_class: int = 0
    n_mem: int | None = None
    latent_dim: int | None = None
    batch_size: int = 64
    k_steps: int = 1
    epochs: int | None = None
    lr_d: float | None = None
    lr_e: float | None = None
    lr_g: float | None = None
    lr_m: float | None = None
    seed: int = 0
    runs: int = 3
    w_cyc: float = 1.0
    w_proj: float = 1.0
    w_mi: float = 1.0
    disable_loss: tuple[str, ...] = ()
    eps_hull: float = 1e-2
    mem_init_std: float = 0.1
    dtype: str = "float32"
    wall_time: bool = True
    keep_checkpoints: int = 2
    out: str = "runs"
    cache_dir: str | None = None
    channels: tuple[int, ...] | None = None

    def __post_init__(self):
        if isinstance(self.normal_class, str):
            self.normal_class = parse_class(self.normal_class)
        if isinstance(self.disable_loss, str):
            self.disable_loss = tuple(s for s in self.disable_loss.split(",") if s.strip())
        self.disable_loss = tuple(s.strip().removeprefix("l_") for s in self.disable_loss)
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}; expected one of {DATASETS}")
        defaults = DATASET_DEFAULTS[self.dataset]
        for key in ("n_mem", "latent_dim", "epochs"):
            if getattr(self, key) is None:
                setattr(self, key, defaults[key])
        for key in ("lr_d", "lr_e", "lr_g", "lr_m"):
            if getattr(self, key) is None:
                setattr(self, key, defaults.get(key, defaults["lr"]))
        self.validate()

    def validate(self) -> None:
        if not 0 <= self.normal_class <= 9:
            raise ConfigError(f"normal_class must be in [0, 9], got {self.normal_class}")
        for key in ("n_mem", "latent_dim", "batch_size", "k_steps", "runs", "keep_checkpoints"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        for key in ("lr_d", "lr_e", "lr_g", "lr_m"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be non-negative, got {getattr(self, key)}")
        for key in ("w_cyc", "w_proj", "w_mi"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be non-negative")
        bad = [s for s in self.disable_loss if s not in AUX_LOSSES]
        if bad:
            raise ConfigError(
                f"cannot disable {bad}: only auxiliary losses {AUX_LOSSES} can be disabled "
                "(the adversarial term is always on)"
            )
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32|float64, got {self.dtype!r}")
        if self.mem_init_std <= 0:
            raise ConfigError("mem_init_std must be positive")
        if self.eps_hull <= 0:
            raise ConfigError("eps_hull must be positive")

    @property
    def torch_dtype(self) -> torch.dtype:
        return getattr(torch, self.dtype)

    def weight(self, loss: str) -> float:
        return 0.0 if loss in self.disable_loss else getattr(self, f"w_{loss}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("disable_loss", "channels"):
            if isinstance(d.get(key), list):
                d[key] = tuple(d[key])
        return cls(**d)


def parse_class(value: str | int) -> int:
    if isinstance(value, int):
        return value
    value = value.strip()
    if value.lower() in CIFAR10_CLASSES:
        return CIFAR10_CLASSES.index(value.lower())
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"normal class must be an integer or CIFAR-10 class name, got {value!r}") from None


def _coerce(name: str, raw: str):
    ftype = {f.name: f.type for f in fields(TrainConfig)}[name]
    raw = raw.strip()
    if name == "normal_class":
        return parse_class(raw)
    if name in ("disable_loss",):
        return tuple(s.strip() for s in raw.split(",") if s.strip())
    if raw.lower() in ("none", "") and "None" in ftype:
        return None
    if name == "channels":
        return tuple(int(s) for s in raw.split(",") if s.strip())
    if ftype.startswith("bool"):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if ftype.startswith("int"):
            return int(raw)
        if ftype.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {ftype}") from None
    return raw


def coerce_values(values: dict[str, str]) -> dict:
    known = {f.name for f in fields(TrainConfig)}
    out = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _coerce(key, raw) if isinstance(raw, str) else raw
    return out


def read_config_file(path: str | Path) -> dict:
    """Parse a ``key=value`` file into typed values (no defaults applied)."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        values[key.strip().replace("-", "_")] = raw
    return coerce_values(values)


def write_config_file(cfg: TrainConfig, path: str | Path) -> None:
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    Path(path).write_text("\n".join(lines) + "\n")
