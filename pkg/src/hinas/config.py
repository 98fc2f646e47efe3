"""Search and training configuration, serialised as JSON."""
from __future__ import annotations

import dataclasses
import json
import typing
from pathlib import Path

from .errors import ConfigError
from .losses import LossConfig
from .supernet import RestorationTask


@dataclasses.dataclass
class DataConfig:
    kind: str = "mixed"          # synthetic generator, ignored when manifest is set
    count: int = 40
    size: int = 64
    seed: int = 0
    frac_val: float = 0.02
    resample_noise: bool = False  # fresh noise every step instead of a fixed noisy copy
    manifest: typing.Optional[str] = None


@dataclasses.dataclass
class SgdConfig:
    lr_max: float = 0.025
    lr_min: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 3e-4
    schedule: str = "cosine"
    grad_clip: float = 5.0  # global-norm clip on kernel gradients, 0 disables


@dataclasses.dataclass
class AdamConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclasses.dataclass
class TaskConfig:
    kind: str = "denoise"
    sigma: float = 25.0
    scale: int = 2
    residual: bool = True

    def build(self) -> RestorationTask:
        try:
            if self.kind == "denoise":
                return RestorationTask.denoise(self.residual)
            if self.kind == "sr":
                return RestorationTask.super_resolve(self.scale, self.residual)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        raise ConfigError(f"task.kind must be 'denoise' or 'sr', got {self.kind!r}")


@dataclasses.dataclass
class SearchConfig:
    task: TaskConfig = dataclasses.field(default_factory=TaskConfig)
    width: int = 8
    nodes: int = 4
    layers: int = 3
    batch_size: typing.Optional[int] = None  # 8 for denoising, 24 for SR when unset
    patch: int = 64
    epochs_max: int = 100
    warmup_epochs: int = 20
    eval_from_epoch: int = 61
    sgd: SgdConfig = dataclasses.field(default_factory=SgdConfig)
    adam: AdamConfig = dataclasses.field(default_factory=AdamConfig)
    lwas: bool = True
    cell_sharing: bool = True
    loss: LossConfig = dataclasses.field(default_factory=LossConfig)
    data: DataConfig = dataclasses.field(default_factory=DataConfig)
    augment: bool = True
    val_tile: int = 64
    leaky_slope: float = 0.2
    bn_affine: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.batch_size is None:
            self.batch_size = 8 if self.task.kind == "denoise" else 24

    def validate(self) -> "SearchConfig":
        self.task.build()
        _positive(self, "width", "nodes", "layers", "batch_size", "patch", "epochs_max", "val_tile")
        if not 0 <= self.warmup_epochs < self.eval_from_epoch <= self.epochs_max:
            raise ConfigError("need 0 <= warmup_epochs < eval_from_epoch <= epochs_max, got "
                              f"{self.warmup_epochs}, {self.eval_from_epoch}, {self.epochs_max}")
        _rates(self.sgd.lr_max, self.sgd.lr_min, self.adam.lr)
        if self.sgd.schedule != "cosine":
            raise ConfigError("only the cosine schedule is implemented")
        if self.loss.lam < 0:
            raise ConfigError("loss.lam must be non-negative")
        _check_data(self.data, self.patch, self.task)
        return self

    @classmethod
    def desk(cls, seed: int = 0, **overrides) -> "SearchConfig":
        """Laptop-scale denoising search: W=4, N=3, L=2, 40 images, 30 epochs."""
        base = dict(width=4, nodes=3, layers=2, batch_size=8, patch=32, epochs_max=30,
                    warmup_epochs=6, eval_from_epoch=11, seed=seed,
                    data=DataConfig(count=40, size=64, seed=seed))
        base.update(overrides)
        return cls(**base)


@dataclasses.dataclass
class TrainConfig:
    task: TaskConfig = dataclasses.field(default_factory=TaskConfig)
    width: int = 8
    iterations: int = 5000
    batch_size: int = 24
    patch: int = 64
    lr0: float = 0.05
    lr_min: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 3e-4
    grad_clip: float = 5.0
    augment: bool = True
    loss: LossConfig = dataclasses.field(default_factory=LossConfig)
    data: DataConfig = dataclasses.field(default_factory=DataConfig)
    val_count: int = 4
    eval_every: int = 250
    log_every: int = 50
    val_tile: int = 64
    leaky_slope: float = 0.2
    seed: int = 0

    def validate(self) -> "TrainConfig":
        self.task.build()
        _positive(self, "width", "iterations", "batch_size", "patch", "val_count", "eval_every",
                  "log_every", "val_tile")
        _rates(self.lr0)
        if self.lr_min < 0 or self.lr_min > self.lr0:
            raise ConfigError("need 0 <= lr_min <= lr0")
        if self.loss.lam < 0:
            raise ConfigError("loss.lam must be non-negative")
        _check_data(self.data, self.patch, self.task)
        return self

    @classmethod
    def desk(cls, seed: int = 0, **overrides) -> "TrainConfig":
        """Laptop-scale compact-net training: 2000 iterations on 32x32 patches.

        lr0 is 0.02 here: at width 4 the default 0.05 diverges within a few dozen steps.
        """
        base = dict(width=4, iterations=2000, batch_size=16, patch=32, eval_every=250, lr0=0.02,
                    seed=seed, data=DataConfig(count=40, size=64, seed=seed))
        base.update(overrides)
        return cls(**base)


@dataclasses.dataclass
class SynthConfig:
    task: TaskConfig = dataclasses.field(default_factory=TaskConfig)
    data: DataConfig = dataclasses.field(default_factory=DataConfig)
    seed: int = 0

    def validate(self) -> "SynthConfig":
        self.task.build()
        _check_data(self.data, 1, self.task)
        if self.data.manifest is not None:
            raise ConfigError("synth writes a manifest; data.manifest must be unset")
        return self


def _positive(cfg, *names):
    for n in names:
        v = getattr(cfg, n)
        if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
            raise ConfigError(f"{n} must be a positive integer, got {v!r}")


def _rates(*rates):
    for r in rates:
        if not r > 0:
            raise ConfigError(f"learning rates must be positive, got {r!r}")


def _check_data(data: DataConfig, patch: int, task: TaskConfig):
    if data.manifest is None:
        if data.kind not in ("textures", "gradients", "mixed"):
            raise ConfigError(f"unknown synthetic kind {data.kind!r}")
        if data.size < patch:
            raise ConfigError(f"synthetic size {data.size} smaller than patch {patch}")
        if data.count < 3:
            raise ConfigError("need at least 3 images")
    if not 0 < data.frac_val < 1:
        raise ConfigError("frac_val must lie in (0, 1)")
    if task.kind == "sr" and patch % task.scale:
        raise ConfigError(f"patch {patch} not divisible by scale {task.scale}")


# ---------------------------------------------------------------------------
# JSON round trip


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def from_dict(cls, doc: dict):
    if not isinstance(doc, dict):
        raise ConfigError(f"{cls.__name__} expects a JSON object, got {type(doc).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in doc.items():
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            value = from_dict(hint, value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(cls, path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return from_dict(cls, doc)


def dump_config(cfg, path) -> None:
    Path(path).write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n")
