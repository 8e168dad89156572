"""Run configuration: one dataclass per pipeline section, loaded from JSON.

Unknown keys are rejected so a typo never silently falls back to a default.
Defaults for synthesis and distillation follow the published setup: 1024
images, 200 iterations at lr 0.05, BN weight 10, TV weight 1e-5; 15 epochs of
SGD at lr 0.001, momentum 0.9, batch 32, temperature 3.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class DatasetConfig:
    kind: str = "shapes"            # shapes | cifar10
    path: str | None = None         # cifar10 batch directory
    classes: int = 4
    image_size: int = 16
    train_count: int = 2000
    test_count: int = 800
    seed: int = 0

    def validate(self):
        if self.kind not in ("shapes", "cifar10"):
            raise ConfigError(f"dataset.kind must be 'shapes' or 'cifar10', got {self.kind!r}")
        if self.kind == "cifar10" and not self.path:
            raise ConfigError("dataset.path is required for cifar10")
        if self.classes < 2:
            raise ConfigError("dataset.classes must be at least 2")


@dataclass
class TeacherConfig:
    epochs: int = 20
    lr: float = 0.01
    momentum: float = 0.9
    batch: int = 32
    seed: int = 0

    def validate(self):
        if self.epochs < 0 or self.batch < 1 or self.lr <= 0:
            raise ConfigError("teacher: epochs >= 0, batch >= 1 and lr > 0 required")


@dataclass
class PruneConfig:
    amount: float = 0.75

    def validate(self):
        if not 0 <= self.amount < 1:
            raise ConfigError(f"prune.amount must lie in [0, 1), got {self.amount}")


@dataclass
class SynthesisConfig:
    n_images: int = 1024
    batch: int = 64
    iters: int = 200
    lr: float = 0.05
    bn_weight: float = 10.0
    tv_weight: float = 1e-5
    jitter_max: int = 2
    target_mode: str = "entropy"    # entropy | balanced_ce
    clamp: tuple[float, float] = (-3.0, 3.0)
    optimizer: str = "adam"         # adam | sgd
    seed: int = 0

    def validate(self):
        if self.n_images < 1 or self.batch < 1 or self.batch > self.n_images:
            raise ConfigError("dream: need 1 <= batch <= n_images")
        if self.iters < 0:
            raise ConfigError("dream.iters must be non-negative")
        if self.lr <= 0:
            raise ConfigError("dream.lr must be positive")
        if self.bn_weight < 0 or self.tv_weight < 0:
            raise ConfigError("dream: loss weights must be non-negative")
        if self.jitter_max < 0:
            raise ConfigError("dream.jitter_max must be non-negative")
        if self.target_mode not in ("entropy", "balanced_ce"):
            raise ConfigError(f"dream.target_mode must be 'entropy' or 'balanced_ce', got {self.target_mode!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"dream.optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        lo, hi = self.clamp
        if not lo < hi:
            raise ConfigError(f"dream.clamp must be an increasing pair, got {self.clamp}")


@dataclass
class DistillConfig:
    temperature: float = 3.0
    alpha: float = 1.0
    epochs: int = 15
    batch: int = 32
    lr: float = 0.001
    momentum: float = 0.9
    seed: int = 0
    strict_provenance: bool = False

    def validate(self):
        if self.temperature <= 0:
            raise ConfigError("distill.temperature must be positive")
        if not 0 < self.alpha <= 1:
            raise ConfigError("distill.alpha must lie in (0, 1]")
        if self.epochs < 1 or self.batch < 1:
            raise ConfigError("distill: epochs >= 1 and batch >= 1 required")
        if self.lr <= 0 or not 0 <= self.momentum < 1:
            raise ConfigError("distill: lr > 0 and momentum in [0, 1) required")


def default_workdir() -> str:
    return os.environ.get("DFKD_WORKDIR", "dfkd-run")


@dataclass
class IOConfig:
    workdir: str = field(default_factory=default_workdir)
    dump_ppm: bool = False

    def validate(self):
        pass


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    prune: PruneConfig = field(default_factory=PruneConfig)
    dream: SynthesisConfig = field(default_factory=SynthesisConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    io: IOConfig = field(default_factory=IOConfig)

    def validate(self) -> RunConfig:
        for f in fields(self):
            getattr(self, f.name).validate()
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dream"]["clamp"] = list(d["dream"]["clamp"])
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, obj: dict) -> RunConfig:
        return _build(cls, obj, "").validate()

    @classmethod
    def load(cls, path) -> RunConfig:
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from None
        return cls.from_dict(obj)


def _build(cls, obj, where: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(obj) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in obj.items():
        sub = _SECTIONS.get(name) if cls is RunConfig else None
        if sub is not None:
            kwargs[name] = _build(sub, value, name)
        elif name == "clamp":
            kwargs[name] = tuple(float(v) for v in value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


_SECTIONS = {
    "dataset": DatasetConfig, "teacher": TeacherConfig, "prune": PruneConfig,
    "dream": SynthesisConfig, "distill": DistillConfig, "io": IOConfig,
}
