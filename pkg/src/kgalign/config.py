"""JSON run configuration: every key optional, unknown keys rejected."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .evaluator import EvalConfig
from .graph import SyntheticConfig
from .model import ModelConfig
from .objective import LossConfig
from .trainer import TrainConfig


@dataclass
class DataConfig:
    triples1: str | None = None
    triples2: str | None = None
    links: str | None = None
    valid_links: str | None = None
    train_fraction: float = 0.3
    split_seed: int = 0

    @property
    def is_set(self) -> bool:
        return self.triples1 is not None


@dataclass
class TrainSection:
    learning_rate: float = 0.001
    batch_size: int = 4500
    max_epochs: int = 500
    patience: int = 5
    eval_every: int = 1
    rng_seed: int = 0
    use_augmentation: bool = True
    valid_fraction: float = 0.1


@dataclass
class GradCheckConfig:
    num_entities: int = 10
    dims: list = field(default_factory=lambda: [8, 6, 4])
    h: float = 1e-5
    tolerance: float = 1e-4
    seed: int = 0
    debug_scale_param: str | None = None
    debug_scale_factor: float = 2.0


@dataclass
class OutputConfig:
    dump_predictions: bool = False


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalConfig = field(default_factory=EvalConfig)
    gradcheck: GradCheckConfig = field(default_factory=GradCheckConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    output_dir: str = "runs/default"

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(t.learning_rate, t.batch_size, t.max_epochs, t.patience, t.eval_every,
                           t.rng_seed, t.use_augmentation, self.loss, self.model)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{where or 'config'} must be a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        name = f"{where}.{unknown[0]}" if where else unknown[0]
        raise ConfigurationError(f"unknown config key {name!r}")
    kwargs = {}
    for key, value in raw.items():
        sub = fields[key].default_factory if fields[key].default_factory is not dataclasses.MISSING else None
        if sub is not None and dataclasses.is_dataclass(sub):
            kwargs[key] = _build(sub, value, f"{where}.{key}" if where else key)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid {where or 'config'}: {exc}") from None


def parse_config(raw: dict) -> RunConfig:
    cfg = _build(RunConfig, raw, "")
    cfg.synthetic.validate()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from None
    cfg = parse_config(raw)
    base = path.parent
    for attr in ("triples1", "triples2", "links", "valid_links"):
        value = getattr(cfg.data, attr)
        if value is not None and not Path(value).is_absolute():
            setattr(cfg.data, attr, str(base / value))
    return cfg
