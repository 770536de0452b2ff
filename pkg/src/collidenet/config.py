"""Experiment configuration and its ``section.key = value`` text format.

Sections map onto dataclasses: ``data``, ``spatial``, ``temporal``,
``toggles``, ``model`` (head settings) and ``train``.  Unknown sections or
keys are rejected.  ``dumps`` writes every field in sorted order, so the text
form doubles as a stable fingerprint.
"""
from __future__ import annotations

import hashlib
import types
import typing
from dataclasses import dataclass, field, fields, replace

from .datagen import DataConfig
from .errors import ConfigError
from .spatial import SpatialConfig
from .temporal import ModelConfig, TemporalConfig, Toggles

# rate for fine-tuning a pretrained backbone; too slow for training from scratch here
FINE_TUNE_LR = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    optimizer: str = "adam"  # "adam" | "sgd"
    plateau_patience: int = 5
    early_stop_patience: int = 15
    max_epochs: int = 50
    batch_size: int = 16
    eval_batch_size: int = 32
    balance: bool = True
    workers: int = 1

    def validate(self) -> None:
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ConfigError("patiences must be >= 1")
        # zero epochs is the smoke path: no schedule to check
        if self.max_epochs and max(self.plateau_patience, self.early_stop_patience) >= self.max_epochs:
            raise ConfigError("patiences must be smaller than max_epochs")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        self.train.validate()
        self.model.validate()
        if self.data.frames_per_clip != self.model.temporal.seq_len:
            raise ConfigError(
                f"clips carry {self.data.frames_per_clip} frames but temporal.seq_len = {self.model.temporal.seq_len}"
            )
        if self.data.image_size != self.model.spatial.image_size:
            raise ConfigError("data.image_size and spatial.image_size differ")

    def fingerprint(self) -> str:
        return hashlib.sha256(dumps(self).encode()).hexdigest()[:16]


def _sections(cfg: ExperimentConfig) -> dict[str, object]:
    m = cfg.model
    head = {k: getattr(m, k) for k in _MODEL_SCALARS}
    return {"data": cfg.data, "spatial": m.spatial, "temporal": m.temporal, "toggles": m.toggles,
            "model": head, "train": cfg.train}


_SECTION_TYPES = {"data": DataConfig, "spatial": SpatialConfig, "temporal": TemporalConfig,
                  "toggles": Toggles, "model": ModelConfig, "train": TrainConfig}
_MODEL_SCALARS = ("head_hidden", "head_dropout", "ttc_prior", "readout")


def _field_types(cls) -> dict[str, object]:
    hints = typing.get_type_hints(cls)
    names = [f.name for f in fields(cls)]
    if cls is ModelConfig:
        names = list(_MODEL_SCALARS)
    return {n: hints[n] for n in names}


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, typ, where: str):
    args = typing.get_args(typ)
    if isinstance(typ, types.UnionType) or typing.get_origin(typ) is typing.Union:
        if text.lower() == "none" and type(None) in args:
            return None
        typ = next(a for a in args if a is not type(None))
    try:
        if typ is bool:
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        if typ is str:
            return text
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {typ.__name__}") from None
    raise ConfigError(f"{where}: unsupported field type {typ}")


def dumps(cfg: ExperimentConfig) -> str:
    lines = []
    for section, obj in _sections(cfg).items():
        values = obj if isinstance(obj, dict) else {f.name: getattr(obj, f.name) for f in fields(obj)}
        for key, value in values.items():
            lines.append(f"{section}.{key} = {_format(value)}")
    return "\n".join(sorted(lines)) + "\n"


def apply_overrides(cfg: ExperimentConfig, pairs: dict[str, str]) -> ExperimentConfig:
    """Apply ``{"section.key": "text"}`` overrides with type checking."""
    updates: dict[str, dict[str, object]] = {}
    for dotted, text in pairs.items():
        section, _, key = dotted.partition(".")
        if section not in _SECTION_TYPES or not key:
            raise ConfigError(f"unknown config section in {dotted!r}")
        types_ = _field_types(_SECTION_TYPES[section])
        if key not in types_:
            raise ConfigError(f"unknown config key {dotted!r}")
        updates.setdefault(section, {})[key] = _parse(text, types_[key], dotted)
    m = cfg.model
    model = replace(
        m,
        spatial=replace(m.spatial, **updates.get("spatial", {})),
        temporal=replace(m.temporal, **updates.get("temporal", {})),
        toggles=replace(m.toggles, **updates.get("toggles", {})),
        **updates.get("model", {}),
    )
    return ExperimentConfig(
        data=replace(cfg.data, **updates.get("data", {})),
        model=model,
        train=replace(cfg.train, **updates.get("train", {})),
    )


def loads(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw!r}")
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    return apply_overrides(base or ExperimentConfig(), pairs)


def load(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
