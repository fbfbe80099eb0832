"""Experiment configuration: key=value sections read with configparser.

Sections: [data], [model], [loss], [training], [ttt], [ablation].  Unknown keys are
errors; omitted keys take the dataclass defaults, except ``training.seed`` which is
mandatory.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .data import DOMAIN_IDS, REGIMES
from .losses import LossConfig
from .model import ModelConfig, ablated
from .ttt import TTTConfig

PRESETS = ("beijing-like", "hangzhou-like")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    domain: str = "regime-A"  # regime used for training / validation
    shift_domain: str = "regime-B"  # unseen regime for zero-shot testing and adaptation
    sequences: int = 40  # per regime, shared 8:2 between train and val
    test_sequences: int = 8  # held out per regime
    shift_sequences: int = 20  # regime-B fine-tune pool (train + val)
    shift_test_sequences: int = 40
    t_total: int = 18
    window: int = 16
    stride: int = 2
    train_ratio: float = 0.8
    val_ratio: float = 0.2

    def __post_init__(self):
        for name in ("domain", "shift_domain"):
            if getattr(self, name) not in REGIMES:
                raise ConfigError(f"unknown regime {getattr(self, name)!r}")
        if abs(self.train_ratio + self.val_ratio - 1.0) > 1e-12:
            raise ConfigError("split ratios must sum to 1")
        if min(self.train_ratio, self.val_ratio) < 0:
            raise ConfigError("split ratios must be non-negative")
        if self.window < 2 or self.window % 2 or self.t_total < self.window:
            raise ConfigError("window must be even, >= 2 and no longer than t_total")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if min(self.sequences, self.test_sequences, self.shift_sequences, self.shift_test_sequences) < 0:
            raise ConfigError("sequence counts must be non-negative")

    @property
    def domain_id(self) -> int:
        return DOMAIN_IDS[self.domain]

    @property
    def shift_domain_id(self) -> int:
        return DOMAIN_IDS[self.shift_domain]


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 8
    lr_initial: float = 5e-3
    lr_final: float = 1e-4
    weight_decay: float = 0.01
    adapt_epochs: int = 10
    select_tau: float = 25.0

    def __post_init__(self):
        if self.epochs < 0 or self.adapt_epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch size must be positive")
        if not 0 < self.lr_final <= self.lr_initial:
            raise ConfigError("need 0 < lr_final <= lr_initial")


@dataclass(frozen=True)
class AblationConfig:
    no_hffl: bool = False
    no_skip: bool = False
    linear_proj: bool = False
    no_rrdb: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    @property
    def seed(self) -> int:
        return self.training.seed

    def effective_model(self) -> ModelConfig:
        """Model config with the ablation toggles applied."""
        a = self.ablation
        return ablated(self.model, linear_proj=a.linear_proj, no_skip=a.no_skip, no_rrdb=a.no_rrdb)

    def effective_loss(self) -> LossConfig:
        return replace(self.loss, lam=0.0) if self.ablation.no_hffl else self.loss

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, training=replace(self.training, seed=seed))

    def to_text(self) -> str:
        return dump(self)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


# -- text <-> values ----------------------------------------------------------

def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(text: str, default):
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        items = [s.strip() for s in text.split(",") if s.strip()]
        kind = type(default[0]) if default else int
        return tuple(_coerce(s, kind()) for s in items)
    return text.strip()


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _build(cls, section: dict, name: str, skip=()):
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)} - set(skip)
    unknown = sorted(set(section) - known)
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {', '.join(unknown)}")
    kwargs = {}
    for key, text in section.items():
        try:
            kwargs[key] = _coerce(text, getattr(defaults, key))
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from None
    try:
        return replace(defaults, **kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


SECTIONS = ("data", "model", "loss", "training", "ttt", "ablation")


def parse(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    extra = sorted(set(cp.sections()) - set(SECTIONS))
    if extra:
        raise ConfigError(f"unknown sections: {', '.join(extra)}")
    sec = {name: dict(cp[name]) if cp.has_section(name) else {} for name in SECTIONS}
    if "seed" not in sec["training"]:
        raise ConfigError("[training] seed is mandatory")
    ttt = _build(TTTConfig, sec["ttt"], "ttt")
    model = _build(ModelConfig, sec["model"], "model", skip=("ttt",))
    try:
        model = replace(model, ttt=ttt)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(
        data=_build(DataConfig, sec["data"], "data"),
        model=model,
        loss=_build(LossConfig, sec["loss"], "loss"),
        training=_build(TrainConfig, sec["training"], "training"),
        ablation=_build(AblationConfig, sec["ablation"], "ablation"),
    )


def dump(cfg: ExperimentConfig) -> str:
    """Canonical text: every key written, sections and keys in fixed order."""
    blocks = {
        "data": cfg.data,
        "model": cfg.model,
        "loss": cfg.loss,
        "training": cfg.training,
        "ttt": cfg.model.ttt,
        "ablation": cfg.ablation,
    }
    lines = []
    for name in SECTIONS:
        lines.append(f"[{name}]")
        for f in dataclasses.fields(blocks[name]):
            if name == "model" and f.name == "ttt":
                continue
            lines.append(f"{f.name} = {_format(getattr(blocks[name], f.name))}")
        lines.append("")
    return "\n".join(lines)


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse(text, str(path))


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {PRESETS}")
    return resources.files("reettt").joinpath("presets").joinpath(f"{name}.cfg").read_text()


def preset(name: str) -> ExperimentConfig:
    return parse(preset_text(name), name)


def resolve(spec: str) -> ExperimentConfig:
    """A preset name or a path to a config file."""
    if spec in PRESETS:
        return preset(spec)
    return load(spec)
