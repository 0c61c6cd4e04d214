"""Experiment configuration as a sectioned ``key = value`` file.

Every key defaults to the published recipe value; desk-scale configs override
the model size, warmup and epoch count.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .decode import DecodeConfig
from .loss import LossConfig
from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    prepared: Optional[Path] = None
    vocab_size: int = 5000
    model: ModelConfig = field(default_factory=lambda: ModelConfig(vocab_size=5000))
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)


def _coerce(cls, section: configparser.SectionProxy, skip=()):
    kwargs = {}
    known = {f.name: f for f in fields(cls)}
    for key, raw in section.items():
        if key in skip:
            continue
        if key not in known:
            raise ConfigError(f"[{section.name}] unknown key {key!r}")
        default = getattr(cls(), key) if key not in ("placement", "phase") else None
        if isinstance(default, bool):
            kwargs[key] = section.getboolean(key)
        elif isinstance(default, int):
            kwargs[key] = int(raw)
        elif isinstance(default, float):
            kwargs[key] = float(raw)
        else:
            kwargs[key] = raw.strip()
    return kwargs


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise ConfigError(f"cannot read config file {path}")
    exp = ExperimentConfig()
    if cp.has_section("data") and cp["data"].get("prepared"):
        prep = Path(cp["data"]["prepared"])
        exp.prepared = prep if prep.is_absolute() else (path.parent / prep)
    try:
        model_kw = _coerce(ModelConfig, cp["model"]) if cp.has_section("model") else {}
        exp.model = ModelConfig(**{"vocab_size": exp.vocab_size, **model_kw})
        exp.train = TrainConfig(**(_coerce(TrainConfig, cp["train"]) if cp.has_section("train") else {}))
        exp.loss = LossConfig(**(_coerce(LossConfig, cp["loss"]) if cp.has_section("loss") else {}))
        exp.decode = DecodeConfig(**(_coerce(DecodeConfig, cp["decode"]) if cp.has_section("decode") else {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return exp


def write_config(path, prepared, model: ModelConfig, train: TrainConfig, loss: LossConfig = LossConfig(),
                 decode: DecodeConfig = DecodeConfig()) -> None:
    cp = configparser.ConfigParser()
    cp["data"] = {"prepared": str(prepared)}
    m = model.to_dict()
    m.pop("vocab_size")
    m.pop("feat_dim")
    cp["model"] = {k: str(v) for k, v in m.items()}
    cp["train"] = {f.name: str(getattr(train, f.name).value if f.name == "phase" else getattr(train, f.name))
                   for f in fields(train)}
    cp["loss"] = {f.name: str(getattr(loss, f.name)) for f in fields(loss)}
    cp["decode"] = {f.name: str(getattr(decode, f.name)) for f in fields(decode)}
    with open(path, "w", encoding="utf-8") as f:
        cp.write(f)
