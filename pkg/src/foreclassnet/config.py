"""Flat sectioned run configuration (INI text) and shipped presets.

Layout::

    [run]
    seed = 0
    output_dir = runs

    [model]
    m = 40
    ...

Every key has a default. Unknown sections or keys are rejected. The
``seed`` fields of the component configs are driven by ``run.seed``.
"""

from __future__ import annotations

import configparser
import dataclasses
import types
import typing
from dataclasses import dataclass, field
from typing import Any

from .adversarial import AttackConfig
from .errors import ConfigError
from .network import ForeClassNetConfig, LossConfig
from .training import TrainConfig


@dataclass
class DataConfig:
    scenario: str = "ar_vs_ma"
    count: int = 2000
    burn_in: int = 100
    path: str | None = None
    format: str = "generic"
    earnings_path: str | None = None
    stock_threshold: float = 0.05
    stock_normalize: bool = True
    split_fractions: tuple[float, ...] = (0.72, 0.08, 0.20)
    label_corruption: float = 0.0
    smote: bool = False
    smote_k: int = 5

    def __post_init__(self):
        if self.format not in ("generic", "ecg", "stock"):
            raise ConfigError(f"unknown data format {self.format!r}")
        if not 0.0 <= self.label_corruption <= 1.0:
            raise ConfigError("label_corruption must lie in [0, 1]")
        if self.count < 2:
            raise ConfigError("count must be >= 2")


SECTIONS: dict[str, type] = {
    "model": ForeClassNetConfig,
    "train": TrainConfig,
    "loss": LossConfig,
    "attack": AttackConfig,
    "data": DataConfig,
}
SEEDED = ("model", "train", "attack")


@dataclass
class RunConfig:
    model: ForeClassNetConfig = field(default_factory=ForeClassNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    output_dir: str = "runs"

    def __post_init__(self):
        for name in SEEDED:
            setattr(self, name, dataclasses.replace(getattr(self, name), seed=self.seed))

    # ------------------------------------------------------------ text form

    def to_ini(self) -> str:
        lines = ["[run]", f"seed = {self.seed}", f"output_dir = {self.output_dir}", ""]
        for section in SECTIONS:
            lines.append(f"[{section}]")
            obj = getattr(self, section)
            for f in _keys(type(obj)):
                lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_ini(cls, *texts: str, overrides: dict[str, str] | None = None) -> "RunConfig":
        """Later texts and then ``overrides`` (``section.key -> value``) win."""
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        try:
            for text in texts:
                parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unparsable config: {exc}") from exc
        raw: dict[str, dict[str, str]] = {s: dict(parser[s]) for s in parser.sections()}
        for dotted, value in (overrides or {}).items():
            if "." not in dotted:
                raise ConfigError(f"override {dotted!r} must look like section.key")
            section, key = dotted.split(".", 1)
            raw.setdefault(section, {})[key] = value
        return cls.from_mapping(raw)

    @classmethod
    def from_mapping(cls, raw: dict[str, dict[str, Any]]) -> "RunConfig":
        unknown = set(raw) - set(SECTIONS) - {"run"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        run = dict(raw.get("run", {}))
        bad = set(run) - {"seed", "output_dir"}
        if bad:
            raise ConfigError(f"unknown keys in [run]: {sorted(bad)}")
        parts = {}
        for section, klass in SECTIONS.items():
            values = dict(raw.get(section, {}))
            hints = typing.get_type_hints(klass)
            allowed = {f.name for f in _keys(klass)}
            bad = set(values) - allowed
            if bad:
                raise ConfigError(f"unknown keys in [{section}]: {sorted(bad)}")
            kwargs = {k: _parse(v, hints[k], f"{section}.{k}") for k, v in values.items()}
            try:
                parts[section] = klass(**kwargs)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{section}]: {exc}") from exc
        seed = _parse(run.get("seed", 0), int, "run.seed")
        return cls(seed=seed, output_dir=str(run.get("output_dir", "runs")), **parts)


def _keys(klass) -> list[dataclasses.Field]:
    return [f for f in dataclasses.fields(klass) if not (f.name == "seed" and klass is not DataConfig)]


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_BOOLS = {"true": True, "yes": True, "on": True, "1": True, "false": False, "no": False, "off": False, "0": False}


def _parse(value, hint, key: str):
    if not isinstance(value, str):
        return value
    text = value.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if text.lower() in ("none", ""):
            return None
        inner = [a for a in args if a is not type(None)]
        return _parse(text, inner[0], key)
    try:
        if origin is tuple:
            if not text:
                return ()
            return tuple(_parse(part, args[0], key) for part in text.split(","))
        if hint is bool:
            return _BOOLS[text.lower()]
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot read {text!r} as {getattr(hint, '__name__', hint)}") from exc
    return text


PRESETS: dict[str, dict[str, dict[str, Any]]] = {
    "sim-default": {
        "train": {"epochs": 100, "batch_size": 64, "early_stopping_patience": 15},
        "data": {"scenario": "ar_vs_ma", "count": 2000},
    },
    "ecg": {
        "model": {"m": 135, "k": 5, "n_classes": 5},
        "train": {"epochs": 100, "batch_size": 64},
        "data": {"format": "ecg", "smote": False},
    },
    "stock": {
        "model": {"m": 40, "k": 1, "n_classes": 2},
        "train": {"epochs": 100, "batch_size": 128, "early_stopping_patience": 10},
        "data": {"format": "stock", "stock_normalize": True},
    },
}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return RunConfig.from_mapping({s: dict(v) for s, v in PRESETS[name].items()})


def load_config(path=None, preset_name: str | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Preset values first, then the file, then ``overrides``."""
    texts = [preset(preset_name).to_ini()] if preset_name else []
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            texts.append(fh.read())
    return RunConfig.from_ini(*texts, overrides=overrides)
