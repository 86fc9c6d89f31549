"""Experiment configuration files and seed derivation.

A configuration is an INI file with one section per component; key names
carry their physical units. Unknown sections or keys are rejected so that a
typo never silently falls back to a default.
"""

import configparser
import hashlib
import os
import types
import typing
from dataclasses import dataclass, field, fields

import numpy as np

from .channel.fiber import FiberConfig
from .exceptions import ConfigurationError
from .selection import SelectionConfig
from .training import TrainConfig

MIN_RATE_LOSS_TRIALS = 100
SCHEMES = ("uniform", "ess", "ess+sel", "seq-npas", "seq-npas++")


@dataclass(frozen=True)
class EssConfig:
    blocklength: int = 32
    amp_levels: tuple[int, ...] = (1, 3, 5, 7)
    target_rate_bits_per_1d: float = 1.93


@dataclass(frozen=True)
class RateLossConfig:
    """``model`` is a model file path, ``uniform`` or ``mb-iid``."""

    model: str = "mb-iid"
    payload_bits: tuple[int, ...] = (128, 256, 512, 1024, 2048, 4096)
    trials: int = 200

    def __post_init__(self):
        if self.trials < MIN_RATE_LOSS_TRIALS:
            raise ConfigurationError(f"rateloss trials must be >= {MIN_RATE_LOSS_TRIALS}")


@dataclass(frozen=True)
class RoundTripConfig:
    model: str = "mb-iid"
    payload_bits: tuple[int, ...] = (64, 2048)
    trials: int = 1000


@dataclass(frozen=True)
class AirSweepConfig:
    """Launch-power sweep; empty model paths train the model in-process from ``[train]``."""

    schemes: tuple[str, ...] = SCHEMES
    launch_powers_dbm: tuple[float, ...] = (-4.0, -2.0, 0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0)
    symbols_per_frame: int = 4096
    frames: int = 4
    adm_payload_bits: int = 2048
    adm_rate_loss_trials: int = 200
    rate_loss_source: str = "empirical"
    model_seq_npas: str = ""
    model_seq_npas_pp: str = ""
    n_bootstrap: int = 200

    def __post_init__(self):
        unknown = set(self.schemes) - set(SCHEMES)
        if unknown:
            raise ConfigurationError(f"unknown schemes {sorted(unknown)}; known: {SCHEMES}")
        if self.rate_loss_source not in ("empirical", "theoretical"):
            raise ConfigurationError("rate_loss_source must be 'empirical' or 'theoretical'")
        if self.adm_rate_loss_trials < MIN_RATE_LOSS_TRIALS:
            raise ConfigurationError(f"adm_rate_loss_trials must be >= {MIN_RATE_LOSS_TRIALS}")
        if self.symbols_per_frame < 64 or self.frames < 1:
            raise ConfigurationError("need at least one frame of >= 64 symbols")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    name: str = "experiment"
    constellation_order: int = 64
    mb_entropy_bits_per_1d: float = 1.93
    fiber: FiberConfig = field(default_factory=FiberConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ess: EssConfig = field(default_factory=EssConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    rateloss: RateLossConfig = field(default_factory=RateLossConfig)
    roundtrip: RoundTripConfig = field(default_factory=RoundTripConfig)
    airsweep: AirSweepConfig = field(default_factory=AirSweepConfig)
    base_dir: str = field(default=".", compare=False)

    def resolve(self, path):
        """Interpret ``path`` relative to the configuration file's directory."""
        if not path or os.path.isabs(path):
            return path
        return os.path.normpath(os.path.join(self.base_dir, path))

    def replace_section(self, name, **changes):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        section = values[name]
        sec_values = {f.name: getattr(section, f.name) for f in fields(section)}
        sec_values.update(changes)
        values[name] = type(section)(**sec_values)
        return ExperimentConfig(**values)


SECTIONS = {
    "fiber": FiberConfig,
    "train": TrainConfig,
    "ess": EssConfig,
    "selection": SelectionConfig,
    "rateloss": RateLossConfig,
    "roundtrip": RoundTripConfig,
    "airsweep": AirSweepConfig,
}
TOP_KEYS = ("seed", "name", "constellation_order", "mb_entropy_bits_per_1d")


# ----------------------------------------------------------------------------
# value conversion


def _parse_value(text, tp, key):
    text = text.strip()
    origin = typing.get_origin(tp)
    try:
        if origin in (typing.Union, types.UnionType):
            inner = [t for t in typing.get_args(tp) if t is not type(None)][0]
            return None if text.lower() == "none" else _parse_value(text, inner, key)
        if origin is tuple:
            inner = typing.get_args(tp)[0]
            return tuple(_parse_value(p, inner, key) for p in text.split(",") if p.strip())
        if tp is bool:
            low = text.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(text)
            return low in ("true", "yes", "1")
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        return text
    except (ValueError, IndexError) as exc:
        raise ConfigurationError(f"bad value for {key}: {text!r}") from exc


def _format_value(value):
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _hints(cls):
    return typing.get_type_hints(cls)


def _section_from(parser, name, cls):
    if not parser.has_section(name):
        return cls()
    hints = _hints(cls)
    names = {f.name for f in fields(cls) if f.init}
    values = {}
    for key, text in parser.items(name):
        if key not in names:
            raise ConfigurationError(f"unknown key [{name}] {key}")
        values[key] = _parse_value(text, hints[key], f"[{name}] {key}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigurationError(f"[{name}]: {exc}") from exc


# ----------------------------------------------------------------------------
# public API


def parse_config(text, base_dir="."):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse configuration: {exc}") from exc
    unknown = set(parser.sections()) - set(SECTIONS) - {"experiment"}
    if unknown:
        raise ConfigurationError(f"unknown sections {sorted(unknown)}")
    top = {}
    if parser.has_section("experiment"):
        hints = _hints(ExperimentConfig)
        for key, value in parser.items("experiment"):
            if key not in TOP_KEYS:
                raise ConfigurationError(f"unknown key [experiment] {key}")
            top[key] = _parse_value(value, hints[key], f"[experiment] {key}")
    sections = {name: _section_from(parser, name, cls) for name, cls in SECTIONS.items()}
    return ExperimentConfig(**top, **sections, base_dir=base_dir)


def load_config(path):
    """Read an experiment file; raises ConfigurationError if missing or invalid."""
    if not os.path.isfile(path):
        raise ConfigurationError(f"configuration file not found: {path}")
    with open(path) as fh:
        return parse_config(fh.read(), base_dir=os.path.dirname(os.path.abspath(path)))


def dumps_config(cfg):
    """Emit every key (defaults included) in a fixed order."""
    lines = ["[experiment]"]
    lines += [f"{k} = {_format_value(getattr(cfg, k))}" for k in TOP_KEYS]
    for name in SECTIONS:
        section = getattr(cfg, name)
        lines += ["", f"[{name}]"]
        lines += [f"{f.name} = {_format_value(getattr(section, f.name))}" for f in fields(section) if f.init]
    return "\n".join(lines) + "\n"


def derive_seed(root, *labels):
    """Independent 63-bit seed for the named stream ``labels`` under ``root``."""
    key = []
    for label in labels:
        digest = hashlib.sha256(str(label).encode()).digest()
        key.append(int.from_bytes(digest[:4], "little"))
    words = np.random.SeedSequence(int(root), spawn_key=tuple(key)).generate_state(2, np.uint32)
    return (int(words[0]) << 31) ^ int(words[1])


__all__ = [
    "AirSweepConfig",
    "EssConfig",
    "ExperimentConfig",
    "RateLossConfig",
    "RoundTripConfig",
    "SCHEMES",
    "derive_seed",
    "dumps_config",
    "load_config",
    "parse_config",
]
