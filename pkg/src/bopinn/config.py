"""Experiment configuration: scale presets, a flat dotted-key config file, CLI overrides.

Config files are INI-style; ``[bo]`` / ``kappa = 2.45`` is the key ``bo.kappa``.
Values are Python literals (``0.2, 0.55, 0.85`` is a tuple); anything that does
not parse as a literal is kept as a string.
"""
from __future__ import annotations

import ast
import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .bo import BoConfig
from .lbfgs import LbfgsOptions
from .pinn import DESK_ARCH, PAPER_ARCH
from .wave import WaveDomain


class ConfigError(ValueError):
    pass


SCALES = ("desk", "paper")
FORWARD_MODES = ("pinn", "analytic")

# dotted key -> (section object, attribute)
PRESETS = {
    "desk": {
        "domain.L": 1.0,
        "pinn.arch": DESK_ARCH,
        "pinn.n_f": 2000,
        "pinn.n_0": 200,
        "pinn.n_b": 200,
        "pinn.dropout_rate": 0.0,
        "lbfgs.max_iters": 500,
    },
    "paper": {
        "domain.L": 10.0,
        "pinn.arch": PAPER_ARCH,
        "pinn.n_f": 25000,
        "pinn.n_0": 500,
        "pinn.n_b": 500,
        "pinn.dropout_rate": 0.1,
        "lbfgs.max_iters": 5000,
    },
}


@dataclass(frozen=True)
class SnapshotConfig:
    t_obs: float = 0.25
    n_sensors: int = 256
    snr_db: float = 36.34


@dataclass(frozen=True)
class PinnConfig:
    arch: tuple = DESK_ARCH
    n_f: int = 2000
    n_0: int = 200
    n_b: int = 200
    dropout_rate: float = 0.0
    warm_start: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    cases: tuple = (0.2, 0.55, 0.85)
    runs: int = 10
    seed_base: int = 0
    scale: str = "desk"
    forward: str = "pinn"
    out: str = "runs"
    snapshot: SnapshotConfig = field(default_factory=SnapshotConfig)
    bo: BoConfig = field(default_factory=BoConfig)
    pinn: PinnConfig = field(default_factory=PinnConfig)
    lbfgs: LbfgsOptions = field(default_factory=LbfgsOptions)
    domain: WaveDomain = field(default_factory=WaveDomain)

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ConfigError(f"scale must be one of {SCALES}, got {self.scale!r}")
        if self.forward not in FORWARD_MODES:
            raise ConfigError(f"forward must be one of {FORWARD_MODES}, got {self.forward!r}")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        lo, hi = self.bo.bounds
        for c in self.cases:
            if not lo <= c <= hi:
                raise ConfigError(f"case c_true={c} outside search bounds {self.bo.bounds}")

    @property
    def out_dir(self) -> Path:
        return Path(self.out)


_SECTIONS = {
    "snapshot": SnapshotConfig,
    "bo": BoConfig,
    "pinn": PinnConfig,
    "lbfgs": LbfgsOptions,
    "domain": WaveDomain,
}
_TOP = ("cases", "runs", "seed_base", "scale", "forward", "out")


def known_keys():
    keys = [f"experiment.{k}" for k in _TOP]
    for name, cls in _SECTIONS.items():
        keys += [f"{name}.{f.name}" for f in fields(cls)]
    return keys


def parse_value(text: str):
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        if text.lower() in ("true", "false"):
            return text.lower() == "true"
        if text.lower() in ("inf", "+inf", "infinity"):
            return float("inf")
        return text


def read_config_file(path) -> dict:
    """Flat ``{dotted.key: value}`` mapping from an INI-style file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep case (domain.L)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    flat = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            flat[f"{section}.{key}"] = parse_value(value)
    return flat


def _normalize_key(key: str) -> str:
    if "." not in key:
        key = f"experiment.{key}"
    if key not in known_keys():
        raise ConfigError(f"unknown config key {key!r}")
    return key


def _coerce(cls, name, value):
    if name == "cases" and isinstance(value, (int, float)):
        return (float(value),)
    if name in ("cases", "arch", "bounds") and isinstance(value, (list, tuple)):
        return tuple(value)
    for f in fields(cls):
        if f.name == name and f.type in ("int", int) and isinstance(value, float) and value.is_integer():
            return int(value)
    return value


def build_config(overrides: dict | None = None) -> ExperimentConfig:
    """Preset for the requested scale, updated by ``overrides`` (dotted keys)."""
    flat = {_normalize_key(k): v for k, v in (overrides or {}).items()}
    scale = flat.get("experiment.scale", "desk")
    if scale not in SCALES:
        raise ConfigError(f"scale must be one of {SCALES}, got {scale!r}")
    merged = dict(PRESETS[scale])
    merged.update(flat)
    # c_lo / c_hi convenience keys are not part of BoConfig; bounds is
    top, sections = {}, {name: {} for name in _SECTIONS}
    for key, value in merged.items():
        section, name = key.split(".", 1)
        if section == "experiment":
            top[name] = _coerce(ExperimentConfig, name, value)
        else:
            sections[section][name] = _coerce(_SECTIONS[section], name, value)
    try:
        parts = {name: _SECTIONS[name](**values) for name, values in sections.items()}
        return ExperimentConfig(**top, **parts)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(cfg, **changes)
