"""Sectioned configuration with schema validation and stable hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields

from .detector import DetectorConfig
from .grounding import GroundingConfig
from .scene import DatasetConfig, WorldConfig
from .updn import UpDnConfig

TOOL_VERSION = "vqalab 0.1.0"


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


@dataclass
class HarnessConfig:
    theta_c: float = 0.2
    theta_match: float = 0.5  # IoU for necessity labels
    k_default: int = 16
    k_small: int = 2
    k_large: int = 16
    sweep_ks: tuple = (1, 2, 4, 8, 12, 16, 24)
    n_seeds: int = 5
    sweep_seeds: int = 10
    eval_split: str = "val"


@dataclass
class Config:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    detector: DetectorConfig = field(default_factory=lambda: DetectorConfig(sigma_f=0.15))
    updn: UpDnConfig = field(default_factory=lambda: UpDnConfig(epochs=12, base_lr=1e-2, warmup_start=1e-3, decay_epochs=(7, 9)))
    grounding: GroundingConfig = field(default_factory=GroundingConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)


_SECTION_TYPES = {
    "dataset": DatasetConfig,
    "detector": DetectorConfig,
    "updn": UpDnConfig,
    "grounding": GroundingConfig,
    "harness": HarnessConfig,
}


def to_dict(cfg: Config) -> dict:
    out = dataclasses.asdict(cfg)

    def fix(v):
        if isinstance(v, tuple):
            return list(v)
        if isinstance(v, dict):
            return {k: fix(x) for k, x in v.items()}
        if isinstance(v, list):
            return [fix(x) for x in v]
        return v

    return fix(out)


def _build_section(cls, data: dict, path: str):
    valid = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in valid:
            raise ConfigError(f"{path}.{key}", "unknown key")
        if key == "world":
            kwargs[key] = _build_section(WorldConfig, value, f"{path}.{key}")
            continue
        kwargs[key] = value
    inst = cls(**kwargs)
    # type checks against the defaults
    ref = cls()
    for key in data:
        if key == "world":
            continue
        want = getattr(ref, key)
        got = getattr(inst, key)
        if isinstance(want, bool):
            if not isinstance(got, bool):
                raise ConfigError(f"{path}.{key}", f"expected bool, got {type(got).__name__}")
        elif isinstance(want, (int, float)):
            if isinstance(got, bool) or not isinstance(got, (int, float)):
                raise ConfigError(f"{path}.{key}", f"expected number, got {type(got).__name__}")
        elif isinstance(want, (tuple, list)):
            if not isinstance(got, (tuple, list)):
                raise ConfigError(f"{path}.{key}", f"expected list, got {type(got).__name__}")
            setattr(inst, key, tuple(got))
        elif isinstance(want, str):
            if not isinstance(got, str):
                raise ConfigError(f"{path}.{key}", f"expected string, got {type(got).__name__}")
    return inst


def from_dict(data: dict) -> Config:
    kwargs = {}
    for section, value in data.items():
        if section not in _SECTION_TYPES:
            raise ConfigError(section, "unknown section")
        if not isinstance(value, dict):
            raise ConfigError(section, "section must be a mapping")
        kwargs[section] = _build_section(_SECTION_TYPES[section], value, section)
    return Config(**kwargs)


def save_config(cfg: Config, path: str):
    with open(path, "w") as f:
        json.dump(to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")


def load_config(path: str) -> Config:
    with open(path) as f:
        data = json.load(f)
    # a run manifest carries its resolved config under "config"
    if "config" in data and "seed" in data:
        data = data["config"]
    return from_dict(data)


def config_hash(cfg: Config) -> str:
    blob = json.dumps(to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def apply_overrides(cfg: Config, overrides: list[str]) -> Config:
    """Apply `section.key=value` strings; values parsed as JSON when possible."""
    data = to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like section.key=value")
        key, _, raw = item.partition("=")
        parts = key.split(".")
        node = data
        for p in parts[:-1]:
            if p not in node:
                raise ConfigError(key, "unknown key")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(key, "unknown key")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node[parts[-1]] = value
    return from_dict(data)
