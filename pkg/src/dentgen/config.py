"""Pipeline configuration: every tunable in one serializable tree.

A config is a nested dataclass structure that round-trips through JSON.
Loading rejects unknown keys so typos fail loudly, and the canonical JSON
form is hashed into the dataset manifest for reproducibility checks.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    """Raised when a config file has unknown or malformed keys."""


@dataclass
class CanConfig:
    radius: float = 0.033
    height: float = 0.115
    taper_fraction: float = 0.12
    radial_segments: int = 64
    height_segments: int = 16
    tab_length_fraction: float = 0.55
    seal_radius_fraction: float = 0.60


@dataclass
class LatticeConfig:
    resolution: tuple[int, int, int] = (4, 4, 4)
    margin: float = 0.06
    # Magnitudes of the built-in lattice keys at weight 1; one entry per key.
    # Category counts are the lengths of these tuples (3+2+2+3+2 = 12 keys).
    crush_amounts: tuple[float, ...] = (0.35, 0.22, 0.30)
    pinch_amounts: tuple[float, ...] = (0.45, 0.35)
    fold_amounts: tuple[float, ...] = (0.30, 0.25)
    twist_angles_deg: tuple[float, ...] = (50.0, -65.0, 85.0)
    crunch_scales: tuple[float, ...] = (0.08, 0.12)
    crunch_seeds: tuple[int, ...] = (11, 12)


@dataclass
class DisplaceConfig:
    noise_seed: int = 101
    scale: float = 90.0
    strength: float = 0.0016
    bias: float = 0.0005
    group: str = "side"


@dataclass
class DeformConfig:
    lattice_weight_range: tuple[float, float] = (0.3, 1.0)
    displace_weight_range: tuple[float, float] = (0.2, 1.0)
    tab_angle_deg: float = 55.0
    seal_angle_deg: float = 40.0
    displace: tuple[DisplaceConfig, ...] = (
        DisplaceConfig(noise_seed=101, scale=90.0, strength=0.0016, bias=0.0005),
        DisplaceConfig(noise_seed=102, scale=140.0, strength=0.0012, bias=0.0004),
        DisplaceConfig(noise_seed=103, scale=220.0, strength=0.0009, bias=0.0003),
    )


@dataclass
class CameraConfig:
    theta_ranges: tuple[tuple[float, float], ...] = (
        (20.0, 70.0),
        (110.0, 160.0),
        (200.0, 250.0),
        (290.0, 340.0),
    )
    phi_range: tuple[float, float] = (50.0, 70.0)
    r_range: tuple[float, float] = (0.3, 0.45)
    vertical_fov: float = 40.0
    image_size: int = 512


@dataclass
class LightConfig:
    diffuse_range: tuple[float, float] = (0.5, 0.9)
    ambient_range: tuple[float, float] = (0.1, 0.3)


@dataclass
class CompositeConfig:
    key_color: tuple[int, int, int] = (0, 255, 0)
    key_tolerance: int = 0
    close_radius: int = 2
    open_radius: int = 1
    erode_radius: int = 1


@dataclass
class Config:
    seed: int = 0
    views_per_scene: int = 1
    background_dir: str | None = None
    label_texture: str | None = None
    can: CanConfig = field(default_factory=CanConfig)
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    deform: DeformConfig = field(default_factory=DeformConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    light: LightConfig = field(default_factory=LightConfig)
    composite: CompositeConfig = field(default_factory=CompositeConfig)


def _to_jsonable(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _to_jsonable(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, (tuple, list)):
        return [_to_jsonable(v) for v in value]
    return value


def _from_value(cls, value, keypath):
    if dataclasses.is_dataclass(cls):
        if not isinstance(value, dict):
            raise ConfigError(f"{keypath}: expected object, got {type(value).__name__}")
        known = {f.name: f for f in fields(cls)}
        unknown = set(value) - set(known)
        if unknown:
            raise ConfigError(f"unknown config key: {keypath}{sorted(unknown)[0]}")
        kwargs = {}
        for name, f in known.items():
            if name in value:
                kwargs[name] = _coerce_field(f, value[name], f"{keypath}{name}.")
        return cls(**kwargs)
    return value


def _coerce_field(f, value, keypath):
    tp = f.type if isinstance(f.type, str) else str(f.type)
    default = f.default if f.default is not dataclasses.MISSING else (
        f.default_factory() if f.default_factory is not dataclasses.MISSING else None
    )
    if dataclasses.is_dataclass(default):
        return _from_value(type(default), value, keypath)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{keypath[:-1]}: expected list")
        if default and dataclasses.is_dataclass(default[0]):
            return tuple(
                _from_value(type(default[0]), v, f"{keypath}{i}.") for i, v in enumerate(value)
            )
        if default and isinstance(default[0], tuple):
            return tuple(tuple(v) for v in value)
        return tuple(value)
    if "int" in tp and isinstance(value, float) and not value.is_integer():
        raise ConfigError(f"{keypath[:-1]}: expected integer, got {value}")
    return value


def config_to_dict(cfg: Config) -> dict:
    return _to_jsonable(cfg)


def config_from_dict(data: dict) -> Config:
    return _from_value(Config, data, "")


def load_config(path: str | Path) -> Config:
    """Load a JSON config file, rejecting unknown keys."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    return config_from_dict(data)


def save_config(cfg: Config, path: str | Path) -> None:
    Path(path).write_text(canonical_json(cfg) + "\n")


def canonical_json(cfg: Config) -> str:
    return json.dumps(config_to_dict(cfg), sort_keys=True, indent=2)


def config_hash(cfg: Config) -> str:
    """Hex digest identifying the full config (seed excluded: it is recorded separately)."""
    data = config_to_dict(cfg)
    data.pop("seed", None)
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def iter_config_keys(cfg: Config | None = None, prefix: str = ""):
    """Yield (dotted_key, default_value) pairs for every leaf config entry."""
    cfg = cfg or Config()
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            yield from iter_config_keys(value, prefix + f.name + ".")
        elif isinstance(value, tuple) and value and dataclasses.is_dataclass(value[0]):
            for i, item in enumerate(value):
                yield from iter_config_keys(item, f"{prefix}{f.name}[{i}].")
        else:
            yield prefix + f.name, value
