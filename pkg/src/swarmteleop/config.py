"""Configuration for simulation, feature pipeline, runtime and service.

All tunables live in one nested dataclass tree so that a single YAML (or
JSON) file can override any subset. The config hash feeds model-file
provenance, so serialization must stay canonical.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

CONFIG_ENV_VAR = "SWARMTELEOP_CONFIG"


@dataclass
class SimulationConfig:
    dt: float = 0.01
    n_agents: int = 4
    v_max: float = 5.0
    k_coh: float = 1.0
    k_sep: float = 1.0
    k_ali: float = 2.0
    neighbor_mode: str = "complete"  # "complete" | "radius"
    neighbor_radius: float = 3.0
    stabilizing_alignment: bool = True
    track_kp: float = 2.0
    track_kd: float = 2.5
    expansion_min: float = 0.5
    expansion_max: float = 3.0
    expansion_rate: float = 1.0


@dataclass
class WorkspaceConfig:
    x: tuple[float, float] = (-8.0, 8.0)
    y: tuple[float, float] = (-3.0, 30.0)
    z: tuple[float, float] = (0.2, 6.0)

    def bounds(self):
        return [tuple(self.x), tuple(self.y), tuple(self.z)]


@dataclass
class ScriptConfig:
    order: tuple[str, ...] = (
        "right", "left", "up", "down", "front", "back", "expand", "contract",
    )
    amplitude: float = 2.0
    expansion_delta: float = 0.8
    duration: float = 4.0
    rest_after: float = 3.0
    return_duration: float = 1.0
    repetitions: int = 1


@dataclass
class FeatureConfig:
    sample_rate: float = 50.0
    snr_window: int = 11
    snr_cap: float = 100.0
    quality_exponent: float = 2.0
    selection_threshold: float = 0.7
    ridge_grid_min: float = 1e-4
    ridge_grid_max: float = 1e3
    ridge_grid_points: int = 25


@dataclass
class RuntimeConfig:
    integral_leak: float = 0.05
    hold_timeout: float = 0.2
    center_slew: float = 2.0
    expansion_slew: float = 1.0


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8642
    sim_rate: float = 100.0
    broadcast_rate: float = 30.0


@dataclass
class AppConfig:
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    workspace: WorkspaceConfig = field(default_factory=WorkspaceConfig)
    script: ScriptConfig = field(default_factory=ScriptConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)
    course_path: str | None = None

    def to_dict(self) -> dict:
        return _asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _asdict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _asdict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_asdict(v) for v in obj]
    return obj


def _merge(cfg, data: dict, path: str):
    for key, value in data.items():
        if not hasattr(cfg, key):
            raise ValueError(f"unknown config key {path}{key}")
        current = getattr(cfg, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ValueError(f"config section {path}{key} must be a mapping")
            _merge(current, value, f"{path}{key}.")
        elif isinstance(current, tuple) and value is not None:
            setattr(cfg, key, tuple(value))
        else:
            setattr(cfg, key, value)


def load_config(path: str | Path | None = None) -> AppConfig:
    """Build an AppConfig from defaults plus an optional YAML/JSON overlay.

    Resolution order: explicit `path` argument, then the SWARMTELEOP_CONFIG
    environment variable, then pure defaults.
    """
    cfg = AppConfig()
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR) or None
    if path is None:
        return cfg
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must contain a mapping")
    _merge(cfg, data, "")
    return cfg
