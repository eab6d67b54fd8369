"""Run configuration shared by every subsystem.

Values are loaded from an optional JSON file, then ``EIF_*`` environment
variables, then explicit overrides (command-line flags), later sources
winning.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields
from typing import Any, Mapping

CONFIG_SCHEMA_VERSION = 1
ENV_PREFIX = "EIF_"


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    # world / embodiment
    cell_size: float = 0.05
    forward_step: float = 0.25
    camera_height: float = 1.0
    wall_height: float = 2.5
    # camera
    fov: float = 90.0
    image_size: int = 64
    max_range: float = 5.0
    ray_step: float = 0.02
    # interaction
    interaction_range: float = 1.5
    min_interaction_range: float = 0.25
    # feature map
    feature_dim: int = 64
    fusion_temperature: float = 1.0
    frontier_threshold: int = 150
    frontier_tokens: int = 32
    token_margin: int = 20
    # attention
    softmax_temperature: float = 0.1
    # planning / control
    max_hl_steps: int = 30
    max_step_retries: int = 3
    replan_interval: int = 5
    unknown_cost: float = 1.5
    score_tie_eps: float = 0.02
    max_ll_actions: int = 1500
    # reproducibility
    seed: int = 0
    embedding_seed: int = 0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        positive = ("cell_size", "forward_step", "camera_height", "wall_height", "fov",
                    "image_size", "max_range", "ray_step", "interaction_range",
                    "feature_dim", "fusion_temperature", "softmax_temperature",
                    "replan_interval", "unknown_cost", "max_ll_actions", "frontier_tokens")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.frontier_threshold < 1:
            raise ConfigError("frontier_threshold must be >= 1")
        if self.max_hl_steps < 1:
            raise ConfigError("max_hl_steps must be >= 1")
        if not 0 <= self.min_interaction_range < self.interaction_range:
            raise ConfigError("min_interaction_range must lie in [0, interaction_range)")
        if not 0 < self.fov < 180:
            raise ConfigError("fov must lie in (0, 180) degrees")

    @property
    def forward_cells(self) -> int:
        return int(round(self.forward_step / self.cell_size))

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def canonical_json(self) -> str:
        body = {"schema_version": CONFIG_SCHEMA_VERSION, **self.to_dict()}
        return json.dumps(body, sort_keys=True, indent=2) + "\n"

    def replace(self, **changes: Any) -> "Config":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Config":
        data = dict(data)
        version = data.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema version {version}")
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**{k: _coerce(known[k].type, v) for k, v in data.items()})


def _coerce(type_name: Any, value: Any) -> Any:
    kind = type_name if isinstance(type_name, str) else getattr(type_name, "__name__", "")
    if kind == "int":
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise ConfigError(f"expected integer, got {value!r}")
        return int(value)
    if kind == "float":
        return float(value)
    return value


def load_config(path: str | os.PathLike | None = None,
                overrides: Mapping[str, Any] | None = None,
                environ: Mapping[str, str] | None = None) -> Config:
    """Resolve a config from file, environment and explicit overrides."""
    data: dict[str, Any] = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            data.update(json.load(fh))
    env = os.environ if environ is None else environ
    names = {f.name for f in fields(Config)}
    for key, raw in env.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name in names:
                data[name] = json.loads(raw) if raw[:1] in "-0123456789" else raw
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return Config.from_dict(data)


DEFAULT_CONFIG = Config()
