"""Run configuration: one flat JSON document with a ``version`` field."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .gating import GatingConfig
from .geometry import OverlapConfig
from .simworld import DriftConfig, SceneSpec

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    version: int = CONFIG_VERSION
    tau_c: float = 0.3
    tau_d: float = 0.6
    tau_temp: int = 2
    lambda_d: float = 0.5
    grid: int = 16
    sample_depth: float = 1.0
    scene_diameter: float = 1.0
    window: int = 2
    patch: int = 16
    sigma0: float = 0.01
    segment_length: int = 49
    resolution: Optional[list] = None  # [height, width]; None follows the trajectory intrinsics
    seed: int = 0
    scene_seed: int = 0
    num_boxes: int = 6
    room_half_extents: list = field(default_factory=lambda: [4.0, 1.5, 4.0])
    tolerance: float = 1e-6

    def __post_init__(self):
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version!r}")
        if self.segment_length < 1:
            raise ConfigError(f"segment_length must be >= 1, got {self.segment_length}")
        if self.window < 0 or self.patch < 1:
            raise ConfigError(f"window must be >= 0 and patch >= 1, got {self.window}, {self.patch}")
        if self.seed < 0 or self.scene_seed < 0:
            raise ConfigError("seeds must be nonnegative")
        if self.tolerance < 0:
            raise ConfigError(f"tolerance must be nonnegative, got {self.tolerance}")
        if self.resolution is not None and (len(self.resolution) != 2 or min(self.resolution) < 1):
            raise ConfigError(f"resolution must be [height, width] with positive entries, got {self.resolution}")
        # delegate the remaining checks to the module configs
        try:
            self.gating()
            self.drift()
            self.scene()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def overlap(self) -> OverlapConfig:
        return OverlapConfig(self.grid, self.sample_depth, self.scene_diameter, self.lambda_d)

    def gating(self) -> GatingConfig:
        return GatingConfig(self.tau_c, self.tau_d, self.tau_temp, self.overlap())

    def drift(self) -> DriftConfig:
        return DriftConfig(self.sigma0)

    def scene(self) -> SceneSpec:
        return SceneSpec(seed=self.scene_seed, half_extents=tuple(self.room_half_extents), num_boxes=self.num_boxes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key: {unknown[0]}")
        if "version" not in d:
            raise ConfigError("config is missing the version field")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(doc)
