"""Run configuration: one dataclass tree with JSON override/serialize
support so every run can record the exact resolved settings."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .costmap import DEFAULT_RESOLUTION, AffordanceSpec
from .detect import DetectorNoise
from .icp import IcpConfig
from .lidar import LidarConfig
from .planner import DwaConfig, RobotSpec
from .scene import CHAIR, TABLE
from .tracking import TrackerConfig


@dataclass
class EpisodeConfig:
    dt: float = 0.1                    # sim tick, matches the LiDAR rate
    keyframe_every: int = 5            # detection cadence in frames
    accumulation_window: int = 5
    waypoint_timeout: float = 180.0
    sensor_height: float = 0.5
    resolution: float = DEFAULT_RESOLUTION
    replan_period: float = 1.0
    affordance_margin: float = 0.15    # planning-side halo on affordance shapes
    det_max_range: float = 8.0
    det_min_points: int = 30
    astar_cost_weight: float = 0.01
    soft_shell: float = 0.45           # inflation falloff width past the hard radius
    ceiling_height: float = 2.2
    ground_inlier_dist: float = 0.05

    lidar: LidarConfig = field(default_factory=LidarConfig)
    detector_noise: DetectorNoise = field(default_factory=DetectorNoise)
    icp: IcpConfig = field(default_factory=IcpConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    robot: RobotSpec = field(default_factory=RobotSpec)
    dwa: DwaConfig = field(default_factory=DwaConfig)
    chair_affordance: AffordanceSpec = field(
        default_factory=lambda: AffordanceSpec(CHAIR))
    table_affordance: AffordanceSpec = field(
        default_factory=lambda: AffordanceSpec(TABLE))

    @property
    def affordance_specs(self) -> dict[str, AffordanceSpec]:
        return {CHAIR: self.chair_affordance, TABLE: self.table_affordance}

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(overrides: dict) -> "EpisodeConfig":
        return _apply_overrides(EpisodeConfig(), overrides)

    @staticmethod
    def load(path) -> "EpisodeConfig":
        return EpisodeConfig.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2,
                                         sort_keys=True) + "\n")


def _apply_overrides(obj, overrides: dict):
    """Recursively replace dataclass fields from a plain dict."""
    changes = {}
    for key, value in overrides.items():
        if not hasattr(obj, key):
            raise KeyError(f"unknown config key {key!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            changes[key] = _apply_overrides(current, value)
        elif isinstance(current, tuple) and isinstance(value, list):
            changes[key] = tuple(value)
        else:
            changes[key] = value
    return dataclasses.replace(obj, **changes)
