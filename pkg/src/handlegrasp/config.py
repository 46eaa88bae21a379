"""Detector configuration: every tunable parameter in one JSON-serializable place.

Angles are stored in degrees in the file and converted where used.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GripperGeometry:
    """Parallel-jaw gripper: finger length l, thickness t, width w, max opening d (metres)."""

    l: float = 0.06
    t: float = 0.01
    w: float = 0.025
    d: float = 0.10

    def __post_init__(self):
        if min(self.l, self.t, self.w, self.d) <= 0:
            raise ConfigError("gripper dimensions must be positive")
        if self.d <= self.t:
            raise ConfigError("max opening d must exceed finger thickness t")

    @classmethod
    def from_dict(cls, d: dict) -> "GripperGeometry":
        try:
            return cls(**{k: float(v) for k, v in d.items()})
        except TypeError as exc:
            raise ConfigError(f"bad gripper description: {exc}") from exc


@dataclass(frozen=True)
class DetectorConfig:
    # preprocessing
    smooth: bool = False
    smooth_spatial_sigma: float = 2.0
    smooth_range_sigma: float = 0.01
    normal_window: int = 5
    adaptive_normals: bool = True
    # segmentation
    tau_deg: float = 4.0
    min_segment_size: int = 300
    curvature_threshold: float | None = None
    curvature_floor: float = 0.005
    max_neighbor_dist: float = 0.01
    roi: tuple | None = None
    # edges
    canny_sigma: float = 1.4
    canny_low: float = 20.0
    canny_high: float = 60.0
    depth_jump: float = 0.02
    normal_jump_deg: float = 35.0
    match_radius: int = 2
    split_dead_zone: float = 1.0
    # hypotheses
    center_stride: float = 0.02
    max_centers: int = 25
    sphere_factor: float = 1.5
    extension_step: float = 0.003
    min_strip_points: int = 10
    table_extent_factor: float = 2.0
    # validation
    theta_r_deg: float = 10.0
    theta_axis_tol_deg: float = 15.0
    axis_check: bool = True
    axis_reference: str = "across"  # or "axis": plain projection of a
    occlusion_margin: float = 0.005
    occlusion_min_height: float = 0.003
    dedup_center: float = 0.01
    dedup_axis_deg: float = 10.0
    # ranking
    weights: tuple = (0.4, 0.3, 0.3)
    top_k: int = 5
    gripper: GripperGeometry = field(default_factory=GripperGeometry)

    def __post_init__(self):
        if self.axis_reference not in ("across", "axis"):
            raise ConfigError("axis_reference must be 'across' or 'axis'")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["weights"] = list(self.weights)
        if self.roi is not None:
            d["roi"] = list(self.roi)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        d = dict(d)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "gripper" in d:
            g = d["gripper"]
            d["gripper"] = g if isinstance(g, GripperGeometry) else GripperGeometry.from_dict(g)
        if "weights" in d:
            w = tuple(float(x) for x in d["weights"])
            if len(w) != 3 or min(w) < 0 or sum(w) <= 0:
                raise ConfigError("weights must be three non-negative numbers with a positive sum")
            d["weights"] = w
        if d.get("roi") is not None:
            d["roi"] = tuple(int(x) for x in d["roi"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path) -> DetectorConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return DetectorConfig.from_dict(data)


def load_gripper(path) -> GripperGeometry:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read gripper {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("gripper file must hold a JSON object")
    return GripperGeometry.from_dict(data)


def save_config(cfg: DetectorConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
