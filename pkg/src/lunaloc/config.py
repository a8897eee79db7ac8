"""Declarative mission description.

A :class:`ScenarioConfig` fully determines a simulated mission: every
measurement stream is a pure function of it. JSON files use the dataclass
field names verbatim; ``lander_pose`` is the 7-tuple
``(x, y, z, qw, qx, qy, qz)`` and ``trajectory`` is an object tagged by
``"type"`` (``straight``, ``arc`` or ``waypoints``).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

from .geometry import Pose, Rotation


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending field."""


@dataclass(frozen=True)
class Straight:
    length: float = 30.0


@dataclass(frozen=True)
class Arc:
    radius: float = 25.0
    sweep: float = math.pi / 2


@dataclass(frozen=True)
class Waypoints:
    points: tuple = ((0.0, 0.0), (10.0, 0.0))
    speeds: tuple = (0.5,)


TrajectorySpec = Union[Straight, Arc, Waypoints]
_TRAJECTORY_TYPES = {"straight": Straight, "arc": Arc, "waypoints": Waypoints}


def _default_lander_pose() -> tuple:
    # leg tips on the ground at scale 1.1 (default model: 1.145 m below origin); yaw 30 deg
    return (28.0, 22.0, 1.1 * 1.145, math.cos(math.pi / 12), 0.0, 0.0, math.sin(math.pi / 12))


@dataclass(frozen=True)
class ScenarioConfig:
    """Simulated lunar mission. Defaults describe the reference noisy scenario."""

    duration: float = 60.0
    base_rate: float = 10.0
    trajectory: TrajectorySpec = field(default_factory=Arc)
    lander_pose: tuple = field(default_factory=_default_lander_pose)
    lander_scale_true: float = 1.1
    n_landmarks: int = 120
    landmark_box: tuple = ((-5.0, 55.0), (-10.0, 50.0), (-1.0, 4.0))
    # sensor rates, Hz
    odom_hz: float = 10.0
    gyro_hz: float = 20.0
    cam_hz: float = 2.0
    uwb_hz: float = 5.0
    depth_hz: float = 1.0
    # noise
    odom_trans_sigma: float = 0.005
    odom_rot_sigma: float = 0.001
    gyro_sigma: float = 0.02
    pixel_sigma: float = 1.0
    uwb_sigma: float = 0.1
    uwb_clock_ppm: float = 2.0
    depth_sigma: float = 0.02
    mask_bearing_sigma: float = 0.003
    mask_extent_sigma: float = 0.003
    # camera intrinsics, px
    fx: float = 500.0
    fy: float = 500.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480
    uwb_dropout: float = 0.05
    uwb_reply_delay: float = 500e-6
    depth_points_per_frame: int = 20
    depth_max_range: float = 50.0
    # what the estimator is told up front about the lander and the start pose
    lander_prior_trans_sigma: float = 0.5
    lander_prior_rot_sigma: float = math.radians(5.0)
    start_prior_trans_sigma: float = 0.01
    start_prior_rot_sigma: float = 0.002
    perturb_priors: bool = True
    seed: int = 0

    def __post_init__(self):
        _validate(self)

    @property
    def lander(self) -> Pose:
        return Pose.from_vector7(self.lander_pose)

    @property
    def n_base_steps(self) -> int:
        return int(math.floor(self.duration * self.base_rate + 1e-9))

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def noiseless(self) -> "ScenarioConfig":
        """Same mission with every noise source, drift and dropout removed.

        The start pose becomes exactly known. The lander prior keeps its
        sigmas (its mean becomes exact), so the lander is still estimated
        from observations rather than pinned by the prior.
        """
        return self.replace(
            odom_trans_sigma=0.0,
            odom_rot_sigma=0.0,
            gyro_sigma=0.0,
            pixel_sigma=0.0,
            uwb_sigma=0.0,
            uwb_clock_ppm=0.0,
            depth_sigma=0.0,
            mask_bearing_sigma=0.0,
            mask_extent_sigma=0.0,
            uwb_dropout=0.0,
            start_prior_trans_sigma=0.0,
            start_prior_rot_sigma=0.0,
            perturb_priors=False,
        )

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "trajectory":
                name = {Straight: "straight", Arc: "arc", Waypoints: "waypoints"}[type(v)]
                d = {"type": name}
                for tf in dataclasses.fields(v):
                    tv = getattr(v, tf.name)
                    d[tf.name] = [list(p) for p in tv] if tf.name == "points" else (
                        list(tv) if isinstance(tv, tuple) else tv)
                v = d
            elif f.name == "landmark_box":
                v = [list(r) for r in v]
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - set(names))
        if unknown:
            raise ConfigError(f"unknown field(s): {', '.join(unknown)}")
        kwargs: dict[str, Any] = {}
        for key, value in data.items():
            if key == "trajectory":
                kwargs[key] = _parse_trajectory(value)
            elif key == "lander_pose":
                kwargs[key] = _number_tuple(key, value, 7)
            elif key == "landmark_box":
                if not isinstance(value, list) or len(value) != 3:
                    raise ConfigError("landmark_box: expected [[xmin,xmax],[ymin,ymax],[zmin,zmax]]")
                kwargs[key] = tuple(_number_tuple(f"landmark_box[{i}]", r, 2) for i, r in enumerate(value))
            else:
                default = getattr(cls(), key) if key != "seed" else 0
                kwargs[key] = _coerce(key, value, default)
        try:
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_json(Path(path).read_text())


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    return float(value)


def _number_tuple(key: str, value, n: int) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise ConfigError(f"{key}: expected a list of {n} numbers")
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{key}: expected numbers, got {v!r}")
    return tuple(float(v) for v in value)


def _parse_trajectory(value) -> TrajectorySpec:
    if not isinstance(value, dict) or "type" not in value:
        raise ConfigError('trajectory: expected an object with a "type" field')
    kind = value["type"]
    if kind not in _TRAJECTORY_TYPES:
        raise ConfigError(f"trajectory.type: must be one of {sorted(_TRAJECTORY_TYPES)}, got {kind!r}")
    spec_cls = _TRAJECTORY_TYPES[kind]
    allowed = {f.name for f in dataclasses.fields(spec_cls)}
    params = {k: v for k, v in value.items() if k != "type"}
    unknown = sorted(set(params) - allowed)
    if unknown:
        raise ConfigError(f"trajectory: unknown field(s) for {kind}: {', '.join(unknown)}")
    if kind == "waypoints":
        pts = params.get("points", [])
        if not isinstance(pts, list):
            raise ConfigError("trajectory.points: expected a list of [x, y] pairs")
        points = tuple(_number_tuple(f"trajectory.points[{i}]", p, 2) for i, p in enumerate(pts))
        speeds = params.get("speeds", [0.5])
        if isinstance(speeds, (int, float)) and not isinstance(speeds, bool):
            speeds = [speeds]
        speeds = _number_tuple("trajectory.speeds", speeds, len(speeds) if isinstance(speeds, list) else -1)
        return Waypoints(points=points, speeds=speeds)
    return spec_cls(**{k: _coerce(f"trajectory.{k}", v, 0.0) for k, v in params.items()})


def _validate(c: ScenarioConfig) -> None:
    if not c.duration > 0:
        raise ConfigError("duration: must be > 0")
    for name in ("base_rate", "odom_hz", "gyro_hz", "cam_hz", "uwb_hz", "depth_hz"):
        if not getattr(c, name) > 0:
            raise ConfigError(f"{name}: rates must be > 0")
    for name in ("odom_trans_sigma", "odom_rot_sigma", "gyro_sigma", "pixel_sigma", "uwb_sigma",
                 "depth_sigma", "mask_bearing_sigma", "mask_extent_sigma", "lander_prior_trans_sigma",
                 "lander_prior_rot_sigma", "start_prior_trans_sigma", "start_prior_rot_sigma"):
        if not getattr(c, name) >= 0:
            raise ConfigError(f"{name}: sigmas must be >= 0")
    if not c.lander_scale_true > 0:
        raise ConfigError("lander_scale_true: must be > 0")
    if not 0.0 <= c.uwb_dropout <= 1.0:
        raise ConfigError("uwb_dropout: must be a probability")
    if not abs(c.uwb_clock_ppm) < 100:
        raise ConfigError("uwb_clock_ppm: |value| must be < 100")
    if c.n_landmarks < 0 or c.depth_points_per_frame < 0:
        raise ConfigError("counts must be >= 0")
    if c.width <= 0 or c.height <= 0 or c.fx <= 0 or c.fy <= 0:
        raise ConfigError("camera: focal lengths and image size must be positive")
    for lo, hi in c.landmark_box:
        if hi < lo:
            raise ConfigError("landmark_box: each range must be [min, max]")
    if not 0 <= c.seed < 2**64:
        raise ConfigError("seed: must be a 64-bit unsigned integer")
    try:
        Rotation(c.lander_pose[3:])
    except ValueError as exc:
        raise ConfigError(f"lander_pose: {exc}") from exc
    t = c.trajectory
    if isinstance(t, Straight) and t.length < 0:
        raise ConfigError("trajectory.length: must be >= 0")
    if isinstance(t, Arc) and not t.radius > 0:
        raise ConfigError("trajectory.radius: must be > 0")
    if isinstance(t, Waypoints):
        if len(t.points) < 2:
            raise ConfigError("trajectory.points: need at least 2 waypoints")
        if len(t.speeds) not in (1, len(t.points) - 1) or min(t.speeds) <= 0:
            raise ConfigError("trajectory.speeds: one positive speed, or one per segment")
