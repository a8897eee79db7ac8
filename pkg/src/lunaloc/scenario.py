"""Deterministic synthetic lunar mission.

Ground truth is a planar kinematic path (poses are still full SE(3)) plus a
lander and a random landmark field. Each sensor draws from its own seeded
sub-generator keyed by ``(seed, stream_id)``, so enabling or reconfiguring
one sensor never changes another sensor's noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import lander as lander_mod
from .config import Arc, ScenarioConfig, Straight, Waypoints
from .geometry import Pose, Rotation, between, exp
from .lander import LanderModel, default_lander_model, mask_summary, tangent_basis, to_camera
from .records import (Feature, Gyro, LanderDepthPoint, LanderMask, OdomDelta, PosePrior, Uwb,
                      sort_records)
from .uwb import ClockModel, simulate_ping

STREAM_LANDMARKS = 1
STREAM_ODOM = 2
STREAM_GYRO = 3
STREAM_CAMERA = 4
STREAM_UWB = 5
STREAM_DEPTH = 6
STREAM_MASK = 7
STREAM_PRIORS = 8

MIN_VISIBLE_DEPTH = 0.1


def stream_rng(seed: int, stream_id: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream_id)])


def sample_times(duration: float, rate: float, start: int = 0) -> np.ndarray:
    """``k / rate`` for ``k = start .. floor(duration * rate)``."""
    n = int(math.floor(duration * rate + 1e-9))
    return np.arange(start, n + 1) / rate


class Kinematics:
    """Continuous-time planar path: position, heading and pose at any time."""

    def __init__(self, spec, duration: float):
        self.spec = spec
        self.duration = float(duration)
        if isinstance(spec, Waypoints):
            pts = np.asarray(spec.points, dtype=float)
            if len(pts) < 2:
                raise ValueError("waypoint trajectory needs at least 2 points")
            speeds = np.broadcast_to(np.asarray(spec.speeds, dtype=float), (len(pts) - 1,))
            seg = np.diff(pts, axis=0)
            lengths = np.linalg.norm(seg, axis=1)
            self._pts = pts
            self._seg_t = np.concatenate([[0.0], np.cumsum(lengths / speeds)])
            headings = []
            last = 0.0
            for d, L in zip(seg, lengths):
                if L > 0:
                    last = math.atan2(d[1], d[0])
                headings.append(last)
            # zero-length leading segments inherit the first real heading
            first = next((h for h, L in zip(headings, lengths) if L > 0), 0.0)
            for i, L in enumerate(lengths):
                if L > 0:
                    break
                headings[i] = first
            self._headings = np.array(headings)

    def position_heading(self, t: float) -> tuple[np.ndarray, float]:
        s = self.spec
        if isinstance(s, Straight):
            return np.array([s.length * t / self.duration, 0.0, 0.0]), 0.0
        if isinstance(s, Arc):
            psi = s.sweep * t / self.duration
            return np.array([s.radius * math.sin(abs(psi)), math.copysign(1.0, s.sweep) * s.radius *
                             (1.0 - math.cos(psi)), 0.0]), psi
        k = int(np.searchsorted(self._seg_t, t, side="right") - 1)
        if k >= len(self._pts) - 1:
            return np.array([*self._pts[-1], 0.0]), float(self._headings[-1])
        span = self._seg_t[k + 1] - self._seg_t[k]
        a = (t - self._seg_t[k]) / span if span > 0 else 0.0
        p = self._pts[k] + a * (self._pts[k + 1] - self._pts[k])
        return np.array([p[0], p[1], 0.0]), float(self._headings[k])

    def pose_at(self, t: float) -> Pose:
        p, psi = self.position_heading(t)
        return Pose(Rotation.from_yaw(psi), p)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    times: np.ndarray
    poses: list
    lander_pose: Pose
    lander_scale: float
    landmarks: np.ndarray
    kinematics: Kinematics = field(repr=False)

    def pose_at(self, t: float) -> Pose:
        return self.kinematics.pose_at(t)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses])


@dataclass(frozen=True, eq=False)
class Mission:
    config: ScenarioConfig
    truth: GroundTruth
    measurements: list
    model: LanderModel


def generate_truth(config: ScenarioConfig) -> GroundTruth:
    kin = Kinematics(config.trajectory, config.duration)
    times = sample_times(config.duration, config.base_rate)
    poses = [kin.pose_at(t) for t in times]
    rng = stream_rng(config.seed, STREAM_LANDMARKS)
    box = np.asarray(config.landmark_box, dtype=float)
    landmarks = rng.uniform(box[:, 0], box[:, 1], size=(config.n_landmarks, 3))
    return GroundTruth(times, poses, config.lander, config.lander_scale_true, landmarks, kin)


def simulate_odometry(truth: GroundTruth, config: ScenarioConfig) -> list:
    rng = stream_rng(config.seed, STREAM_ODOM)
    times = sample_times(config.duration, config.odom_hz)
    sig = np.array([config.odom_rot_sigma] * 3 + [config.odom_trans_sigma] * 3)
    out = []
    prev = truth.pose_at(times[0])
    for t0, t in zip(times[:-1], times[1:]):
        cur = truth.pose_at(t)
        eps = sig * rng.standard_normal(6)
        out.append(OdomDelta(float(t), float(t0), between(prev, cur) @ exp(eps), tuple(sig)))
        prev = cur
    return out


def simulate_gyro(truth: GroundTruth, config: ScenarioConfig) -> list:
    rng = stream_rng(config.seed, STREAM_GYRO)
    times = sample_times(config.duration, config.gyro_hz)
    dt = 1.0 / config.gyro_hz
    out = []
    prev = truth.pose_at(times[0])
    for t in times[1:]:
        cur = truth.pose_at(t)
        dpsi = between(prev, cur).rotation.as_rotvec()[2]
        rate = dpsi / dt + config.gyro_sigma * rng.standard_normal()
        out.append(Gyro(float(t), dt, float(rate), config.gyro_sigma))
        prev = cur
    return out


def uwb_clocks(config: ScenarioConfig) -> tuple[ClockModel, ClockModel]:
    """Rover tag initiates; its offset relative to the lander anchor is ``uwb_clock_ppm``."""
    return ClockModel(config.uwb_clock_ppm), ClockModel(0.0)


def simulate_uwb(truth: GroundTruth, config: ScenarioConfig) -> list:
    rng = stream_rng(config.seed, STREAM_UWB)
    clocks = uwb_clocks(config)
    anchor = truth.lander_pose.translation
    out = []
    for t in sample_times(config.duration, config.uwb_hz):
        d = float(np.linalg.norm(truth.pose_at(t).translation - anchor))
        z = simulate_ping(d, clocks, config.uwb_reply_delay, config.uwb_sigma, config.uwb_dropout, rng)
        if z is not None:
            out.append(Uwb(float(t), z))
    return out


def project(points_cam: np.ndarray, config: ScenarioConfig) -> np.ndarray:
    p = np.atleast_2d(points_cam)
    return np.stack([config.fx * p[:, 0] / p[:, 2] + config.cx, config.fy * p[:, 1] / p[:, 2] + config.cy], axis=1)


def in_image(uv: np.ndarray, config: ScenarioConfig) -> np.ndarray:
    return (uv[:, 0] >= 0) & (uv[:, 0] < config.width) & (uv[:, 1] >= 0) & (uv[:, 1] < config.height)


def simulate_camera(truth: GroundTruth, config: ScenarioConfig) -> list:
    rng = stream_rng(config.seed, STREAM_CAMERA)
    out = []
    for t in sample_times(config.duration, config.cam_hz):
        pc = to_camera(truth.landmarks, truth.pose_at(t))
        noise = config.pixel_sigma * rng.standard_normal((len(pc), 2))
        front = pc[:, 2] > MIN_VISIBLE_DEPTH
        if not front.any():
            continue
        uv = np.full((len(pc), 2), -1.0)
        uv[front] = project(pc[front], config) + noise[front]
        ok = front & in_image(uv, config)
        for j in np.flatnonzero(ok):
            out.append(Feature(float(t), int(j), float(uv[j, 0]), float(uv[j, 1])))
    return out


def lander_in_view(truth: GroundTruth, config: ScenarioConfig, rover_pose: Pose) -> bool:
    c = to_camera(truth.lander_pose.translation[None, :], rover_pose)[0]
    if c[2] <= MIN_VISIBLE_DEPTH or np.linalg.norm(c) >= config.depth_max_range:
        return False
    return bool(in_image(project(c, config), config)[0])


def simulate_lander_depth(truth: GroundTruth, config: ScenarioConfig, model: Optional[LanderModel] = None) -> list:
    model = model or default_lander_model()
    rng = stream_rng(config.seed, STREAM_DEPTH)
    n = len(model.model_points)
    k = min(config.depth_points_per_frame, n)
    out = []
    for t in sample_times(config.duration, config.depth_hz):
        pose = truth.pose_at(t)
        if not lander_in_view(truth, config, pose):
            continue
        ids = np.sort(rng.choice(n, size=k, replace=False))
        ideal = lander_mod.predict_depth_points(model.model_points[ids], truth.lander_pose, truth.lander_scale, pose)
        noisy = ideal + config.depth_sigma * rng.standard_normal(ideal.shape)
        out.extend(LanderDepthPoint(float(t), noisy[i], int(pid)) for i, pid in enumerate(ids))
    return out


@dataclass(frozen=True, eq=False)
class MaskRender:
    mask: np.ndarray
    bearing: Optional[np.ndarray]
    extent: Optional[float]
    centroid_px: Optional[np.ndarray]

    @property
    def present(self) -> bool:
        return self.bearing is not None


def _fill_convex(poly: np.ndarray, width: int, height: int) -> np.ndarray:
    """Pixels whose centres lie inside a convex polygon (any winding)."""
    ys, xs = np.mgrid[0:height, 0:width]
    px = xs + 0.5
    py = ys + 0.5
    inside_pos = np.ones((height, width), bool)
    inside_neg = np.ones((height, width), bool)
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        cross = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])
        inside_pos &= cross >= 0
        inside_neg &= cross <= 0
    return inside_pos | inside_neg


def render_lander_mask(truth: GroundTruth, config: ScenarioConfig, t: float,
                       model: Optional[LanderModel] = None) -> MaskRender:
    """Synthetic segmentation mask of the lander at time ``t``.

    The mask is the filled convex hull of the projected hull vertices. Bearing
    and extent are reported only when the whole silhouette is in front of the
    camera and inside the image; a truncated mask yields pixels but no bearing.
    """
    model = model or default_lander_model()
    pose = truth.pose_at(t)
    hull_world = lander_mod.lander_points_world(model.hull_points, truth.lander_pose, truth.lander_scale)
    hull_cam = to_camera(hull_world, pose)
    empty = np.zeros((config.height, config.width), bool)
    if np.any(hull_cam[:, 2] <= MIN_VISIBLE_DEPTH):
        return MaskRender(empty, None, None, None)
    uv = project(hull_cam, config)
    summary = mask_summary(hull_cam)
    if summary is None:
        return MaskRender(empty, None, None, None)
    bearing, extent, order = summary
    mask = _fill_convex(uv[order], config.width, config.height)
    if not in_image(uv, config).all():
        return MaskRender(mask, None, None, None)
    centroid = project(bearing[None, :], config)[0]
    return MaskRender(mask, bearing, extent, centroid)


def simulate_mask(truth: GroundTruth, config: ScenarioConfig, model: Optional[LanderModel] = None) -> list:
    model = model or default_lander_model()
    rng = stream_rng(config.seed, STREAM_MASK)
    out = []
    hull_world = lander_mod.lander_points_world(model.hull_points, truth.lander_pose, truth.lander_scale)
    for t in sample_times(config.duration, config.cam_hz):
        n = rng.standard_normal(3)
        pose = truth.pose_at(t)
        hull_cam = to_camera(hull_world, pose)
        if np.any(hull_cam[:, 2] <= MIN_VISIBLE_DEPTH) or not in_image(project(hull_cam, config), config).all():
            continue
        if np.linalg.norm(hull_cam.mean(axis=0)) >= config.depth_max_range:
            continue
        summary = mask_summary(hull_cam)
        if summary is None:
            continue
        bearing, extent, _ = summary
        e = tangent_basis(bearing)
        b = bearing + config.mask_bearing_sigma * (n[0] * e[0] + n[1] * e[1])
        out.append(LanderMask(float(t), b / np.linalg.norm(b), float(extent + config.mask_extent_sigma * n[2])))
    return out


def simulate_priors(truth: GroundTruth, config: ScenarioConfig) -> list:
    rng = stream_rng(config.seed, STREAM_PRIORS)
    start_sig = np.array([config.start_prior_rot_sigma] * 3 + [config.start_prior_trans_sigma] * 3)
    lander_sig = np.array([config.lander_prior_rot_sigma] * 3 + [config.lander_prior_trans_sigma] * 3)
    n_start, n_lander = rng.standard_normal(6), rng.standard_normal(6)
    if not config.perturb_priors:
        n_start[:] = 0.0
        n_lander[:] = 0.0
    start = truth.pose_at(0.0) @ exp(start_sig * n_start)
    lander = truth.lander_pose @ exp(lander_sig * n_lander)
    return [PosePrior(0.0, "rover", start, tuple(start_sig)), PosePrior(0.0, "lander", lander, tuple(lander_sig))]


def simulate(config: ScenarioConfig, model: Optional[LanderModel] = None) -> Mission:
    """Ground truth plus every sensor stream, merged and time-sorted."""
    model = model or default_lander_model()
    truth = generate_truth(config)
    records = (
        simulate_priors(truth, config)
        + simulate_odometry(truth, config)
        + simulate_gyro(truth, config)
        + simulate_uwb(truth, config)
        + simulate_camera(truth, config)
        + simulate_lander_depth(truth, config, model)
        + simulate_mask(truth, config, model)
    )
    return Mission(config, truth, sort_records(records), model)
