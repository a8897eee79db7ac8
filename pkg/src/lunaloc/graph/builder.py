"""Turn a sorted measurement stream into a factor graph plus initial values.

Rover pose nodes live at keyframe epochs (every ``keyframe_every`` base
steps) and, in the camera modes, at every camera/depth/mask timestamp.
Consecutive nodes are tied by one RelativePose factor whose measurement is
the composed odometry between them (gyro yaw folded in per step). UWB ranges
attach to the latest node at or before the ping through an odometry-derived
lever arm, so UWB epochs do not need nodes of their own.
"""

from __future__ import annotations

import enum
import logging
from bisect import bisect_right
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..config import ScenarioConfig
from ..geometry import Pose, exp, log, se3_adjoint, so3_right_jacobian_inv
from ..lander import LanderModel, R_CAM_BODY, default_lander_model
from ..records import Feature, Gyro, LanderDepthPoint, LanderMask, OdomDelta, PosePrior, Uwb
from .core import FactorGraph, NodeKind
from .factors import (HUBER_K, bearing_extent, lander_point, prior_pose, prior_scalar, projection, range_factor,
                      relative_pose, whitener_from_covariance)

log_ = logging.getLogger(__name__)

EPOCH_DECIMALS = 9


class Mode(str, enum.Enum):
    ODOM = "odom"
    ODOM_UWB = "odom+uwb"
    FULL = "full"
    FULL_INTERP = "full+interp"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, Mode):
            return value
        key = str(value).strip().lower().replace("_", "+")
        for m in cls:
            if key in (m.value, m.name.lower().replace("_", "+")):
                return m
        raise ValueError(f"unknown mode {value!r}; expected one of {[m.value for m in cls]}")

    @property
    def uses_uwb(self) -> bool:
        return self is not Mode.ODOM

    @property
    def uses_camera(self) -> bool:
        return self in (Mode.FULL, Mode.FULL_INTERP)


@dataclass(frozen=True)
class NoiseFloors:
    """Smallest sigma the estimator will assume per channel.

    A noiseless scenario has zero sigmas; the estimator still needs finite
    weights, so each channel is clamped to its floor.
    """

    pixel: float = 1e-4
    odom_trans: float = 1e-7
    odom_rot: float = 1e-7
    gyro: float = 1e-7
    uwb: float = 1e-3
    depth: float = 1e-7
    mask: float = 1e-7
    prior: float = 1e-7


@dataclass(frozen=True)
class BuildOptions:
    keyframe_every: int = 5
    bias_sigma: float = 1.0       # prior on the UWB range bias; 0 removes the bias node
    use_gyro: bool = True
    use_depth: bool = True
    use_masks: bool = True
    min_parallax_deg: float = 1.0
    good_parallax_deg: float = 5.0
    huber_k: Optional[float] = HUBER_K
    floors: NoiseFloors = field(default_factory=NoiseFloors)


# ---------------------------------------------------------------------------
# odometry chain
# ---------------------------------------------------------------------------


def _fold_gyro(delta: Pose, cov: np.ndarray, dpsi: float, var: float) -> tuple[Pose, np.ndarray]:
    """Kalman update of a step's twist noise with a measured yaw increment."""
    phi = delta.rotation.as_rotvec()
    H = np.zeros(6)
    H[:3] = so3_right_jacobian_inv(phi)[2]
    s = H @ cov @ H + var
    K = cov @ H / s
    innov = dpsi - phi[2]
    corr = K * innov
    cov = cov - np.outer(K, H @ cov)
    return delta @ exp(corr), 0.5 * (cov + cov.T)


class OdometryChain:
    """Composed odometry between arbitrary times, with propagated covariance.

    Steps partially covered by an interval contribute a proportional fraction
    of their twist and covariance.
    """

    def __init__(self, odom: Sequence[OdomDelta], gyro: Sequence[Gyro] = (), floors: NoiseFloors = NoiseFloors()):
        if not odom:
            raise ValueError("odometry stream is empty")
        self.t0 = np.array([r.t0 for r in odom])
        self.t1 = np.array([r.t for r in odom])
        sig_floor = np.r_[[floors.odom_rot] * 3, [floors.odom_trans] * 3]
        self.deltas = []
        self.covs = []
        self.twists = []
        gyro_t = np.array([g.t - 0.5 * g.dt for g in gyro]) if len(gyro) else np.zeros(0)
        gi = 0
        for r in odom:
            cov = np.diag(np.maximum(np.asarray(r.sigmas, float), sig_floor) ** 2)
            d = r.delta
            dpsi, var, n = 0.0, 0.0, 0
            while gi < len(gyro_t) and gyro_t[gi] <= r.t:
                if gyro_t[gi] > r.t0:
                    g = gyro[gi]
                    dpsi += g.omega_z * g.dt
                    var += (max(g.sigma, floors.gyro) * g.dt) ** 2
                    n += 1
                gi += 1
            if n:
                d, cov = _fold_gyro(d, cov, dpsi, var)
            self.deltas.append(d)
            self.covs.append(cov)
            self.twists.append(log(d))
        self.start = float(self.t0[0])
        self.end = float(self.t1[-1])

    def between(self, ta: float, tb: float) -> tuple[Pose, np.ndarray]:
        """Relative pose from ``ta`` to ``tb`` (``ta <= tb``) and its covariance."""
        if tb < ta:
            raise ValueError("interval must run forward in time")
        D = Pose.identity()
        C = np.zeros((6, 6))
        k = int(np.searchsorted(self.t1, ta, side="right"))
        while k < len(self.t1) and self.t0[k] < tb:
            s0, s1 = self.t0[k], self.t1[k]
            a = max(ta, s0)
            b = min(tb, s1)
            frac = (b - a) / (s1 - s0)
            if frac >= 1.0 - 1e-12:
                piece, cp = self.deltas[k], self.covs[k]
            else:
                piece, cp = exp(frac * self.twists[k]), frac * self.covs[k]
            inv = piece.inverse()
            Ad = se3_adjoint(inv.rotation.as_matrix(), inv.translation)
            C = Ad @ C @ Ad.T + cp
            D = D @ piece
            k += 1
        return D, C


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _epoch(t: float) -> float:
    return round(float(t), EPOCH_DECIMALS)


def triangulate_midpoint(c1: np.ndarray, d1: np.ndarray, c2: np.ndarray, d2: np.ndarray) -> Optional[np.ndarray]:
    """Midpoint of the shortest segment between two rays (unit directions)."""
    w = c1 - c2
    b = d1 @ d2
    denom = 1.0 - b * b
    if denom < 1e-12:
        return None
    s = (b * (d2 @ w) - (d1 @ w)) / denom
    u = ((d2 @ w) - b * (d1 @ w)) / denom
    return 0.5 * ((c1 + s * d1) + (c2 + u * d2))


def _ray(pose: Pose, uv, intr) -> np.ndarray:
    fx, fy, cx, cy = intr
    dc = np.array([(uv[0] - cx) / fx, (uv[1] - cy) / fy, 1.0])
    db = R_CAM_BODY.T @ dc
    d = pose.rotation.apply(db)
    return d / np.linalg.norm(d)


def _in_front(pose: Pose, X: np.ndarray, min_depth: float = 0.1) -> bool:
    body = pose.rotation.inverse().apply(X - pose.translation)
    return bool(body[0] > min_depth)


def _sig(value: float, floor: float) -> float:
    return max(float(value), floor)


# ---------------------------------------------------------------------------
# builder
# ---------------------------------------------------------------------------


def build_graph(measurements: Sequence, config: ScenarioConfig, mode="full", options: Optional[BuildOptions] = None,
                model: Optional[LanderModel] = None) -> tuple[FactorGraph, dict]:
    """Factor graph and dead-reckoned initial values for one estimator mode."""
    mode = Mode.parse(mode)
    opts = options or BuildOptions()
    fl = opts.floors
    model = model or default_lander_model()
    ts = [r.t for r in measurements]
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise ValueError("measurement stream must be sorted by time")

    by_kind = defaultdict(list)
    for r in measurements:
        by_kind[r.kind].append(r)
    odom = by_kind["OdomDelta"]
    gyro = by_kind["Gyro"] if opts.use_gyro else []
    chain = OdometryChain(odom, gyro, fl)
    priors = {p.target: p for p in by_kind["PosePrior"]}

    feats = [f for f in by_kind["Feature"] if not f.virtual] if mode.uses_camera else []
    virtual = [f for f in by_kind["Feature"] if f.virtual] if mode is Mode.FULL_INTERP else []
    depth = by_kind["LanderDepthPoint"] if (mode.uses_camera and opts.use_depth) else []
    masks = by_kind["LanderMask"] if (mode.uses_camera and opts.use_masks) else []
    uwb = by_kind["Uwb"] if mode.uses_uwb else []

    # epochs
    step = opts.keyframe_every / config.base_rate
    n_kf = int(np.floor((chain.end - chain.start) / step + 1e-9))
    epochs = {_epoch(chain.start + j * step) for j in range(n_kf + 1)}
    epochs.add(_epoch(chain.end))
    for r in feats + virtual + depth + masks:
        if chain.start <= r.t <= chain.end:
            epochs.add(_epoch(r.t))
    times = sorted(epochs)
    ids = [f"x{i:05d}" for i in range(len(times))]
    node_at = dict(zip(times, ids))

    g = FactorGraph()
    init: dict = {}
    info = g.info
    info["mode"] = mode.value
    info["epochs"] = list(zip(times, ids))

    # rover chain
    start = priors["rover"].pose if "rover" in priors else Pose.identity()
    pose = start
    for i, (t, nid) in enumerate(zip(times, ids)):
        g.add_node(nid, NodeKind.ROVER_POSE, t=t)
        if i:
            D, C = chain.between(times[i - 1], t)
            pose = pose @ D
            g.add_factor(relative_pose(ids[i - 1], nid, D, sqrt_info=whitener_from_covariance(C)))
        init[nid] = pose
    if "rover" in priors:
        p = priors["rover"]
        g.add_factor(prior_pose(ids[0], p.pose, np.maximum(np.asarray(p.sigmas, float), fl.prior)))
    else:
        g.nodes[ids[0]].fixed = True
    info["n_rover_nodes"] = len(ids)

    # lander
    need_lander = bool(uwb) or bool(depth) or bool(masks)
    if need_lander:
        lp = priors.get("lander")
        g.add_node("lander", NodeKind.LANDER_POSE)
        if lp is not None:
            init["lander"] = lp.pose
            g.add_factor(prior_pose("lander", lp.pose, np.maximum(np.asarray(lp.sigmas, float), fl.prior)))
        else:
            init["lander"] = config.lander
            sig = [config.lander_prior_rot_sigma] * 3 + [config.lander_prior_trans_sigma] * 3
            g.add_factor(prior_pose("lander", config.lander, np.maximum(sig, fl.prior)))

    # UWB
    n_range = 0
    if uwb:
        bias_id = None
        if opts.bias_sigma > 0:
            bias_id = "bias"
            g.add_node(bias_id, NodeKind.RANGE_BIAS)
            init[bias_id] = 0.0
            g.add_factor(prior_scalar(bias_id, 0.0, opts.bias_sigma))
        sigma = _sig(config.uwb_sigma, fl.uwb)
        for r in uwb:
            if not (chain.start <= r.t <= chain.end):
                continue
            k = bisect_right(times, _epoch(r.t)) - 1
            D, C = chain.between(times[k], r.t)
            # lever-arm uncertainty in the worst direction
            lever_var = float(np.linalg.eigvalsh(C[3:, 3:]).max()) if r.t > times[k] else 0.0
            s = float(np.sqrt(sigma**2 + lever_var))
            g.add_factor(range_factor(ids[k], "lander", r.range, s, bias=bias_id, rover_offset=D.translation,
                                      robust=opts.huber_k))
            n_range += 1
    info["n_range"] = n_range

    # lander observations
    if depth or masks:
        g.add_node("scale", NodeKind.LANDER_SCALE)
        init["scale"] = 1.0
        ds = _sig(config.depth_sigma, fl.depth)
        for r in depth:
            g.add_factor(lander_point(node_at[_epoch(r.t)], "lander", "scale", model.model_points[r.model_point_id],
                                      r.point, ds))
        bs, es = _sig(config.mask_bearing_sigma, fl.mask), _sig(config.mask_extent_sigma, fl.mask)
        for r in masks:
            g.add_factor(bearing_extent(node_at[_epoch(r.t)], "lander", "scale", model.hull_points, r.bearing,
                                        r.extent, bs, es))
    info["n_depth"] = len(depth)
    info["n_mask"] = len(masks)

    # landmarks
    intr = (config.fx, config.fy, config.cx, config.cy)
    px = _sig(config.pixel_sigma, fl.pixel)
    tracks = defaultdict(list)
    for f in feats:
        tracks[f.landmark_id].append(f)
    n_single = n_parallax = n_behind = 0
    lm_nodes = {}
    for lid in sorted(tracks):
        obs = tracks[lid]
        if len({_epoch(o.t) for o in obs}) < 2:
            n_single += 1
            continue
        # first view paired with the earliest view of useful parallax, which keeps
        # dead-reckoning drift between the two views small
        a = obs[0]
        pa = init[node_at[_epoch(a.t)]]
        da = _ray(pa, (a.u, a.v), intr)
        for b in obs[1:]:
            pb = init[node_at[_epoch(b.t)]]
            db = _ray(pb, (b.u, b.v), intr)
            angle = np.degrees(np.arccos(np.clip(da @ db, -1.0, 1.0)))
            if angle >= opts.good_parallax_deg:
                break
        if angle < opts.min_parallax_deg:
            n_parallax += 1
            continue
        X = triangulate_midpoint(pa.translation, da, pb.translation, db)
        if X is None or not all(_in_front(init[node_at[_epoch(o.t)]], X) for o in obs):
            n_behind += 1
            continue
        nid = f"l{lid}"
        g.add_node(nid, NodeKind.LANDMARK)
        init[nid] = X
        lm_nodes[lid] = nid
        for o in obs:
            g.add_factor(projection(node_at[_epoch(o.t)], nid, (o.u, o.v), px, intr, opts.huber_k))
    n_virtual = 0
    for f in virtual:
        nid = lm_nodes.get(f.landmark_id)
        if nid is None or _epoch(f.t) not in node_at:
            continue
        g.add_factor(projection(node_at[_epoch(f.t)], nid, (f.u, f.v), px * f.kappa, intr, opts.huber_k,
                                virtual=True))
        n_virtual += 1
    info.update(n_landmarks=len(lm_nodes), n_landmarks_single_view=n_single, n_landmarks_low_parallax=n_parallax,
                n_landmarks_behind=n_behind, n_features=len(feats), n_virtual=n_virtual)
    if n_single or n_parallax or n_behind:
        log_.info("skipped landmarks: %d seen once, %d low parallax, %d behind camera", n_single, n_parallax,
                  n_behind)
    return g, init
