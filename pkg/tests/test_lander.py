import json
from pathlib import Path

import numpy as np
import pytest

from lunaloc.geometry import Pose, Rotation, exp
from lunaloc.lander import (R_CAM_BODY, DepthObservation, LanderModel, MaskObservation, Underconstrained,
                            bearing_extent_residual, default_lander_model, estimate_lander, mask_summary,
                            predict_depth_points)

from oracles.lander_bounds import HEADROOM, standalone_errors

BOUNDS_FILE = Path(__file__).parent / "oracles" / "lander_bounds.json"

L_TRUE = Pose(Rotation.from_yaw(0.5), [25.0, 0.0, 1.26])
S_TRUE = 1.1


def _facing(p, target, yaw_noise=0.0):
    d = np.asarray(target) - p
    return Pose(Rotation.from_yaw(np.arctan2(d[1], d[0]) + yaw_noise), p)


def _depth_obs(model, rovers, ids, sigma=0.0, rng=None, L=L_TRUE, s=S_TRUE):
    out = []
    for T in rovers:
        pts = predict_depth_points(model.model_points[ids], L, s, T)
        if sigma > 0:
            pts = pts + sigma * rng.normal(size=pts.shape)
        out.append(DepthObservation(T, np.asarray(ids), pts, max(sigma, 0.02)))
    return out


def _mask_obs(model, rovers, sigma=0.0, rng=None, L=L_TRUE, s=S_TRUE):
    out = []
    for T in rovers:
        b, e, _ = mask_summary(predict_depth_points(model.hull_points, L, s, T))
        if sigma > 0:
            b, e = b + sigma * rng.normal(size=3), e + sigma * rng.normal()
        out.append(MaskObservation(T, b, e))
    return out


def test_default_model_shape():
    m = default_lander_model()
    assert m.model_points.shape == (20, 3)
    assert np.abs(m.model_points.mean(axis=0)).max() < 1e-12
    sv = np.linalg.svd(m.model_points, compute_uv=False)
    assert sv[-1] > 0.1
    hp = m.hull_points
    assert m.extent == pytest.approx(np.max(np.linalg.norm(hp[:, None] - hp[None], axis=-1)))


def test_model_validation():
    pts = default_lander_model().model_points
    with pytest.raises(ValueError, match="at least 8"):
        LanderModel(pts[:7] - pts[:7].mean(axis=0), np.arange(4), 1.0)
    with pytest.raises(ValueError, match="centred"):
        LanderModel(pts + 1.0, np.arange(8), 1.0)
    flat = pts.copy()
    flat[:, 2] = 0.0
    with pytest.raises(ValueError, match="coplanar"):
        LanderModel(flat - flat.mean(axis=0), np.arange(8), 1.0)


def test_predict_depth_points_identity_and_scale():
    p = default_lander_model().model_points
    I = Pose.identity()
    assert np.allclose(predict_depth_points(p, I, 1.0, I), p @ R_CAM_BODY.T, atol=1e-15)
    # lander origin 10 m ahead: doubling scale doubles every offset from the origin's image
    L = Pose.from_translation([10.0, 0.0, 0.0])
    c = predict_depth_points(np.zeros((1, 3)), L, 1.0, I)
    one = predict_depth_points(p, L, 1.0, I) - c
    two = predict_depth_points(p, L, 2.0, I) - c
    assert np.allclose(two, 2.0 * one, atol=1e-12)


def test_noiseless_depth_round_trip():
    m = default_lander_model()
    rovers = [_facing(np.array([0.0, y, 0.0]), L_TRUE.translation) for y in (-1.0, 1.0)]
    obs = _depth_obs(m, rovers, np.arange(20))
    init = L_TRUE @ exp(np.r_[np.radians(10) * np.array([0.6, -0.5, 0.62]), 0.3 * np.array([0.6, 0.8, 0.0])])
    est = estimate_lander(obs, m, init, 1.2)
    assert est.cost < 1e-12
    assert np.linalg.norm(est.pose.translation - L_TRUE.translation) < 1e-8
    assert (L_TRUE.inverse() @ est.pose).rotation.angle() < 1e-8
    assert est.scale == pytest.approx(S_TRUE, abs=1e-10)
    assert est.covariance.shape == (7, 7)


def test_coplanar_depth_points_are_underconstrained():
    m = default_lander_model()
    # four corners of the top face
    top = [i for i, p in enumerate(m.model_points[:8]) if p[2] > 0]
    assert len(top) == 4
    obs = _depth_obs(m, [_facing(np.zeros(3), L_TRUE.translation)], top)
    with pytest.raises(Underconstrained):
        estimate_lander(obs, m, L_TRUE, 1.0)


def test_single_mask_view_is_underconstrained():
    m = default_lander_model()
    obs = _mask_obs(m, [_facing(np.zeros(3), L_TRUE.translation)])
    with pytest.raises(Underconstrained):
        estimate_lander(obs, m, L_TRUE, 1.0)


def test_bearing_extent_zero_at_generating_states():
    m = default_lander_model()
    T = _facing(np.array([2.0, -3.0, 0.0]), L_TRUE.translation, 0.05)
    (obs,) = _mask_obs(m, [T])
    assert np.abs(bearing_extent_residual(obs, m, L_TRUE, S_TRUE)).max() < 1e-12


def test_extent_halves_when_distance_doubles():
    m = default_lander_model()
    extents = []
    for d in (60.0, 120.0):
        L = Pose(L_TRUE.rotation, [d, 0.0, 1.26])
        (obs,) = _mask_obs(m, [_facing(np.zeros(3), L.translation)], L=L)
        extents.append(obs.extent)
    assert extents[0] < 0.2
    assert extents[1] / extents[0] == pytest.approx(0.5, rel=0.01)


def test_bearing_extent_invariant_to_roll_about_an_on_axis_bearing():
    # the bearing is observed along the optical axis; rolling the camera about
    # that axis leaves the bearing and extent unchanged
    m = default_lander_model()
    T = _facing(np.zeros(3), L_TRUE.translation)
    (obs,) = _mask_obs(m, [T])
    obs = MaskObservation(T, [0.0, 0.0, 1.0], obs.extent)
    r0 = bearing_extent_residual(obs, m, L_TRUE, S_TRUE)
    assert np.linalg.norm(r0) > 1.0
    for angle in (0.3, 1.0, 2.0):
        # optical z is body x
        rolled = T @ Pose(Rotation.from_rotvec([angle, 0.0, 0.0]), np.zeros(3))
        r = bearing_extent_residual(obs, m, L_TRUE, S_TRUE, rover_pose=rolled)
        assert np.linalg.norm(r) == pytest.approx(np.linalg.norm(r0), rel=1e-10)


def test_scale_and_pose_are_separately_recoverable():
    m = default_lander_model()
    rng = np.random.default_rng(31)
    rovers = [_facing(np.array([0.8 * k, rng.uniform(-1, 1), 0.0]), L_TRUE.translation) for k in range(6)]
    obs = _depth_obs(m, rovers, np.arange(20), sigma=0.02, rng=rng)
    init = L_TRUE @ exp([0.05, -0.05, 0.1, 0.3, -0.2, 0.1])
    fixed_scale = estimate_lander(obs, m, init, S_TRUE, fix_scale=True)
    fixed_pose = estimate_lander(obs, m, L_TRUE, 1.3, fix_pose=True)
    joint = estimate_lander(obs, m, init, 1.3)
    assert fixed_scale.scale == S_TRUE and fixed_pose.pose.isclose(L_TRUE, 0.0)
    assert fixed_scale.covariance.shape == (6, 6) and fixed_pose.covariance.shape == (1, 1)
    sd = np.sqrt(np.diag(joint.covariance))
    assert abs(joint.scale - fixed_pose.scale) < 3 * sd[6]
    dt = joint.pose.inverse() @ fixed_scale.pose
    assert np.all(np.abs(dt.translation) < 3 * sd[3:6] + 1e-3)
    assert abs(joint.scale - S_TRUE) < 3 * sd[6]


def test_mask_only_error_shrinks_with_baseline():
    m = default_lander_model()
    rms = []
    for base in (2.0, 8.0, 32.0):
        errs = []
        for seed in range(20):
            rng = np.random.default_rng([seed, 3])
            rovers = [_facing(np.array([0.0, y, 0.0]), L_TRUE.translation) for y in (-base / 2, 0.0, base / 2)]
            obs = _mask_obs(m, rovers, sigma=0.003, rng=rng)
            init = L_TRUE @ exp(np.r_[np.radians(3) * rng.normal(size=3), rng.normal(size=3)])
            est = estimate_lander(obs, m, init, 1.0, rotation_prior_sigma=np.radians(5))
            errs.append(np.linalg.norm(est.pose.translation - L_TRUE.translation))
        rms.append(np.sqrt(np.mean(np.square(errs))))
    assert rms[0] > rms[1] > rms[2]


def test_standalone_depth_estimation_within_oracle_bounds():
    # 10 frames of 20 points at sigma 0.02, test seeds disjoint from the oracle seeds
    got = standalone_errors(range(100))
    ref = json.loads(BOUNDS_FILE.read_text())["standalone"]
    for key in ("trans_rmse", "rot_rmse", "scale_rmse"):
        assert got[key] <= HEADROOM * ref[key], (key, got[key], ref[key])
