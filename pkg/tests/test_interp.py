import numpy as np
import pytest

from lunaloc.config import ScenarioConfig
from lunaloc.interp import (FeatureFrame, calibrate_kappa, camera_frames, interpolate_tracks, interpolation_error,
                            synthesize_stream)
from lunaloc.lander import to_camera
from lunaloc.pipeline import evaluate, prepare_measurements, run_estimator
from lunaloc.scenario import generate_truth, project, simulate


def test_midpoint_example():
    f0 = FeatureFrame(0.0, {7: (100.0, 100.0)})
    f1 = FeatureFrame(0.5, {7: (110.0, 120.0)})
    (v,) = interpolate_tracks(f0, f1, 0.5, kappa=2.0)
    assert (v.t, v.landmark_id, v.u, v.v) == (0.25, 7, 105.0, 110.0)
    assert v.virtual and v.kappa == 2.0 and v.alpha == 0.5 and tuple(v.source) == (0.0, 0.5)


def test_disjoint_tracks_give_nothing():
    f0 = FeatureFrame(0.0, {1: (1.0, 1.0)})
    f1 = FeatureFrame(1.0, {2: (2.0, 2.0)})
    assert interpolate_tracks(f0, f1, 0.5) == []


def test_exact_for_constant_image_velocity():
    vel = np.array([13.0, -4.0])
    f0 = FeatureFrame(1.0, {0: (50.0, 60.0)})
    f1 = FeatureFrame(2.0, {0: tuple(np.array([50.0, 60.0]) + vel)})
    for a in (0.1, 0.25, 0.9):
        (v,) = interpolate_tracks(f0, f1, a)
        assert np.allclose([v.u, v.v], np.array([50.0, 60.0]) + a * vel, atol=1e-12)


def test_argument_checks():
    f0, f1 = FeatureFrame(0.0, {}), FeatureFrame(1.0, {})
    for a in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError, match="alpha"):
            interpolate_tracks(f0, f1, a)
    with pytest.raises(ValueError, match="kappa"):
        interpolate_tracks(f0, f1, 0.5, kappa=0.5)
    with pytest.raises(ValueError, match="increasing"):
        interpolate_tracks(f1, f0, 0.5)
    with pytest.raises(ValueError, match="adjacent"):
        interpolate_tracks(f0, f1, 0.5, frame_times=[0.0, 0.5, 1.0])


def test_interpolation_error_small_on_default_mission():
    cfg = ScenarioConfig()
    err = interpolation_error(generate_truth(cfg.replace(seed=3)), cfg)
    assert len(err) > 1000
    assert np.sqrt(np.mean(err**2)) < 0.5
    assert np.median(np.abs(err)) < 0.5


def test_one_virtual_frame_per_gap_at_midpoints():
    cfg = ScenarioConfig(duration=20.0, seed=4)
    m = simulate(cfg).measurements
    real_t = [f.t for f in camera_frames(m)]
    out = synthesize_stream(m, n_virtual=1, kappa=1.5)
    virt_t = sorted({r.t for r in out if getattr(r, "virtual", False)})
    assert len(virt_t) == len(real_t) - 1
    assert np.allclose(virt_t, 0.5 * (np.array(real_t[:-1]) + np.array(real_t[1:])), atol=1e-12)


def test_synthesize_is_sorted_and_non_destructive():
    cfg = ScenarioConfig(duration=20.0, seed=5)
    m = simulate(cfg).measurements
    before = list(m)
    out = synthesize_stream(m, n_virtual=2)
    assert m == before and all(a is b for a, b in zip(m, before))
    ts = [r.t for r in out]
    assert ts == sorted(ts)
    real_out = [r for r in out if not getattr(r, "virtual", False)]
    assert len(real_out) == len(m) and {id(r) for r in real_out} == {id(r) for r in m}
    with pytest.raises(ValueError):
        synthesize_stream(m, n_virtual=0)


def test_huge_kappa_reduces_to_full():
    cfg = ScenarioConfig(duration=30.0, cam_hz=1.0, seed=6)
    m = simulate(cfg)
    full = run_estimator(m.measurements, cfg, "full", model=m.model, covariances=False)
    interp = run_estimator(m.measurements, cfg, "full+interp", model=m.model, kappa=1e6, covariances=False)
    stream = prepare_measurements(m.measurements, cfg, "full+interp", kappa=1e6)
    assert any(getattr(r, "virtual", False) for r in stream)
    common = {t: p for t, p in zip(interp.trajectory.times, interp.trajectory.poses)}
    for t, p in zip(full.trajectory.times, full.trajectory.poses):
        assert common[t].isclose(p, 1e-6)
    assert interp.lander_pose.isclose(full.lander_pose, 1e-6)


@pytest.mark.parametrize("cam_hz", [2.0, 1.0])
def test_noiseless_interp_meets_noiseless_accuracy(cam_hz):
    cfg = ScenarioConfig(cam_hz=cam_hz).noiseless()
    m = simulate(cfg)
    met = evaluate(run_estimator(m.measurements, cfg, "full+interp", model=m.model, covariances=False), m.truth)
    assert met.ate_rmse < 1e-6
    assert met.lander_pose_error["trans"] < 1e-6 and met.lander_pose_error["rot"] < 1e-8
    assert met.lander_scale_error < 1e-8


def test_calibrated_kappa_is_not_overconfident():
    cfg = ScenarioConfig(duration=30.0)
    kappa = calibrate_kappa(cfg)
    assert kappa >= 1.0
    z = []
    for seed in (11, 12, 13):
        c = cfg.replace(seed=seed)
        mission = simulate(c)
        virt = [r for r in synthesize_stream(mission.measurements, 1, kappa) if getattr(r, "virtual", False)]
        ids = np.array([r.landmark_id for r in virt])
        pc = np.concatenate([to_camera(mission.truth.landmarks[[i]], mission.truth.pose_at(r.t))
                             for i, r in zip(ids, virt)])
        uv = project(pc, c)
        got = np.array([(r.u, r.v) for r in virt])
        z.append((got - uv) / (kappa * c.pixel_sigma))
    assert np.concatenate(z).std() <= 1.1
