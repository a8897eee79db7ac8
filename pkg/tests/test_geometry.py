import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lunaloc.geometry import Pose, Rotation, compose, exp, interpolate, inverse, log, retract

from conftest import random_pose


def _twists(n, seed=7, max_angle=np.pi - 0.1):
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=(n, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    ang = max_angle * rng.uniform(0, 1, size=(n, 1)) ** (1 / 3)
    return np.hstack([axis * ang, rng.normal(scale=3.0, size=(n, 3))])


def test_exp_zero_is_identity():
    assert exp(np.zeros(6)).isclose(Pose.identity(), 0.0)


def test_exp_quarter_turn_about_z():
    T = exp([0, 0, np.pi / 2, 0, 0, 0])
    assert np.allclose(T.rotation.apply([1, 0, 0]), [0, 1, 0], atol=1e-15)


def test_exp_log_round_trip_1000_samples():
    worst = max(np.abs(log(exp(xi)) - xi).max() for xi in _twists(1000))
    assert worst < 1e-9


def test_exp_log_round_trip_small_angles():
    # Taylor branches near zero
    for ang in (0.0, 1e-12, 1e-9, 1e-6, 1e-4, 1e-3):
        xi = np.array([ang, -ang, 0.5 * ang, 1.0, -2.0, 0.3])
        assert np.abs(log(exp(xi)) - xi).max() < 1e-12


def test_exp_rejects_non_finite():
    with pytest.raises(ValueError):
        exp([np.nan, 0, 0, 0, 0, 0])
    with pytest.raises(ValueError):
        exp([0, 0, 0, np.inf, 0, 0])


def test_log_identity_and_pure_translation():
    assert np.array_equal(log(Pose.identity()), np.zeros(6))
    assert np.allclose(log(Pose.from_translation([2, 0, 0])), [0, 0, 0, 2, 0, 0], atol=0)


def test_log_rotation_by_pi_about_z():
    T = Pose(Rotation.from_axis_angle([0, 0, 1], np.pi), np.zeros(3))
    w = log(T)[:3]
    assert np.allclose(np.abs(w), [0, 0, np.pi], atol=1e-9)
    # stable for both quaternion signs
    T2 = Pose(Rotation(-T.rotation.quat), np.zeros(3))
    assert np.allclose(np.abs(log(T2)[:3]), [0, 0, np.pi], atol=1e-9)


def test_log_angle_is_canonical():
    rng = np.random.default_rng(3)
    for _ in range(200):
        T = random_pose(rng, max_angle=np.pi)
        assert np.linalg.norm(log(T)[:3]) <= np.pi + 1e-12
        assert exp(log(T)).isclose(T, 1e-9)


def test_compose_identity_and_inverse():
    rng = np.random.default_rng(4)
    for _ in range(50):
        A, B = random_pose(rng), random_pose(rng)
        assert compose(Pose.identity(), B).isclose(B, 0.0)
        assert compose(A, inverse(A)).isclose(Pose.identity(), 1e-12)
        assert compose(inverse(A), A).isclose(Pose.identity(), 1e-12)


def test_compose_associative_random_triples():
    rng = np.random.default_rng(5)
    for _ in range(500):
        A, B, C = (random_pose(rng) for _ in range(3))
        assert ((A @ B) @ C).isclose(A @ (B @ C), 1e-12)


def test_quaternion_double_cover_equality():
    q = Rotation.from_rotvec([0.1, -0.4, 0.2])
    assert q == Rotation(-q.quat)
    assert q.isclose(Rotation(-q.quat))


def test_rotation_stays_normalized():
    rng = np.random.default_rng(6)
    R = Rotation.identity()
    for _ in range(1000):
        R = R * Rotation.from_rotvec(rng.normal(scale=0.5, size=3))
    assert abs(np.linalg.norm(R.quat) - 1.0) < 1e-12


def test_retract_conventions():
    rng = np.random.default_rng(8)
    for _ in range(50):
        T = random_pose(rng)
        xi = _twists(1, seed=int(rng.integers(1 << 30)))[0]
        assert retract(T, np.zeros(6)).isclose(T, 0.0)
        assert retract(Pose.identity(), xi).isclose(exp(xi), 1e-12)
        assert retract(T, xi).isclose(T @ exp(xi), 0.0)


def test_retract_inverse_step_small_delta():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(200):
        T = random_pose(rng)
        d = rng.normal(size=6)
        d *= 1e-3 / np.linalg.norm(d)
        back = retract(retract(T, d), -d)
        worst = max(worst, np.abs(log(T.inverse() @ back)).max())
    assert worst < 1e-6


def test_interpolate_examples():
    mid = interpolate(Pose.identity(), Pose.from_translation([2, 0, 0]), 0.5)
    assert mid.isclose(Pose.from_translation([1, 0, 0]), 1e-15)
    T1 = Pose(Rotation.from_axis_angle([0, 0, 1], np.pi / 2), np.zeros(3))
    half = interpolate(Pose.identity(), T1, 0.5)
    assert half.rotation.isclose(Rotation.from_axis_angle([0, 0, 1], np.pi / 4), 1e-12)


def test_interpolate_boundaries_exact():
    rng = np.random.default_rng(10)
    T0, T1 = random_pose(rng), random_pose(rng)
    assert interpolate(T0, T1, 0.0) is T0
    assert interpolate(T0, T1, 1.0) is T1


@pytest.mark.parametrize("alpha", [-1e-9, 1.0 + 1e-9, 2.0, np.nan])
def test_interpolate_refuses_extrapolation(alpha):
    with pytest.raises(ValueError):
        interpolate(Pose.identity(), Pose.from_translation([1, 0, 0]), alpha)


def test_pose_vector7_round_trip():
    rng = np.random.default_rng(11)
    T = random_pose(rng)
    assert Pose.from_vector7(T.to_vector7()).isclose(T, 0.0)


# ----------------------------------------------------------------- properties

finite = st.floats(-1.0, 1.0, allow_nan=False)
twist_st = arrays(np.float64, 6, elements=finite)
alpha_st = st.floats(0.0, 1.0)
vec_st = arrays(np.float64, 3, elements=st.floats(-100.0, 100.0, allow_nan=False))


def _pose_from(xi):
    return exp(np.asarray(xi) * np.array([2.5, 2.5, 2.5, 10, 10, 10]) / np.sqrt(3))


@settings(max_examples=200, deadline=None)
@given(twist_st, vec_st)
def test_rotation_preserves_norm(xi, v):
    T = _pose_from(xi)
    assert abs(np.linalg.norm(T.rotation.apply(v)) - np.linalg.norm(v)) <= 1e-12 * max(1.0, np.linalg.norm(v))


@settings(max_examples=200, deadline=None)
@given(twist_st, twist_st, twist_st, alpha_st)
def test_interpolate_left_equivariant(a, b, g, alpha):
    T0, T1, G = _pose_from(a), _pose_from(b), _pose_from(g)
    rel = log(T0.inverse() @ T1)
    if np.linalg.norm(rel[:3]) > np.pi - 1e-3:
        return  # geodesic not unique at a half turn
    lhs = G @ interpolate(T0, T1, alpha)
    rhs = interpolate(G @ T0, G @ T1, alpha)
    assert lhs.isclose(rhs, 1e-9)


@settings(max_examples=200, deadline=None)
@given(twist_st, twist_st)
def test_inverse_composition_is_identity(a, b):
    A = _pose_from(a) @ _pose_from(b)
    assert (A.inverse() @ A).isclose(Pose.identity(), 1e-12)
