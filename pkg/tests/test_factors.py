import numpy as np
import pytest

from lunaloc.geometry import Pose, Rotation, exp
from lunaloc.graph import factors as F
from lunaloc.graph.core import FactorKind, InvalidFactor
from lunaloc.lander import R_BODY_CAM, predict_depth_points

from factor_cases import CASES, worst_jacobian_error


def test_range_three_four_five():
    f5 = F.range_factor("x", "a", 5.0, 1.0, robust=None)
    f6 = F.range_factor("x", "a", 6.0, 1.0, robust=None)
    states = {"x": Pose.from_translation([3, 4, 0]), "a": np.zeros(3)}
    assert F.residual(f5, states)[0] == pytest.approx(0.0, abs=1e-15)
    assert F.residual(f6, states)[0] == pytest.approx(-1.0, abs=1e-15)


def test_range_bias_adds():
    f = F.range_factor("x", "a", 5.0, 0.5, bias="b", robust=None)
    r = F.residual(f, {"x": Pose.from_translation([3, 4, 0]), "a": np.zeros(3), "b": 0.25})
    assert r[0] == pytest.approx(0.25 / 0.5)


def test_range_jacobian_wrt_translation_is_unit_direction():
    # rover identity orientation, so the body-frame translation tangent is the world direction
    sigma = 0.2
    f = F.range_factor("x", "a", 1.0, sigma, robust=None)
    J = F.jacobians(f, {"x": Pose.from_translation([3, 4, 0]), "a": np.zeros(3)})
    assert np.allclose(J["x"][0, 3:], np.array([0.6, 0.8, 0.0]) / sigma, atol=1e-12)
    assert np.allclose(J["x"][0, :3], 0.0, atol=1e-12)
    assert np.allclose(J["a"][0], -np.array([0.6, 0.8, 0.0]) / sigma, atol=1e-12)


def test_prior_scalar_jacobian_is_inverse_sigma():
    for sigma in (0.1, 1.0, 7.5):
        J = F.jacobians(F.prior_scalar("b", 3.0, sigma), {"b": 1.0})
        assert J["b"][0, 0] == 1.0 / sigma
        assert F.residual(F.prior_scalar("b", 3.0, sigma), {"b": 1.0})[0] == pytest.approx(-2.0 / sigma)


def test_relative_pose_zero_at_generating_states(rng):
    A = Pose(Rotation.from_rotvec([0.1, 0.2, -0.3]), [1, 2, 3])
    B = A @ exp([0.05, -0.1, 0.2, 1.0, 0.0, -0.5])
    f = F.relative_pose("a", "b", A.inverse() @ B, [0.01] * 6)
    assert np.abs(F.residual(f, {"a": A, "b": B})).max() < 1e-12


def test_projection_zero_and_invalid_behind():
    T = Pose(Rotation.from_yaw(0.3), [1.0, -2.0, 0.5])
    X = T.transform(R_BODY_CAM @ np.array([1.0, 0.0, 10.0]))
    f = F.projection("x", "l", (370.0, 240.0), 1.0, (500.0, 500.0, 320.0, 240.0), robust=None)
    assert np.abs(F.residual(f, {"x": T, "l": X})).max() < 1e-9
    behind = T.transform(R_BODY_CAM @ np.array([1.0, 0.0, -10.0]))
    with pytest.raises(InvalidFactor):
        F.residual(f, {"x": T, "l": behind})
    at_zero = T.transform(R_BODY_CAM @ np.array([1.0, 0.0, 0.0]))
    with pytest.raises(InvalidFactor):
        F.residual(f, {"x": T, "l": at_zero})


def test_lander_point_scale_doubling_matches_formula():
    rng = np.random.default_rng(21)
    T = Pose(Rotation.from_rotvec(rng.normal(size=3)), rng.normal(size=3))
    L = Pose(Rotation.from_rotvec(rng.normal(size=3)), rng.normal(scale=5, size=3))
    p = rng.normal(size=3)
    z = rng.normal(size=3)
    sigma = 0.05
    f = F.lander_point("x", "L", "s", p, z, sigma)
    r1 = F.residual(f, {"x": T, "L": L, "s": 1.0})
    r2 = F.residual(f, {"x": T, "L": L, "s": 2.0})
    # direct evaluation of cam^-1 (s R_L p + t_L) - z
    direct = lambda s: (predict_depth_points(p[None], L, s, T)[0] - z) / sigma
    assert np.allclose(r1, direct(1.0), atol=1e-12)
    assert np.allclose(r2, direct(2.0), atol=1e-12)
    # the shift is the R_L p offset expressed in the camera frame
    shift = predict_depth_points(p[None], L, 2.0, T)[0] - predict_depth_points(p[None], L, 1.0, T)[0]
    assert np.allclose((r2 - r1) * sigma, shift, atol=1e-12)
    assert np.linalg.norm(shift) == pytest.approx(np.linalg.norm(p), rel=1e-12)


def test_residual_dimensions():
    rng = np.random.default_rng(22)
    for name, make in CASES.items():
        f, states = make(rng)
        r = F.residual(f, states)
        assert r.shape == (f.kind.dim,) and np.all(np.isfinite(r)), name
        J = F.jacobians(f, states)
        for n in f.nodes:
            assert J[n].shape[0] == f.kind.dim


def test_residual_dims_table():
    dims = {k.value: k.dim for k in FactorKind}
    assert dims == {"PriorPose": 6, "PriorScalar": 1, "RelativePose": 6, "Projection": 2, "Range": 1,
                    "LanderPoint": 3, "BearingExtent": 3}


def test_sigmas_must_be_positive():
    with pytest.raises(ValueError):
        F.prior_scalar("b", 0.0, 0.0)
    with pytest.raises(ValueError):
        F.relative_pose("a", "b", Pose.identity(), [1, 1, 1, 1, 1, -1])


@pytest.mark.parametrize("kind", sorted(CASES))
def test_jacobians_match_finite_differences(kind):
    assert worst_jacobian_error(kind, 20, seed=1) < 1e-5

