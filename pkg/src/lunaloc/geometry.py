"""Rigid-body transform algebra on SO(3) and SE(3).

Conventions used throughout the package:

* Quaternions are stored scalar-first, ``(w, x, y, z)``.
* Twists are 6-vectors ordered ``(omega, v)``: rotation part first, then
  translation part, both in the local (body) frame.
* Perturbations are applied on the right: ``retract(T, d) = T @ exp(d)``.

The scalar ``Rotation``/``Pose`` classes are immutable value types. The
``so3_*``/``se3_*`` helpers operate on stacked arrays and are what the
optimizer uses when assembling Jacobians.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

# Below this angle the rotation exponential switches to its Taylor expansion.
SMALL_ANGLE = 1e-9
# Coefficients such as (theta - sin theta) / theta^3 lose all precision to
# cancellation long before 1e-9, so they switch to series expansions here.
SERIES_ANGLE = 1e-4


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix of a 3-vector, or of a stack of shape (..., 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


# ---------------------------------------------------------------------------
# Quaternion helpers (stacked)
# ---------------------------------------------------------------------------


def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = np.moveaxis(np.asarray(q1, dtype=float), -1, 0)
    w2, x2, y2, z2 = np.moveaxis(np.asarray(q2, dtype=float), -1, 0)
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_from_rotvec(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    half = 0.5 * theta
    # sin(theta/2)/theta, with its Taylor form near zero
    k = np.where(small, 0.5 - theta**2 / 48.0, np.sin(half) / safe)
    c = np.where(small, 1.0 - theta**2 / 8.0, np.cos(half))
    q = np.concatenate([c[..., None], k[..., None] * w], axis=-1)
    return quat_normalize(q)


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Rotation vector with angle in [0, pi]; stable at and near pi."""
    q = np.asarray(q, dtype=float)
    q = np.where(q[..., :1] < 0, -q, q)
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1)
    theta = 2.0 * np.arctan2(s, q[..., 0])
    small = s < 0.5 * SMALL_ANGLE
    safe = np.where(small, 1.0, s)
    k = np.where(small, 2.0 / np.where(small, q[..., 0], 1.0), theta / safe)
    return k[..., None] * v


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = quat_normalize(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - w * z)
    out[..., 0, 2] = 2 * (x * z + w * y)
    out[..., 1, 0] = 2 * (x * y + w * z)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - w * x)
    out[..., 2, 0] = 2 * (x * z - w * y)
    out[..., 2, 1] = 2 * (y * z + w * x)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method, picking the numerically largest pivot per matrix."""
    R = np.asarray(R, dtype=float)
    m = R.reshape(-1, 3, 3)
    m00, m01, m02 = m[:, 0, 0], m[:, 0, 1], m[:, 0, 2]
    m10, m11, m12 = m[:, 1, 0], m[:, 1, 1], m[:, 1, 2]
    m20, m21, m22 = m[:, 2, 0], m[:, 2, 1], m[:, 2, 2]
    tr = m00 + m11 + m22
    choice = np.argmax(np.stack([tr, m00, m11, m22], axis=1), axis=1)
    cand = np.empty((4, m.shape[0], 4))
    with np.errstate(divide="ignore", invalid="ignore"):
        s = 2.0 * np.sqrt(np.maximum(1.0 + tr, 0.0))
        cand[0] = np.stack([0.25 * s, (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s], axis=1)
        s = 2.0 * np.sqrt(np.maximum(1.0 + m00 - m11 - m22, 0.0))
        cand[1] = np.stack([(m21 - m12) / s, 0.25 * s, (m01 + m10) / s, (m02 + m20) / s], axis=1)
        s = 2.0 * np.sqrt(np.maximum(1.0 + m11 - m00 - m22, 0.0))
        cand[2] = np.stack([(m02 - m20) / s, (m01 + m10) / s, 0.25 * s, (m12 + m21) / s], axis=1)
        s = 2.0 * np.sqrt(np.maximum(1.0 + m22 - m00 - m11, 0.0))
        cand[3] = np.stack([(m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, 0.25 * s], axis=1)
    out = quat_normalize(cand[choice, np.arange(m.shape[0])])
    return out.reshape(R.shape[:-2] + (4,))


# ---------------------------------------------------------------------------
# SO(3) / SE(3) maps (stacked)
# ---------------------------------------------------------------------------


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues' formula for a rotation vector or stack of them."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(theta) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(theta)) / safe**2)
    W = skew(w)
    return np.eye(3) + a[..., None, None] * W + b[..., None, None] * (W @ W)


def so3_log(R: np.ndarray) -> np.ndarray:
    return quat_to_rotvec(matrix_to_quat(R))


def _v_coeffs(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(1 - cos t)/t^2 and (t - sin t)/t^3 with series near zero."""
    small = theta < SERIES_ANGLE
    safe = np.where(small, 1.0, theta)
    t2 = theta**2
    b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0, (safe - np.sin(safe)) / safe**3)
    return b, c


def so3_left_jacobian(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    b, c = _v_coeffs(np.linalg.norm(w, axis=-1))
    W = skew(w)
    return np.eye(3) + b[..., None, None] * W + c[..., None, None] * (W @ W)


def so3_left_jacobian_inv(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    small = theta < SERIES_ANGLE
    safe = np.where(small, 1.0, theta)
    # 1/t^2 - cot(t/2)/(2t): finite at t = pi, series near zero
    d = np.where(small, 1.0 / 12.0 + theta**2 / 720.0, 1.0 / safe**2 - 1.0 / (2.0 * safe * np.tan(0.5 * safe)))
    W = skew(w)
    return np.eye(3) - 0.5 * W + d[..., None, None] * (W @ W)


def so3_right_jacobian(w: np.ndarray) -> np.ndarray:
    return so3_left_jacobian(-np.asarray(w, dtype=float))


def so3_right_jacobian_inv(w: np.ndarray) -> np.ndarray:
    return so3_left_jacobian_inv(-np.asarray(w, dtype=float))


def _se3_q(xi: np.ndarray) -> np.ndarray:
    """Translation-rotation coupling block of the SE(3) left Jacobian."""
    phi = xi[..., :3]
    rho = xi[..., 3:]
    theta = np.linalg.norm(phi, axis=-1)
    small = theta < 1e-2
    t = np.where(small, 1.0, theta)
    t2 = theta**2
    c1 = np.where(small, 1.0 / 6.0 - t2 / 120.0 + t2**2 / 5040.0, (t - np.sin(t)) / t**3)
    c2 = np.where(
        small,
        1.0 / 24.0 - t2 / 720.0 + t2**2 / 40320.0,
        (t**2 + 2.0 * np.cos(t) - 2.0) / (2.0 * t**4),
    )
    c3 = np.where(
        small,
        1.0 / 120.0 - t2 / 2520.0 + t2**2 / 120960.0,
        (2.0 * t - 3.0 * np.sin(t) + t * np.cos(t)) / (2.0 * t**5),
    )
    P = skew(phi)
    Rh = skew(rho)
    PR = P @ Rh
    RP = Rh @ P
    PRP = PR @ P
    PP = P @ P
    return (
        0.5 * Rh
        + c1[..., None, None] * (PR + RP + PRP)
        + c2[..., None, None] * (PP @ Rh + RP @ P - 3.0 * PRP)
        + c3[..., None, None] * (PRP @ P + PP @ Rh @ P)
    )


def se3_left_jacobian(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    J = so3_left_jacobian(xi[..., :3])
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = J
    out[..., 3:, 3:] = J
    out[..., 3:, :3] = _se3_q(xi)
    return out


def se3_left_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    Ji = so3_left_jacobian_inv(xi[..., :3])
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = Ji
    out[..., 3:, 3:] = Ji
    out[..., 3:, :3] = -Ji @ _se3_q(xi) @ Ji
    return out


def se3_right_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    return se3_left_jacobian_inv(-np.asarray(xi, dtype=float))


def se3_adjoint(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Adjoint of (R, t) acting on (omega, v) twists."""
    R = np.asarray(R, dtype=float)
    out = np.zeros(R.shape[:-2] + (6, 6))
    out[..., :3, :3] = R
    out[..., 3:, 3:] = R
    out[..., 3:, :3] = skew(t) @ R
    return out


def se3_exp_arrays(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stacked SE(3) exponential returning rotation matrices and translations."""
    xi = np.asarray(xi, dtype=float)
    R = so3_exp(xi[..., :3])
    V = so3_left_jacobian(xi[..., :3])
    return R, (V @ xi[..., 3:, None])[..., 0]


def se3_log_arrays(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    w = so3_log(R)
    v = (so3_left_jacobian_inv(w) @ np.asarray(t, dtype=float)[..., None])[..., 0]
    return np.concatenate([w, v], axis=-1)


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Rotation:
    """Unit quaternion rotation, renormalized on construction.

    ``q`` and ``-q`` compare equal.
    """

    quat: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=float).reshape(4)
        if not np.all(np.isfinite(q)):
            raise ValueError("quaternion must be finite")
        n = np.linalg.norm(q)
        if n == 0.0:
            raise ValueError("zero quaternion")
        object.__setattr__(self, "quat", _frozen(q / n))

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_rotvec(cls, w) -> "Rotation":
        w = np.asarray(w, dtype=float)
        if not np.all(np.isfinite(w)):
            raise ValueError("rotation vector must be finite")
        return cls(quat_from_rotvec(w))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Rotation":
        axis = np.asarray(axis, dtype=float)
        return cls.from_rotvec(axis / np.linalg.norm(axis) * angle)

    @classmethod
    def from_matrix(cls, R) -> "Rotation":
        return cls(matrix_to_quat(np.asarray(R, dtype=float)))

    @classmethod
    def from_yaw(cls, yaw: float) -> "Rotation":
        return cls(np.array([np.cos(0.5 * yaw), 0.0, 0.0, np.sin(0.5 * yaw)]))

    def as_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def as_rotvec(self) -> np.ndarray:
        q = self.quat
        if q[0] == 0.0:
            # exactly pi: pick the axis sign with a positive leading component
            v = q[1:]
            lead = v[np.flatnonzero(v)[0]]
            q = q if lead > 0 else -q
        return quat_to_rotvec(q)

    def angle(self) -> float:
        return float(np.linalg.norm(self.as_rotvec()))

    def apply(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.as_matrix().T

    def inverse(self) -> "Rotation":
        w, x, y, z = self.quat
        return Rotation(np.array([w, -x, -y, -z]))

    def __mul__(self, other: "Rotation") -> "Rotation":
        return Rotation(quat_multiply(self.quat, other.quat))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Rotation):
            return NotImplemented
        return bool(np.array_equal(self.quat, other.quat) or np.array_equal(self.quat, -other.quat))

    __hash__ = None

    def isclose(self, other: "Rotation", atol: float = 1e-12) -> bool:
        d = min(np.abs(self.quat - other.quat).max(), np.abs(self.quat + other.quat).max())
        return bool(d <= atol)

    def __repr__(self) -> str:
        return f"Rotation(quat={np.array2string(self.quat, precision=6)})"


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform mapping body-frame points into the parent frame."""

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self):
        if not isinstance(self.rotation, Rotation):
            object.__setattr__(self, "rotation", Rotation(self.rotation))
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(Rotation.identity(), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> "Pose":
        return cls(Rotation.identity(), t)

    @classmethod
    def from_matrix(cls, M) -> "Pose":
        M = np.asarray(M, dtype=float)
        return cls(Rotation.from_matrix(M[:3, :3]), M[:3, 3])

    @classmethod
    def from_vector7(cls, v: Iterable[float]) -> "Pose":
        """From ``(x, y, z, qw, qx, qy, qz)``."""
        v = np.asarray(list(v), dtype=float)
        if v.shape != (7,):
            raise ValueError(f"pose vector must have 7 numbers, got {v.shape}")
        return cls(Rotation(v[3:]), v[:3])

    def to_vector7(self) -> np.ndarray:
        return np.concatenate([self.translation, self.rotation.quat])

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation.as_matrix()
        M[:3, 3] = self.translation
        return M

    def transform(self, points) -> np.ndarray:
        return self.rotation.apply(points) + self.translation

    def inverse(self) -> "Pose":
        rinv = self.rotation.inverse()
        return Pose(rinv, -rinv.apply(self.translation))

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.rotation * other.rotation, self.rotation.apply(other.translation) + self.translation)

    def isclose(self, other: "Pose", atol: float = 1e-12) -> bool:
        return self.rotation.isclose(other.rotation, atol) and bool(
            np.abs(self.translation - other.translation).max() <= atol
        )

    def __repr__(self) -> str:
        return (
            f"Pose(t={np.array2string(self.translation, precision=6)}, "
            f"q={np.array2string(self.rotation.quat, precision=6)})"
        )


# ---------------------------------------------------------------------------
# Group operations on Pose
# ---------------------------------------------------------------------------


def exp(xi) -> Pose:
    """SE(3) exponential of a twist ``(omega, v)``."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    if not np.all(np.isfinite(xi)):
        raise ValueError("twist must be finite")
    V = so3_left_jacobian(xi[:3])
    return Pose(Rotation.from_rotvec(xi[:3]), V @ xi[3:])


def log(T: Pose) -> np.ndarray:
    """Canonical twist with rotation angle in [0, pi]."""
    w = T.rotation.as_rotvec()
    return np.concatenate([w, so3_left_jacobian_inv(w) @ T.translation])


def compose(A: Pose, B: Pose) -> Pose:
    return A @ B


def inverse(A: Pose) -> Pose:
    return A.inverse()


def retract(T: Pose, delta) -> Pose:
    """Right perturbation ``T @ exp(delta)``."""
    return T @ exp(delta)


def between(A: Pose, B: Pose) -> Pose:
    """Relative transform ``A^-1 @ B``."""
    return A.inverse() @ B


def interpolate(T0: Pose, T1: Pose, alpha: float) -> Pose:
    """Geodesic interpolation ``T0 @ exp(alpha * log(T0^-1 @ T1))``.

    Only ``0 <= alpha <= 1`` is accepted; extrapolation is refused.
    """
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return T0
    if alpha == 1.0:
        return T1
    return T0 @ exp(alpha * log(between(T0, T1)))


def stack_poses(poses: Iterable[Pose]) -> tuple[np.ndarray, np.ndarray]:
    """Quaternions (N, 4) and translations (N, 3) of a pose sequence."""
    poses = list(poses)
    if not poses:
        return np.zeros((0, 4)), np.zeros((0, 3))
    return (
        np.array([p.rotation.quat for p in poses]),
        np.array([p.translation for p in poses]),
    )
