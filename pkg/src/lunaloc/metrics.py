"""Trajectory accuracy (ATE, RPE), rigid alignment and consistency (NEES)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import Pose, Rotation, log


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Timestamped poses, strictly increasing in time."""

    times: np.ndarray
    poses: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "poses", tuple(self.poses))
        if len(t) != len(self.poses):
            raise ValueError("times and poses differ in length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    def transformed(self, G: Pose) -> "Trajectory":
        return Trajectory(self.times, [G @ p for p in self.poses])


def associate(est: Trajectory, truth: Trajectory, max_gap: float) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-timestamp pairs ``(i_est, i_truth)`` no further apart than ``max_gap``."""
    if len(est) == 0 or len(truth) == 0:
        return np.zeros(0, int), np.zeros(0, int)
    j = np.searchsorted(truth.times, est.times)
    j = np.clip(j, 1, len(truth) - 1) if len(truth) > 1 else np.zeros_like(j)
    left = np.maximum(j - 1, 0)
    pick = np.where(np.abs(truth.times[left] - est.times) <= np.abs(truth.times[j] - est.times), left, j)
    ok = np.abs(truth.times[pick] - est.times) <= max_gap + 1e-12
    return np.flatnonzero(ok), pick[ok]


# Gap for scoring only estimate epochs that coincide with a truth sample.
COINCIDENT_GAP = 1e-6


def _pairs(est: Trajectory, truth: Trajectory, max_gap: Optional[float]) -> tuple[np.ndarray, np.ndarray]:
    if max_gap is None:
        dt = np.diff(truth.times)
        max_gap = 0.5 * float(np.median(dt)) if len(dt) else 0.0
    return associate(est, truth, max_gap)


def kabsch(src: np.ndarray, dst: np.ndarray) -> Pose:
    """Rigid transform ``G`` minimizing ``sum |G(src_k) - dst_k|^2``."""
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    Cov = (dst - mu_d).T @ (src - mu_s)
    U, _, Vt = np.linalg.svd(Cov)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    R = U @ D @ Vt
    return Pose(Rotation.from_matrix(R), mu_d - R @ mu_s)


def align(est: Trajectory, truth: Trajectory, max_gap: Optional[float] = None) -> Pose:
    """Rigid transform that maps the estimate onto the truth (no scale).

    For ``est = G o truth`` this returns ``G^-1``. Timestamps are associated
    by nearest neighbour within ``max_gap`` (default: half the truth step).
    """
    i, j = _pairs(est, truth, max_gap)
    if len(i) < 3:
        raise ValueError(f"alignment needs >= 3 associated pose pairs, got {len(i)}")
    return kabsch(est.positions[i], truth.positions[j])


def ate_rmse(est: Trajectory, truth: Trajectory, aligned: bool = False, max_gap: Optional[float] = None) -> float:
    """RMS translation error, optionally after rigid alignment."""
    i, j = _pairs(est, truth, max_gap)
    if len(i) == 0:
        raise ValueError("no associated pose pairs")
    p = est.positions[i]
    if aligned:
        if len(i) < 3:
            raise ValueError(f"alignment needs >= 3 associated pose pairs, got {len(i)}")
        G = kabsch(p, truth.positions[j])
        p = p @ G.rotation.as_matrix().T + G.translation
    return float(np.sqrt(np.mean(np.sum((p - truth.positions[j]) ** 2, axis=1))))


def rpe_rmse(est: Trajectory, truth: Trajectory, delta: int = 1, max_gap: Optional[float] = None) -> float:
    """RMS translation error of relative motions spanning ``delta`` associated poses."""
    i, j = _pairs(est, truth, max_gap)
    if len(i) <= delta:
        raise ValueError(f"need more than {delta} associated pose pairs")
    errs = []
    for a in range(len(i) - delta):
        rel_e = est.poses[i[a]].inverse() @ est.poses[i[a + delta]]
        rel_t = truth.poses[j[a]].inverse() @ truth.poses[j[a + delta]]
        errs.append(np.linalg.norm((rel_t.inverse() @ rel_e).translation))
    return float(np.sqrt(np.mean(np.square(errs))))


def final_position_error(est: Trajectory, truth: Trajectory, max_gap: Optional[float] = None) -> float:
    i, j = _pairs(est, truth, max_gap)
    if len(i) == 0:
        raise ValueError("no associated pose pairs")
    return float(np.linalg.norm(est.positions[i[-1]] - truth.positions[j[-1]]))


@dataclass(frozen=True)
class NeesResult:
    values: np.ndarray      # per state, NaN where the covariance was singular
    mean: float
    n_singular: int


def nees_value(error: np.ndarray, cov: np.ndarray) -> Optional[float]:
    """``e^T inv(cov) e``, or ``None`` when ``cov`` is not positive definite."""
    try:
        L = np.linalg.cholesky(0.5 * (cov + cov.T))
    except np.linalg.LinAlgError:
        return None
    z = np.linalg.solve(L, error)
    return float(z @ z)


def nees(estimates: Sequence[Pose], covariances: Sequence[np.ndarray], truths: Sequence[Pose]) -> NeesResult:
    """Per-pose NEES with ``e = log(est^-1 o truth)`` in the estimate's tangent (6 dof)."""
    vals = []
    singular = 0
    for T, C, Tt in zip(estimates, covariances, truths):
        v = nees_value(log(T.inverse() @ Tt), np.asarray(C, dtype=float))
        if v is None:
            singular += 1
            vals.append(np.nan)
        else:
            vals.append(v)
    vals = np.array(vals, dtype=float)
    good = vals[np.isfinite(vals)]
    return NeesResult(vals, float(good.mean()) if len(good) else float("nan"), singular)


def lander_errors(pose: Pose, scale: float, truth_pose: Pose, truth_scale: float) -> dict:
    d = truth_pose.inverse() @ pose
    return {
        "lander_trans_error": float(np.linalg.norm(pose.translation - truth_pose.translation)),
        "lander_rot_error": float(d.rotation.angle()),
        "lander_scale_error": float(abs(scale / truth_scale - 1.0)),
    }


@dataclass
class RunMetrics:
    """Metrics of one estimate against ground truth."""

    ate_rmse: float
    rpe_rmse: float
    nees_mean: float
    lander_pose_error: Optional[dict] = None
    lander_scale_error: Optional[float] = None
    final_error: Optional[float] = None
    mode: Optional[str] = None
    seeds: list = field(default_factory=list)
    wall_time: Optional[float] = None
    nees_singular: int = 0
    ate_abs: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)
