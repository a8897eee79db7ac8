"""The lander as an object-level landmark.

The lander's shape is a known unit-scale model; the free shape parameter is a
single global scale. Observations come either as depth points with known
model correspondences or as a segmentation mask summarized by its bearing
and angular extent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .geometry import Pose, Rotation

# Optical frame of the camera expressed in the rover body frame: optical +z
# looks along body +x (forward), optical +x along body -y (right), optical +y
# along body -z (down).
R_BODY_CAM = np.array(
    [
        [0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
    ]
)
R_CAM_BODY = R_BODY_CAM.T
CAMERA_MOUNT = Pose(Rotation.from_matrix(R_BODY_CAM), np.zeros(3))

MIN_DEPTH = 1e-6


class Underconstrained(ValueError):
    """The supplied observations cannot determine lander pose and scale."""


@dataclass(frozen=True, eq=False)
class LanderModel:
    model_points: np.ndarray
    hull_indices: np.ndarray
    extent: float

    def __post_init__(self):
        pts = np.array(self.model_points, dtype=float)
        hull = np.array(self.hull_indices, dtype=int)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 8:
            raise ValueError("lander model needs at least 8 three-dimensional points")
        if np.abs(pts.mean(axis=0)).max() > 1e-9:
            raise ValueError("lander model points must be centred on the lander-frame origin")
        sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
        if sv[-1] < 1e-6 * sv[0]:
            raise ValueError("lander model points are coplanar")
        if hull.ndim != 1 or len(hull) < 4 or hull.min() < 0 or hull.max() >= len(pts):
            raise ValueError("hull_indices must index at least 4 model points")
        pts.setflags(write=False)
        hull.setflags(write=False)
        object.__setattr__(self, "model_points", pts)
        object.__setattr__(self, "hull_indices", hull)
        object.__setattr__(self, "extent", float(self.extent))

    @property
    def hull_points(self) -> np.ndarray:
        return self.model_points[self.hull_indices]

    def to_dict(self) -> dict:
        return {
            "points": self.model_points.tolist(),
            "hull_indices": self.hull_indices.tolist(),
            "extent": self.extent,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LanderModel":
        return cls(np.asarray(d["points"], dtype=float), np.asarray(d["hull_indices"], dtype=int), d["extent"])

    @classmethod
    def load(cls, path) -> "LanderModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_lander_model() -> LanderModel:
    """2.0 x 2.0 x 1.5 m body on four splayed legs, 20 sample points.

    Points: 8 body corners, 4 leg tips, 4 side-face centres, top and bottom
    face centres, one edge midpoint and an antenna mast tip. The last two
    break the box symmetry.
    """
    hx, hy, hz = 1.0, 1.0, 0.75
    corners = [(sx * hx, sy * hy, sz * hz) for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
    legs = [(sx * 1.5, sy * 1.5, -1.35) for sx in (-1, 1) for sy in (-1, 1)]
    faces = [(hx, 0, 0), (-hx, 0, 0), (0, hy, 0), (0, -hy, 0), (0, 0, hz), (0, 0, -hz)]
    extras = [(hx, hy, 0.0), (0.4, -0.4, 1.3)]
    pts = np.array(corners + legs + faces + extras, dtype=float)
    pts -= pts.mean(axis=0)
    hull = np.array(list(range(8)) + list(range(8, 12)) + [19])
    hp = pts[hull]
    extent = float(np.max(np.linalg.norm(hp[:, None, :] - hp[None, :, :], axis=-1)))
    return LanderModel(pts, hull, extent)


def ground_height(model: LanderModel, scale: float = 1.0) -> float:
    """Lander-origin height that puts the lowest model point on z = 0."""
    return -scale * float(model.model_points[:, 2].min())


def to_camera(points_world: np.ndarray, rover_pose: Pose) -> np.ndarray:
    """World points into the optical frame of the camera mounted on the rover."""
    R = rover_pose.rotation.as_matrix()
    body = (np.asarray(points_world, dtype=float) - rover_pose.translation) @ R
    return body @ R_CAM_BODY.T


def lander_points_world(model_points: np.ndarray, lander_pose: Pose, scale: float) -> np.ndarray:
    return scale * lander_pose.rotation.apply(model_points) + lander_pose.translation


def predict_depth_points(model: Union[LanderModel, np.ndarray], lander_pose: Pose, scale: float,
                         rover_pose: Pose) -> np.ndarray:
    """Model points as seen in the camera frame: ``cam^-1 (s R_L p + t_L)``.

    ``rover_pose`` is the body pose of the camera carrier; the fixed camera
    mounting rotation is applied internally.
    """
    if not scale > 0:
        raise ValueError("scale must be > 0")
    pts = model.model_points if isinstance(model, LanderModel) else np.asarray(model, dtype=float)
    return to_camera(lander_points_world(pts, lander_pose, scale), rover_pose)


# ---------------------------------------------------------------------------
# mask geometry
# ---------------------------------------------------------------------------


def polygon_centroid(xy: np.ndarray) -> tuple[np.ndarray, float]:
    """Area centroid and signed area of a simple polygon given in order.

    Leading batch dimensions are allowed: ``xy`` has shape ``(..., n, 2)``.
    Repeated consecutive vertices are harmless, so ragged polygons can be
    padded by repeating their last vertex.
    """
    x, y = xy[..., 0], xy[..., 1]
    xn, yn = np.roll(x, -1, axis=-1), np.roll(y, -1, axis=-1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum(axis=-1)
    cx = ((x + xn) * cross).sum(axis=-1) / (6.0 * area)
    cy = ((y + yn) * cross).sum(axis=-1) / (6.0 * area)
    c = np.stack([cx, cy], axis=-1)
    return (c, float(area)) if np.ndim(area) == 0 else (c, area)


def polygon_centroid_jacobian(xy: np.ndarray) -> np.ndarray:
    """d(centroid)/d(vertex coords), shape ``(..., 2, n, 2)``."""
    x, y = xy[..., 0], xy[..., 1]
    roll = np.roll
    xn, yn = roll(x, -1, axis=-1), roll(y, -1, axis=-1)
    xp, yp = roll(x, 1, axis=-1), roll(y, 1, axis=-1)
    cross = x * yn - xn * y
    cross_p = roll(cross, 1, axis=-1)
    A = 0.5 * cross.sum(axis=-1)[..., None]
    Sx = ((x + xn) * cross).sum(axis=-1)[..., None]
    Sy = ((y + yn) * cross).sum(axis=-1)[..., None]
    dA_dx = 0.5 * (yn - yp)
    dA_dy = 0.5 * (xp - xn)
    dSx_dx = cross + cross_p + (x + xn) * yn - (xp + x) * yp
    dSx_dy = -(x + xn) * xn + (xp + x) * xp
    dSy_dx = (y + yn) * yn - (yp + y) * yp
    dSy_dy = cross + cross_p - (y + yn) * xn + (yp + y) * xp
    J = np.empty(x.shape[:-1] + (2, x.shape[-1], 2))
    J[..., 0, :, 0] = dSx_dx / (6 * A) - Sx * dA_dx / (6 * A * A)
    J[..., 0, :, 1] = dSx_dy / (6 * A) - Sx * dA_dy / (6 * A * A)
    J[..., 1, :, 0] = dSy_dx / (6 * A) - Sy * dA_dx / (6 * A * A)
    J[..., 1, :, 1] = dSy_dy / (6 * A) - Sy * dA_dy / (6 * A * A)
    return J


def convex_hull_order(xy: np.ndarray) -> np.ndarray:
    """Indices of the 2D convex hull, counter-clockwise."""
    return ConvexHull(xy).vertices


def ray_angle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.arctan2(np.linalg.norm(np.cross(a, b), axis=-1), np.sum(a * b, axis=-1))


def max_ray_angle(rays: np.ndarray) -> tuple[float, int, int]:
    """Largest angle between any two rays, with the indices of that pair."""
    n = len(rays)
    i, j = np.triu_indices(n, k=1)
    angles = ray_angle(rays[i], rays[j])
    k = int(np.argmax(angles))
    return float(angles[k]), int(i[k]), int(j[k])


def mask_summary(hull_cam: np.ndarray) -> Optional[tuple[np.ndarray, float, np.ndarray]]:
    """Bearing, angular extent and hull order for camera-frame hull points.

    The bearing points through the area centroid of the projected silhouette
    (computed on normalized image coordinates, which is equivalent to pixel
    coordinates because the intrinsics are affine). Returns ``None`` if any
    hull point is not in front of the camera.
    """
    if np.any(hull_cam[:, 2] <= MIN_DEPTH):
        return None
    xy = hull_cam[:, :2] / hull_cam[:, 2:3]
    try:
        order = convex_hull_order(xy)
    except QhullError:
        return None
    c, area = polygon_centroid(xy[order])
    if area <= 0:
        return None
    u = np.array([c[0], c[1], 1.0])
    bearing = u / np.linalg.norm(u)
    extent, _, _ = max_ray_angle(hull_cam)
    return bearing, extent, order


def tangent_basis(b: np.ndarray) -> np.ndarray:
    """Two orthonormal vectors spanning the plane perpendicular to ``b``."""
    b = b / np.linalg.norm(b)
    helper = np.array([1.0, 0.0, 0.0]) if abs(b[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(b, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(b, e1)
    return np.stack([e1, e2])


# ---------------------------------------------------------------------------
# observations and standalone estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DepthObservation:
    """Depth points of one frame, with the (known) rover pose that took them."""

    rover_pose: Pose
    model_point_ids: np.ndarray
    points: np.ndarray
    sigma: float = 0.02


@dataclass(frozen=True, eq=False)
class MaskObservation:
    rover_pose: Pose
    bearing: np.ndarray
    extent: float
    bearing_sigma: float = 0.003
    extent_sigma: float = 0.003

    def __post_init__(self):
        b = np.asarray(self.bearing, dtype=float)
        object.__setattr__(self, "bearing", b / np.linalg.norm(b))
        if not 0.0 < self.extent < np.pi:
            raise ValueError("extent must lie in (0, pi)")


LanderObservation = Union[DepthObservation, MaskObservation]


@dataclass(frozen=True, eq=False)
class LanderEstimate:
    pose: Pose
    scale: float
    covariance: np.ndarray = field(repr=False)
    cost: float = 0.0
    iterations: int = 0


def bearing_extent_residual(obs: MaskObservation, model: LanderModel, lander_pose: Pose, scale: float,
                            rover_pose: Optional[Pose] = None) -> np.ndarray:
    """Noise-normalized (2-dof bearing error, extent error) for one mask.

    ``rover_pose`` defaults to the pose stored on the observation.
    """
    from .graph.factors import bearing_extent, residual

    rover_pose = obs.rover_pose if rover_pose is None else rover_pose
    f = bearing_extent("rover", "lander", "scale", model.hull_points, obs.bearing, obs.extent,
                       obs.bearing_sigma, obs.extent_sigma)
    return residual(f, {"rover": rover_pose, "lander": lander_pose, "scale": scale})


def _check_observability(observations: Sequence[LanderObservation], model: LanderModel) -> None:
    depth = [o for o in observations if isinstance(o, DepthObservation)]
    masks = [o for o in observations if isinstance(o, MaskObservation)]
    ids = np.unique(np.concatenate([o.model_point_ids for o in depth])) if depth else np.array([], int)
    if len(ids) >= 4:
        pts = model.model_points[ids]
        sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
        if sv[-1] > 1e-6 * sv[0]:
            return
    viewpoints = {tuple(np.round(o.rover_pose.translation, 9)) for o in masks}
    if len(viewpoints) >= 3:
        return
    raise Underconstrained(
        f"need >= 4 depth points spanning 3D or >= 3 mask views from distinct poses "
        f"(got {len(ids)} distinct depth points, {len(viewpoints)} mask viewpoints)"
    )


def estimate_lander(observations: Sequence[LanderObservation], model: LanderModel, init_pose: Pose,
                    init_scale: float = 1.0, rotation_prior_sigma: Optional[float] = None,
                    fix_pose: bool = False, fix_scale: bool = False) -> LanderEstimate:
    """Jointly estimate lander pose and scale from observations at known rover poses.

    With mask observations only, the lander orientation is barely observable;
    pass ``rotation_prior_sigma`` to hold it near ``init_pose``.
    """
    from .graph import FactorGraph, NodeKind, optimize
    from .graph.factors import bearing_extent, lander_point, prior_pose

    _check_observability(observations, model)
    g = FactorGraph()
    g.add_node("lander", NodeKind.LANDER_POSE, fixed=fix_pose)
    g.add_node("scale", NodeKind.LANDER_SCALE, fixed=fix_scale)
    init = {"lander": init_pose, "scale": float(init_scale)}
    for k, obs in enumerate(observations):
        rid = f"x{k}"
        g.add_node(rid, NodeKind.ROVER_POSE, fixed=True)
        init[rid] = obs.rover_pose
        if isinstance(obs, DepthObservation):
            for pid, z in zip(obs.model_point_ids, obs.points):
                g.add_factor(lander_point(rid, "lander", "scale", model.model_points[pid], z, obs.sigma))
        else:
            g.add_factor(bearing_extent(rid, "lander", "scale", model.hull_points, obs.bearing, obs.extent,
                                        obs.bearing_sigma, obs.extent_sigma))
    if rotation_prior_sigma is not None:
        g.add_factor(prior_pose("lander", init_pose, np.r_[[rotation_prior_sigma] * 3, [1e6] * 3]))
    sol = optimize(g, init)
    keys = [k for k, fixed in (("lander", fix_pose), ("scale", fix_scale)) if not fixed]
    cov = sol.joint_covariance(keys) if keys else np.zeros((0, 0))
    return LanderEstimate(sol.estimates["lander"], float(sol.estimates["scale"]), cov, sol.cost, sol.iterations)
