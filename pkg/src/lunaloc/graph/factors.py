"""Factor constructors and their residual/Jacobian kernels.

All Jacobians are analytic and taken with respect to right perturbations of
pose nodes (``T @ exp(d)``, ``d = (omega, v)``), additive perturbations of
landmarks, and additive perturbations of the internal scalar parameter
(log-scale for ``LanderScale``).

Kernels are vectorized over every factor of one kind; the single-factor
``residual``/``jacobians`` functions reuse them with a batch of one.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import QhullError

from ..geometry import (Pose, se3_adjoint, se3_log_arrays, se3_right_jacobian_inv, skew)
from ..lander import (MIN_DEPTH, R_CAM_BODY, convex_hull_order, polygon_centroid,
                      polygon_centroid_jacobian, tangent_basis)
from .core import Factor, FactorGraph, FactorKind, InvalidFactor, NodeKind, PackedState, VariableLayout

HUBER_K = 1.345


def _sqrt_info(sigmas, dim: int) -> np.ndarray:
    s = np.broadcast_to(np.asarray(sigmas, dtype=float), (dim,))
    if np.any(s <= 0) or not np.all(np.isfinite(s)):
        raise ValueError(f"noise sigmas must be positive and finite, got {s}")
    return np.diag(1.0 / s)


def whitener_from_covariance(cov: np.ndarray) -> np.ndarray:
    """``L`` with ``L.T @ L = inv(cov)``."""
    info = np.linalg.inv(cov)
    info = 0.5 * (info + info.T)
    return np.linalg.cholesky(info).T


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------


def prior_pose(node: str, mean: Pose, sigmas=None, sqrt_info: Optional[np.ndarray] = None) -> Factor:
    """Residual ``log(mean^-1 @ T)``; sigmas ordered (rot x3, trans x3)."""
    L = sqrt_info if sqrt_info is not None else _sqrt_info(sigmas, 6)
    return Factor(FactorKind.PRIOR_POSE, (node,), mean, np.asarray(L, float))


def prior_scalar(node: str, mean: float, sigma: float) -> Factor:
    """Prior on the node's internal parameter (log-scale for LanderScale)."""
    return Factor(FactorKind.PRIOR_SCALAR, (node,), float(mean), _sqrt_info(sigma, 1))


def relative_pose(node_i: str, node_j: str, delta: Pose, sigmas=None,
                  sqrt_info: Optional[np.ndarray] = None) -> Factor:
    """Residual ``log(delta^-1 @ T_i^-1 @ T_j)``."""
    L = sqrt_info if sqrt_info is not None else _sqrt_info(sigmas, 6)
    return Factor(FactorKind.RELATIVE_POSE, (node_i, node_j), delta, np.asarray(L, float))


def projection(pose: str, landmark: str, uv, sigma: float, intrinsics, robust: Optional[float] = HUBER_K,
               **params) -> Factor:
    fx, fy, cx, cy = (float(v) for v in intrinsics)
    return Factor(FactorKind.PROJECTION, (pose, landmark), np.asarray(uv, float).reshape(2),
                  _sqrt_info(sigma, 2), robust, {"intrinsics": (fx, fy, cx, cy), **params})


def range_factor(pose: str, anchor: str, z: float, sigma: float, bias: Optional[str] = None,
                 rover_offset=(0.0, 0.0, 0.0), anchor_offset=(0.0, 0.0, 0.0),
                 robust: Optional[float] = HUBER_K) -> Factor:
    """``|tag - anchor| + bias - z``.

    The tag sits at ``rover_offset`` in the rover body frame. The anchor node is
    either a landmark (a point) or the lander pose, in which case the antenna is
    at ``anchor_offset`` in the lander frame.
    """
    nodes = (pose, anchor) if bias is None else (pose, anchor, bias)
    return Factor(FactorKind.RANGE, nodes, float(z), _sqrt_info(sigma, 1), robust,
                  {"rover_offset": np.asarray(rover_offset, float), "anchor_offset": np.asarray(anchor_offset, float)})


def lander_point(pose: str, lander: str, scale: str, model_point, z, sigma: float) -> Factor:
    return Factor(FactorKind.LANDER_POINT, (pose, lander, scale), np.asarray(z, float).reshape(3),
                  _sqrt_info(sigma, 3), None, {"model_point": np.asarray(model_point, float).reshape(3)})


def bearing_extent(pose: str, lander: str, scale: str, hull_points, bearing, extent: float,
                   bearing_sigma: float, extent_sigma: float) -> Factor:
    b = np.asarray(bearing, float).reshape(3)
    b = b / np.linalg.norm(b)
    L = _sqrt_info([bearing_sigma, bearing_sigma, extent_sigma], 3)
    return Factor(FactorKind.BEARING_EXTENT, (pose, lander, scale), (b, float(extent)), L, None,
                  {"hull_points": np.asarray(hull_points, float), "basis": tangent_basis(b)})


# ---------------------------------------------------------------------------
# compiled batches
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    kind: FactorKind
    factors: list
    slots: list          # per slot: block-row indices into the packed arrays, (M,)
    slot_nodes: list     # per slot: node ids, (M,)
    slot_kinds: tuple
    data: dict
    L: np.ndarray        # (M, d, d)
    robust: np.ndarray   # (M,), inf when quadratic

    @property
    def size(self) -> int:
        return len(self.factors)


def compile_batches(graph: FactorGraph, state: PackedState, factors: Optional[Sequence[Factor]] = None) -> list:
    groups = defaultdict(list)
    for f in graph.factors if factors is None else factors:
        sig = (f.kind, tuple(graph.nodes[n].kind.block for n in f.nodes))
        groups[sig].append(f)
    batches = []
    for (kind, blocks), fs in groups.items():
        slots = [np.array([state.index[f.nodes[s]][1] for f in fs], int) for s in range(len(blocks))]
        slot_nodes = [[f.nodes[s] for f in fs] for s in range(len(blocks))]
        data = _pack_data(kind, fs)
        L = np.stack([f.sqrt_info for f in fs])
        robust = np.array([np.inf if f.robust is None else f.robust for f in fs])
        batches.append(Batch(kind, fs, slots, slot_nodes, blocks, data, L, robust))
    return batches


def _pack_data(kind: FactorKind, fs: list) -> dict:
    if kind in (FactorKind.PRIOR_POSE, FactorKind.RELATIVE_POSE):
        return {"R": np.stack([f.measurement.rotation.as_matrix() for f in fs]),
                "t": np.stack([f.measurement.translation for f in fs])}
    if kind is FactorKind.PRIOR_SCALAR:
        return {"z": np.array([f.measurement for f in fs])}
    if kind is FactorKind.PROJECTION:
        return {"uv": np.stack([f.measurement for f in fs]),
                "K": np.array([f.params["intrinsics"] for f in fs])}
    if kind is FactorKind.RANGE:
        return {"z": np.array([f.measurement for f in fs]),
                "o": np.stack([f.params["rover_offset"] for f in fs]),
                "oa": np.stack([f.params["anchor_offset"] for f in fs])}
    if kind is FactorKind.LANDER_POINT:
        return {"z": np.stack([f.measurement for f in fs]), "p": np.stack([f.params["model_point"] for f in fs])}
    if kind is FactorKind.BEARING_EXTENT:
        n = max(len(f.params["hull_points"]) for f in fs)
        hull = np.stack([np.concatenate([f.params["hull_points"],
                                         np.repeat(f.params["hull_points"][-1:], n - len(f.params["hull_points"]),
                                                   axis=0)]) for f in fs])
        return {"hull": hull, "basis": np.stack([f.params["basis"] for f in fs]),
                "extent": np.array([f.measurement[1] for f in fs])}
    return {}


# ---------------------------------------------------------------------------
# kernels: return raw error (M, d), Jacobians per slot (M, d, dof), validity (M,)
# ---------------------------------------------------------------------------


def _k_prior_pose(S: PackedState, b: Batch):
    i = b.slots[0]
    RZ, tZ = b.data["R"], b.data["t"]
    RE = np.swapaxes(RZ, -1, -2) @ S.R[i]
    tE = (np.swapaxes(RZ, -1, -2) @ (S.trans[i] - tZ)[..., None])[..., 0]
    e = se3_log_arrays(RE, tE)
    return e, [se3_right_jacobian_inv(e)], np.ones(b.size, bool)


def _k_prior_scalar(S: PackedState, b: Batch):
    e = (S.scalars[b.slots[0]] - b.data["z"])[:, None]
    return e, [np.ones((b.size, 1, 1))], np.ones(b.size, bool)


def _k_relative_pose(S: PackedState, b: Batch):
    i, j = b.slots
    Ri, Rj, ti, tj = S.R[i], S.R[j], S.trans[i], S.trans[j]
    RiT = np.swapaxes(Ri, -1, -2)
    Rij = RiT @ Rj
    tij = (RiT @ (tj - ti)[..., None])[..., 0]
    RZT = np.swapaxes(b.data["R"], 1, 2)
    RE = RZT @ Rij
    tE = (RZT @ (tij - b.data["t"])[..., None])[..., 0]
    e = se3_log_arrays(RE, tE)
    Jinv = se3_right_jacobian_inv(e)
    RijT = np.swapaxes(Rij, -1, -2)
    Ad = se3_adjoint(RijT, -(RijT @ tij[..., None])[..., 0])
    return e, [-Jinv @ Ad, Jinv], np.ones(b.size, bool)


def _pose_point_chain(R, t, w):
    """Camera-frame point for world point(s) ``w`` seen from body pose (R, t).

    Returns pc (M,3), d pc / d pose (M,3,6), and ``R_CAM_BODY @ R^T`` (M,3,3),
    which is d pc / d w.
    """
    RT = np.swapaxes(R, -1, -2)
    pb = (RT @ (w - t)[..., None])[..., 0]
    pc = pb @ R_CAM_BODY.T
    Jp = np.empty(pb.shape[:-1] + (3, 6))
    Jp[..., :3] = R_CAM_BODY @ skew(pb)
    Jp[..., 3:] = -R_CAM_BODY
    return pc, Jp, R_CAM_BODY @ RT


def _k_projection(S: PackedState, b: Batch):
    i, l = b.slots
    pc, Jpose, dw = _pose_point_chain(S.R[i], S.trans[i], S.points[l])
    K = b.data["K"]
    fx, fy, cx, cy = K[:, 0], K[:, 1], K[:, 2], K[:, 3]
    Z = pc[:, 2]
    valid = Z > MIN_DEPTH
    Zs = np.where(valid, Z, 1.0)
    uv = np.stack([fx * pc[:, 0] / Zs + cx, fy * pc[:, 1] / Zs + cy], axis=1)
    e = uv - b.data["uv"]
    D = np.zeros((b.size, 2, 3))
    D[:, 0, 0] = fx / Zs
    D[:, 0, 2] = -fx * pc[:, 0] / Zs**2
    D[:, 1, 1] = fy / Zs
    D[:, 1, 2] = -fy * pc[:, 1] / Zs**2
    return e, [D @ Jpose, D @ dw], valid


def _k_range(S: PackedState, b: Batch):
    i, a = b.slots[0], b.slots[1]
    R, t = S.R[i], S.trans[i]
    o = b.data["o"]
    tag = t + (R @ o[..., None])[..., 0]
    pose_anchor = b.slot_kinds[1] == "pose"
    if pose_anchor:
        RL = S.R[a]
        oa = b.data["oa"]
        anchor = S.trans[a] + (RL @ oa[..., None])[..., 0]
    else:
        anchor = S.points[a]
    d = tag - anchor
    rho = np.linalg.norm(d, axis=1)
    valid = rho > 1e-12
    u = d / np.where(valid, rho, 1.0)[:, None]
    bias = S.scalars[b.slots[2]] if len(b.slots) > 2 else 0.0
    e = (rho + bias - b.data["z"])[:, None]
    Jr = np.empty((b.size, 1, 6))
    Jr[:, 0, :3] = -(u[:, None, :] @ R @ skew(o))[:, 0]
    Jr[:, 0, 3:] = (u[:, None, :] @ R)[:, 0]
    jacs = [Jr]
    if pose_anchor:
        Ja = np.empty((b.size, 1, 6))
        Ja[:, 0, :3] = (u[:, None, :] @ RL @ skew(oa))[:, 0]
        Ja[:, 0, 3:] = -(u[:, None, :] @ RL)[:, 0]
        jacs.append(Ja)
    else:
        jacs.append(-u[:, None, :])
    if len(b.slots) > 2:
        jacs.append(np.ones((b.size, 1, 1)))
    return e, jacs, valid


def _lander_chain(R, t, RL, tL, logs, p):
    """Camera-frame model point ``p`` and its Jacobians (rover, lander, log-scale)."""
    s = np.exp(logs)
    Rp = (RL @ p[..., None])[..., 0]
    w = s[..., None] * Rp + tL
    pc, Jpose, dw = _pose_point_chain(R, t, w)
    Jl = np.empty(pc.shape[:-1] + (3, 6))
    Jl[..., :3] = -s[..., None, None] * (dw @ RL @ skew(p))
    Jl[..., 3:] = dw @ RL
    Js = (dw @ (s[..., None] * Rp)[..., None])
    return pc, Jpose, Jl, Js


def _k_lander_point(S: PackedState, b: Batch):
    i, l, s = b.slots
    pc, Jp, Jl, Js = _lander_chain(S.R[i], S.trans[i], S.R[l], S.trans[l], S.scalars[s], b.data["p"])
    return pc - b.data["z"], [Jp, Jl, Js], np.ones(b.size, bool)


def _k_bearing_extent(S: PackedState, b: Batch):
    """Silhouette-centroid bearing and widest-pair extent, batched over factors.

    The convex hull order is the only per-factor step; hulls of different
    sizes are padded by repeating their last vertex.
    """
    i, l, s = b.slots
    hull = b.data["hull"]                      # (M, n, 3)
    M, n = hull.shape[:2]
    bcast = lambda a: np.broadcast_to(a[:, None], (M, n) + a.shape[1:])
    pc, Jp, Jl, Js = _lander_chain(bcast(S.R[i]), bcast(S.trans[i]), bcast(S.R[l]), bcast(S.trans[l]),
                                   bcast(S.scalars[s]), hull)
    Jstate = np.concatenate([Jp, Jl, Js], axis=-1)  # (M, n, 3, 13)
    Z = pc[..., 2]
    valid = np.all(Z > MIN_DEPTH, axis=1)
    Zs = np.where(Z > MIN_DEPTH, Z, 1.0)
    xy = pc[..., :2] / Zs[..., None]
    dxy = np.zeros((M, n, 2, 3))
    dxy[..., 0, 0] = 1.0 / Zs
    dxy[..., 0, 2] = -pc[..., 0] / Zs**2
    dxy[..., 1, 1] = 1.0 / Zs
    dxy[..., 1, 2] = -pc[..., 1] / Zs**2
    dxy_state = dxy @ Jstate                   # (M, n, 2, 13)

    order = np.zeros((M, n), int)
    for m in range(M):
        if not valid[m]:
            continue
        try:
            o = convex_hull_order(xy[m])
        except QhullError:
            valid[m] = False
            continue
        order[m, :len(o)] = o
        order[m, len(o):] = o[-1]
    rows = np.arange(M)[:, None]
    poly = xy[rows, order]
    C, area = polygon_centroid(poly)
    valid &= area > 0
    area = np.where(valid, area, 1.0)
    poly = np.where(valid[:, None, None], poly, np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])[np.arange(n) % 3])
    C, _ = polygon_centroid(poly)
    dC = polygon_centroid_jacobian(poly)        # (M, 2, n, 2)
    dC_dstate = np.einsum("makb,mkbs->mas", dC, dxy_state[rows, order])

    u = np.concatenate([C, np.ones((M, 1))], axis=1)
    nu = np.linalg.norm(u, axis=1)
    bpred = u / nu[:, None]
    db_du = (np.eye(3) - bpred[:, :, None] * bpred[:, None, :]) / nu[:, None, None]
    basis = b.data["basis"]                    # (M, 2, 3)
    eb = (basis @ bpred[..., None])[..., 0]
    Jb = basis @ db_du[:, :, :2] @ dC_dstate

    iu, ju = np.triu_indices(n, k=1)
    A, B = pc[:, iu], pc[:, ju]
    ang = np.arctan2(np.linalg.norm(np.cross(A, B), axis=-1), np.sum(A * B, axis=-1))
    k = np.argmax(ang, axis=1)
    r = np.arange(M)
    a_, c_ = A[r, k], B[r, k]
    na, nc = np.linalg.norm(a_, axis=1), np.linalg.norm(c_, axis=1)
    ah, ch = a_ / na[:, None], c_ / nc[:, None]
    cos = np.sum(ah * ch, axis=1)
    sin = np.maximum(np.linalg.norm(np.cross(ah, ch), axis=1), 1e-300)
    ga = -(ch - cos[:, None] * ah) / (na * sin)[:, None]
    gc = -(ah - cos[:, None] * ch) / (nc * sin)[:, None]
    Je = (ga[:, None, :] @ Jstate[r, iu[k]])[:, 0] + (gc[:, None, :] @ Jstate[r, ju[k]])[:, 0]

    e = np.concatenate([eb, (ang[r, k] - b.data["extent"])[:, None]], axis=1)
    J = np.concatenate([Jb, Je[:, None, :]], axis=1)
    e[~valid] = 0.0
    J[~valid] = 0.0
    return e, [J[..., :6], J[..., 6:12], J[..., 12:]], valid


KERNELS = {
    FactorKind.PRIOR_POSE: _k_prior_pose,
    FactorKind.PRIOR_SCALAR: _k_prior_scalar,
    FactorKind.RELATIVE_POSE: _k_relative_pose,
    FactorKind.PROJECTION: _k_projection,
    FactorKind.RANGE: _k_range,
    FactorKind.LANDER_POINT: _k_lander_point,
    FactorKind.BEARING_EXTENT: _k_bearing_extent,
}


def evaluate_batch(S: PackedState, b: Batch, whiten: bool = True):
    """Whitened residuals (M, d), whitened Jacobians per slot, validity mask.

    With ``whiten=False`` the raw errors and Jacobians are returned instead.
    """
    e, jacs, valid = KERNELS[b.kind](S, b)
    if whiten:
        r = (b.L @ e[..., None])[..., 0]
        wj = [b.L @ J for J in jacs]
    else:
        r, wj = e.copy(), [J.copy() for J in jacs]
    bad = ~np.all(np.isfinite(r), axis=1)
    if bad.any():
        valid = valid & ~bad
    r[~valid] = 0.0
    for J in wj:
        J[~valid] = 0.0
    return r, wj, valid


# ---------------------------------------------------------------------------
# single-factor API
# ---------------------------------------------------------------------------


def _single(f: Factor, states: dict):
    kinds = {}
    values = {}
    for n in f.nodes:
        v = states[n]
        if isinstance(v, Pose):
            # landmark vs lander pose only matters for block layout
            kinds[n] = NodeKind.LANDER_POSE
        elif np.ndim(v) == 1 and np.size(v) == 3:
            kinds[n] = NodeKind.LANDMARK
        else:
            kinds[n] = NodeKind.LANDER_SCALE if f.kind in (FactorKind.LANDER_POINT, FactorKind.BEARING_EXTENT) \
                and n == f.nodes[2] else NodeKind.RANGE_BIAS
        values[n] = v
    g = FactorGraph()
    for n in f.nodes:
        g.add_node(n, kinds[n])
    g.add_factor(f)
    S = PackedState(g, values)
    return g, S, compile_batches(g, S)[0]


def residual(f: Factor, states: dict) -> np.ndarray:
    """Noise-normalized residual of one factor.

    ``states`` maps node ids to values (``Pose``, 3-vector, or float). A
    ``LanderScale`` value is the scale itself, not its logarithm.
    """
    _, S, b = _single(f, states)
    r, _, valid = evaluate_batch(S, b)
    if not valid[0]:
        raise InvalidFactor(f"{f.kind.value} factor cannot be evaluated at these states")
    return r[0]


def jacobians(f: Factor, states: dict) -> dict:
    """Whitened Jacobian block per node id (residual dim x node dof)."""
    _, S, b = _single(f, states)
    _, wj, valid = evaluate_batch(S, b)
    if not valid[0]:
        raise InvalidFactor(f"{f.kind.value} factor cannot be evaluated at these states")
    return {n: wj[k][0] for k, n in enumerate(f.nodes)}


def numerical_jacobians(f: Factor, states: dict, step: float = 1e-6) -> dict:
    """Central differences in the same tangent conventions as ``jacobians``."""
    g, S, b = _single(f, states)
    layout = VariableLayout(g, S)
    out = {}
    for n in f.nodes:
        c0 = layout.col(n)
        dof = g.nodes[n].kind.dof
        J = np.zeros((f.dim, dof))
        for k in range(dof):
            d = np.zeros(layout.size)
            d[c0 + k] = step
            rp, _, vp = evaluate_batch(S.retract(layout, d), b)
            rm, _, vm = evaluate_batch(S.retract(layout, -d), b)
            if not (vp[0] and vm[0]):
                raise InvalidFactor("finite-difference probe left the factor's valid region")
            J[:, k] = (rp[0] - rm[0]) / (2 * step)
        out[n] = J
    return out


def check_jacobians(f: Factor, states: dict, step: float = 1e-6) -> float:
    """Largest relative error between analytic and finite-difference blocks."""
    Ja = jacobians(f, states)
    Jn = numerical_jacobians(f, states, step)
    worst = 0.0
    for n in f.nodes:
        scale = max(np.linalg.norm(Ja[n]), np.linalg.norm(Jn[n]), 1e-12)
        worst = max(worst, float(np.linalg.norm(Ja[n] - Jn[n]) / scale))
    return worst
