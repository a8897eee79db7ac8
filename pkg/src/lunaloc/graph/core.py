"""Graph containers: nodes, factors and the packed state used by the solver."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from ..geometry import Pose, quat_from_rotvec, quat_multiply, quat_normalize, quat_to_matrix, so3_left_jacobian


class NodeKind(str, enum.Enum):
    ROVER_POSE = "RoverPose"
    LANDMARK = "Landmark"
    LANDER_POSE = "LanderPose"
    LANDER_SCALE = "LanderScale"
    RANGE_BIAS = "RangeBias"

    @property
    def block(self) -> str:
        if self in (NodeKind.ROVER_POSE, NodeKind.LANDER_POSE):
            return "pose"
        if self is NodeKind.LANDMARK:
            return "point"
        return "scalar"

    @property
    def dof(self) -> int:
        return {"pose": 6, "point": 3, "scalar": 1}[self.block]


class FactorKind(str, enum.Enum):
    PRIOR_POSE = "PriorPose"
    PRIOR_SCALAR = "PriorScalar"
    RELATIVE_POSE = "RelativePose"
    PROJECTION = "Projection"
    RANGE = "Range"
    LANDER_POINT = "LanderPoint"
    BEARING_EXTENT = "BearingExtent"

    @property
    def dim(self) -> int:
        return RESIDUAL_DIM[self]


RESIDUAL_DIM = {
    FactorKind.PRIOR_POSE: 6,
    FactorKind.PRIOR_SCALAR: 1,
    FactorKind.RELATIVE_POSE: 6,
    FactorKind.PROJECTION: 2,
    FactorKind.RANGE: 1,
    FactorKind.LANDER_POINT: 3,
    FactorKind.BEARING_EXTENT: 3,
}


class GaugeUnderconstrained(np.linalg.LinAlgError):
    """Normal equations stay singular; ``null_dim`` counts the free directions."""

    def __init__(self, message: str, null_dim: int = 0):
        super().__init__(message)
        self.null_dim = null_dim


class InvalidFactor(ValueError):
    """A factor cannot be evaluated at the given states (e.g. point at zero depth)."""


@dataclass
class Node:
    id: str
    kind: NodeKind
    fixed: bool = False
    t: Optional[float] = None


@dataclass(frozen=True, eq=False)
class Factor:
    """One measurement constraint.

    ``sqrt_info`` whitens the raw error (``r = sqrt_info @ e``); diagonal
    noise is ``diag(1 / sigma)``. ``robust`` is the Huber threshold on the
    whitened residual norm, or ``None`` for a plain quadratic.
    """

    kind: FactorKind
    nodes: tuple
    measurement: Any
    sqrt_info: np.ndarray
    robust: Optional[float] = None
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return RESIDUAL_DIM[self.kind]


class FactorGraph:
    def __init__(self):
        self.nodes: dict[str, Node] = {}
        self.factors: list[Factor] = []
        self.info: dict[str, Any] = {}

    def add_node(self, node_id: str, kind: NodeKind, fixed: bool = False, t: Optional[float] = None) -> Node:
        if node_id in self.nodes:
            raise ValueError(f"duplicate node id {node_id!r}")
        node = Node(node_id, NodeKind(kind), fixed, t)
        self.nodes[node_id] = node
        return node

    def add_factor(self, factor: Factor) -> Factor:
        for nid in factor.nodes:
            if nid not in self.nodes:
                raise KeyError(f"factor {factor.kind.value} references unknown node {nid!r}")
        self.factors.append(factor)
        return factor

    def remove_factors(self, predicate) -> int:
        before = len(self.factors)
        self.factors = [f for f in self.factors if not predicate(f)]
        return before - len(self.factors)

    def nodes_of(self, kind: NodeKind) -> list[Node]:
        return [n for n in self.nodes.values() if n.kind is kind]

    def count(self, kind: FactorKind) -> int:
        return sum(f.kind is kind for f in self.factors)

    def __repr__(self) -> str:
        return f"FactorGraph({len(self.nodes)} nodes, {len(self.factors)} factors)"


class PackedState:
    """Node values packed into per-block arrays.

    Poses are unit quaternions plus translations; landmarks are 3-vectors;
    scalars hold the internal parameter (log-scale for ``LanderScale``).
    """

    def __init__(self, graph: FactorGraph, values: dict):
        self.index: dict[str, tuple[str, int]] = {}
        quats, trans, points, scalars = [], [], [], []
        self.kinds = {}
        for nid, node in graph.nodes.items():
            if nid not in values:
                raise KeyError(f"no initial value for node {nid!r}")
            v = values[nid]
            self.kinds[nid] = node.kind
            block = node.kind.block
            if block == "pose":
                if not isinstance(v, Pose):
                    raise TypeError(f"node {nid!r} needs a Pose value")
                self.index[nid] = ("pose", len(quats))
                quats.append(v.rotation.quat)
                trans.append(v.translation)
            elif block == "point":
                self.index[nid] = ("point", len(points))
                points.append(np.asarray(v, dtype=float).reshape(3))
            else:
                v = float(v)
                if node.kind is NodeKind.LANDER_SCALE:
                    if not v > 0:
                        raise ValueError(f"lander scale must be > 0, got {v}")
                    v = np.log(v)
                self.index[nid] = ("scalar", len(scalars))
                scalars.append(v)
        self.quat = np.array(quats, dtype=float).reshape(-1, 4)
        self.trans = np.array(trans, dtype=float).reshape(-1, 3)
        self.points = np.array(points, dtype=float).reshape(-1, 3)
        self.scalars = np.array(scalars, dtype=float).reshape(-1)
        self._R = None

    def copy(self) -> "PackedState":
        out = object.__new__(PackedState)
        out.index = self.index
        out.kinds = self.kinds
        out.quat = self.quat.copy()
        out.trans = self.trans.copy()
        out.points = self.points.copy()
        out.scalars = self.scalars.copy()
        out._R = None
        return out

    @property
    def R(self) -> np.ndarray:
        if self._R is None:
            self._R = quat_to_matrix(self.quat) if len(self.quat) else np.zeros((0, 3, 3))
        return self._R

    def retract(self, layout: "VariableLayout", delta: np.ndarray) -> "PackedState":
        out = self.copy()
        if len(layout.pose_rows):
            d = delta[layout.pose_cols[:, None] + np.arange(6)]
            rows = layout.pose_rows
            R = self.R[rows]
            V = so3_left_jacobian(d[:, :3])
            out.trans[rows] = self.trans[rows] + (R @ (V @ d[:, 3:, None]))[..., 0]
            out.quat[rows] = quat_normalize(quat_multiply(self.quat[rows], quat_from_rotvec(d[:, :3])))
        if len(layout.point_rows):
            out.points[layout.point_rows] += delta[layout.point_cols[:, None] + np.arange(3)]
        if len(layout.scalar_rows):
            out.scalars[layout.scalar_rows] += delta[layout.scalar_cols]
        return out

    def value(self, nid: str):
        block, i = self.index[nid]
        if block == "pose":
            return Pose(self.quat[i], self.trans[i])
        if block == "point":
            return self.points[i].copy()
        v = float(self.scalars[i])
        return float(np.exp(v)) if self.kinds[nid] is NodeKind.LANDER_SCALE else v

    def values(self) -> dict:
        return {nid: self.value(nid) for nid in self.index}


class VariableLayout:
    """Column offsets of the free (non-fixed) nodes in the linear system."""

    def __init__(self, graph: FactorGraph, state: PackedState):
        self.offset: dict[str, int] = {}
        col = 0
        pose_rows, pose_cols, point_rows, point_cols, scalar_rows, scalar_cols = [], [], [], [], [], []
        for nid, node in graph.nodes.items():
            if node.fixed:
                continue
            block, row = state.index[nid]
            self.offset[nid] = col
            if block == "pose":
                pose_rows.append(row)
                pose_cols.append(col)
            elif block == "point":
                point_rows.append(row)
                point_cols.append(col)
            else:
                scalar_rows.append(row)
                scalar_cols.append(col)
            col += node.kind.dof
        self.size = col
        self.pose_rows = np.array(pose_rows, int)
        self.pose_cols = np.array(pose_cols, int)
        self.point_rows = np.array(point_rows, int)
        self.point_cols = np.array(point_cols, int)
        self.scalar_rows = np.array(scalar_rows, int)
        self.scalar_cols = np.array(scalar_cols, int)

    def col(self, nid: str) -> int:
        return self.offset.get(nid, -1)
