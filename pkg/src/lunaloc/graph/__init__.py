"""Factor-graph estimator: node and factor types, kernels, LM solver and graph builder."""

from .core import (Factor, FactorGraph, FactorKind, GaugeUnderconstrained, InvalidFactor, Node, NodeKind,
                   PackedState, VariableLayout)
from .factors import (HUBER_K, bearing_extent, check_jacobians, jacobians, lander_point, numerical_jacobians,
                      prior_pose, prior_scalar, projection, range_factor, relative_pose, residual)
from .solver import (GraphSolution, NotConverged, SolverOptions, huber_cost, huber_weights, marginal_covariance,
                     optimize)

__all__ = [
    "Factor", "FactorGraph", "FactorKind", "GaugeUnderconstrained", "InvalidFactor", "Node", "NodeKind",
    "PackedState", "VariableLayout", "HUBER_K", "bearing_extent", "check_jacobians", "jacobians", "lander_point",
    "numerical_jacobians", "prior_pose", "prior_scalar", "projection", "range_factor", "relative_pose", "residual",
    "GraphSolution", "NotConverged", "SolverOptions", "huber_cost", "huber_weights", "marginal_covariance",
    "optimize",
]
