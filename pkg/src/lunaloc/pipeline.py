"""Estimate a simulated mission under one mode and score it against truth."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import ScenarioConfig
from .geometry import Pose
from .graph import GraphSolution, SolverOptions, optimize
from .graph.builder import BuildOptions, Mode, build_graph
from .interp import calibrate_kappa, synthesize_stream
from .lander import LanderModel
from .metrics import COINCIDENT_GAP, RunMetrics, Trajectory, associate, ate_rmse, final_position_error, lander_errors, nees, rpe_rmse


@dataclass(frozen=True, eq=False)
class EstimateResult:
    mode: Mode
    trajectory: Trajectory
    node_ids: tuple
    solution: GraphSolution = field(repr=False)
    info: dict = field(repr=False)
    covariances: dict = field(repr=False, default_factory=dict)

    @property
    def lander_pose(self) -> Optional[Pose]:
        return self.solution.estimates.get("lander")

    @property
    def lander_scale(self) -> Optional[float]:
        return self.solution.estimates.get("scale")

    @property
    def bias(self) -> Optional[float]:
        return self.solution.estimates.get("bias")

    def rover_covariances(self) -> list:
        return [self.covariances.get(n) for n in self.node_ids]


def estimator_pixel_sigma(config: ScenarioConfig, options: Optional[BuildOptions] = None) -> float:
    opts = options or BuildOptions()
    return max(config.pixel_sigma, opts.floors.pixel)


def prepare_measurements(measurements: Sequence, config: ScenarioConfig, mode, n_virtual: int = 1,
                         kappa: Optional[float] = None, options: Optional[BuildOptions] = None) -> list:
    """Add virtual frames for FULL_INTERP when the stream has none.

    ``kappa=None`` calibrates the inflation against ground-truth interpolation
    error on held-out seeds (see :func:`calibrate_kappa`).
    """
    mode = Mode.parse(mode)
    if mode is not Mode.FULL_INTERP or any(getattr(r, "virtual", False) for r in measurements):
        return list(measurements)
    if kappa is None:
        kappa = calibrate_kappa(config, n_virtual, pixel_sigma=estimator_pixel_sigma(config, options))
    return synthesize_stream(measurements, n_virtual, kappa)


def run_estimator(measurements: Sequence, config: ScenarioConfig, mode="full", options: Optional[BuildOptions] = None,
                  solver_options: Optional[SolverOptions] = None, model: Optional[LanderModel] = None,
                  n_virtual: int = 1, kappa: Optional[float] = None, covariances: bool = True) -> EstimateResult:
    mode = Mode.parse(mode)
    stream = prepare_measurements(measurements, config, mode, n_virtual, kappa, options)
    graph, init = build_graph(stream, config, mode, options, model)
    sol = optimize(graph, init, solver_options)
    epochs = graph.info["epochs"]
    ids = tuple(n for _, n in epochs)
    traj = Trajectory(np.array([t for t, _ in epochs]), [sol.estimates[n] for n in ids])
    covs = {}
    if covariances and sol.converged:
        wanted = list(ids) + [k for k in ("lander", "scale", "bias") if k in graph.nodes]
        covs = sol.covariances(wanted)
        if "lander" in graph.nodes and "scale" in graph.nodes:
            covs["lander+scale"] = sol.joint_covariance(["lander", "scale"])
    return EstimateResult(mode, traj, ids, sol, dict(graph.info), covs)


def truth_trajectory(truth) -> Trajectory:
    return Trajectory(truth.times, truth.poses)


def evaluate(result, truth, rpe_delta: int = 1) -> RunMetrics:
    """Score one estimate (in memory or read back from disk) against truth.

    ``ate_rmse`` follows the usual definition (after rigid alignment); the
    unaligned value is kept as ``ate_abs``. Rover poses without a covariance
    are left out of the NEES mean and counted as singular.

    Only estimate epochs that coincide with a truth sample are scored. Virtual
    camera epochs sit between truth samples, and pairing them with the nearest
    sample would charge the estimator for the motion in between.
    """
    ref = truth_trajectory(truth)
    traj = result.trajectory
    gap = COINCIDENT_GAP
    ate = ate_rmse(traj, ref, aligned=True, max_gap=gap)
    ate_abs = ate_rmse(traj, ref, aligned=False, max_gap=gap)
    rpe = rpe_rmse(traj, ref, rpe_delta, max_gap=gap)
    final = final_position_error(traj, ref, max_gap=gap)
    nees_mean, n_sing = float("nan"), 0
    covs = result.rover_covariances()
    if any(c is not None for c in covs):
        i, j = associate(traj, ref, gap)
        have = [k for k in range(len(i)) if covs[i[k]] is not None]
        n_sing = len(i) - len(have)
        if have:
            nr = nees([traj.poses[i[k]] for k in have], [covs[i[k]] for k in have], [ref.poses[j[k]] for k in have])
            nees_mean, n_sing = nr.mean, n_sing + nr.n_singular
    lp, ls = None, None
    if result.lander_pose is not None:
        scale = result.lander_scale
        errs = lander_errors(result.lander_pose, scale if scale is not None else truth.lander_scale,
                             truth.lander_pose, truth.lander_scale)
        lp = {"trans": errs["lander_trans_error"], "rot": errs["lander_rot_error"]}
        if scale is not None:
            ls = errs["lander_scale_error"]
    mode = getattr(result.mode, "value", result.mode)
    return RunMetrics(ate, rpe, nees_mean, lp, ls, final, mode, nees_singular=n_sing, ate_abs=ate_abs)


def lander_nees(result: EstimateResult, truth) -> Optional[float]:
    """NEES of the lander pose (6 dof) against truth, or ``None`` if unavailable."""
    from .geometry import log
    from .metrics import nees_value

    if result.lander_pose is None or "lander" not in result.covariances:
        return None
    e = log(result.lander_pose.inverse() @ truth.lander_pose)
    return nees_value(e, result.covariances["lander"])


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0
