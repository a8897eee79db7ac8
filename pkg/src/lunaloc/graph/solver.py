"""Levenberg-Marquardt with iteratively reweighted Huber kernels."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from threadpoolctl import threadpool_limits

from .core import FactorGraph, FactorKind, GaugeUnderconstrained, NodeKind, PackedState, VariableLayout
from .factors import compile_batches, evaluate_batch

log = logging.getLogger(__name__)

DENSE_DOF_LIMIT = 2000


class NotConverged(RuntimeError):
    """Covariance requested from a solution whose optimizer did not converge."""


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 100
    lambda0: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    lambda_max: float = 1e12
    cost_tol: float = 1e-9
    cost_rtol: float = 1e-6     # relative decrease; weakly observed directions otherwise crawl
    step_tol: float = 1e-8
    robust: bool = True
    check_rank: bool = True


def huber_weights(norms: np.ndarray, k: np.ndarray) -> np.ndarray:
    """IRLS weights: 1 inside the threshold, ``k / |r|`` beyond it."""
    norms = np.asarray(norms, dtype=float)
    k = np.broadcast_to(np.asarray(k, dtype=float), norms.shape)
    big = norms > k
    return np.divide(k, norms, out=np.ones_like(norms), where=big)


def huber_cost(norms: np.ndarray, k: np.ndarray) -> np.ndarray:
    norms = np.asarray(norms, dtype=float)
    k = np.broadcast_to(np.asarray(k, dtype=float), norms.shape)
    out = 0.5 * norms**2
    big = norms > k
    out[big] = k[big] * norms[big] - 0.5 * k[big] ** 2
    return out


@dataclass
class _Linearization:
    cost: float
    n_invalid: int
    J: Optional[sp.csr_matrix]
    r: Optional[np.ndarray]


class _Problem:
    def __init__(self, graph: FactorGraph, state: PackedState, opts: SolverOptions):
        self.graph = graph
        self.opts = opts
        self.layout = VariableLayout(graph, state)
        self.batches = compile_batches(graph, state)
        for b in self.batches:
            b.cols = [np.array([self.layout.col(n) for n in nodes], int) for nodes in b.slot_nodes]
            if not opts.robust:
                b.robust = np.full(b.size, np.inf)

    def evaluate(self, S: PackedState, with_jacobian: bool, whiten: bool = True) -> _Linearization:
        cost = 0.0
        n_invalid = 0
        rows, cols, vals, rvec = [], [], [], []
        row0 = 0
        for b in self.batches:
            r, wj, valid = evaluate_batch(S, b, whiten)
            n_invalid += int(np.count_nonzero(~valid))
            norms = np.linalg.norm(r, axis=1)
            cost += float(huber_cost(norms, b.robust)[valid].sum())
            if not with_jacobian:
                continue
            sw = np.sqrt(huber_weights(norms, b.robust))
            sw[~valid] = 0.0
            M, d = r.shape
            rvec.append((sw[:, None] * r).ravel())
            base = row0 + np.arange(M)[:, None] * d + np.arange(d)  # (M, d)
            for J, c in zip(wj, b.cols):
                dof = J.shape[2]
                keep = c >= 0
                if not keep.any():
                    continue
                Jk = J[keep] * sw[keep, None, None]
                rr = np.broadcast_to(base[keep][:, :, None], Jk.shape)
                cc = np.broadcast_to((c[keep][:, None] + np.arange(dof))[:, None, :], Jk.shape)
                rows.append(rr.ravel())
                cols.append(cc.ravel())
                vals.append(Jk.ravel())
            row0 += M * d
        if not with_jacobian:
            return _Linearization(cost, n_invalid, None, None)
        n = self.layout.size
        if rows:
            J = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(row0, n))
        else:
            J = sp.csr_matrix((row0, n))
        r = np.concatenate(rvec) if rvec else np.zeros(0)
        return _Linearization(cost, n_invalid, J, r)


def _null_dim(H: np.ndarray) -> int:
    """Near-null directions of ``H`` after Jacobi scaling."""
    d = np.diag(H).copy()
    zero = d <= 0
    s = np.where(zero, 1.0, 1.0 / np.sqrt(np.where(zero, 1.0, d)))
    Hs = H * s[:, None] * s[None, :]
    Hs[zero, :] = 0.0
    Hs[:, zero] = 0.0
    ev = np.linalg.eigvalsh(Hs)
    return int(np.count_nonzero(ev < 1e-10 * max(ev.max(), 1.0)))


class _Factorization:
    """Cholesky (dense) or LU (sparse) of the normal matrix, for solves and covariances."""

    def __init__(self, H):
        self.dense = not sp.issparse(H)
        if self.dense:
            self.cho = scipy.linalg.cho_factor(H, lower=True, check_finite=False)
        else:
            self.lu = spla.splu(sp.csc_matrix(H), permc_spec="MMD_AT_PLUS_A")
            if not np.all(np.isfinite(self.lu.U.diagonal())) or np.any(self.lu.U.diagonal() == 0):
                raise np.linalg.LinAlgError("singular sparse factor")

    def solve(self, b: np.ndarray) -> np.ndarray:
        with threadpool_limits(limits=1):
            if self.dense:
                return scipy.linalg.cho_solve(self.cho, b, check_finite=False)
            return self.lu.solve(b)


def _normal_matrix(J: sp.csr_matrix, dense: bool):
    H = (J.T @ J).tocsc()
    return H.toarray() if dense else H


def _damped(H, lam: float):
    """``H + lam * I``.

    The system is already whitened, so an identity damping is unit-consistent.
    Scaling by ``diag(H)`` instead would swamp weakly observed directions
    (e.g. the prior-fixed gauge) whenever some sensor has a tiny sigma.
    """
    if sp.issparse(H):
        return (H + lam * sp.identity(H.shape[0], format="csc")).tocsc()
    out = H.copy()
    out[np.diag_indices_from(out)] += lam
    return out


@dataclass(frozen=True, eq=False)
class GraphSolution:
    """Optimizer result. Estimates use the public value types (scale, not log-scale)."""

    estimates: dict
    cost: float
    iterations: int
    converged: bool
    cost_history: tuple
    n_invalid: int
    graph: FactorGraph = field(repr=False)
    _state: PackedState = field(repr=False)
    _layout: VariableLayout = field(repr=False)
    _factor: Optional[_Factorization] = field(repr=False, default=None)
    _cache: dict = field(repr=False, default_factory=dict)

    def _require(self):
        if not self.converged:
            raise NotConverged("optimizer did not converge; covariance is undefined")
        if self._factor is None:
            raise NotConverged("no information matrix available")

    def _columns(self, keys: Sequence[str]) -> np.ndarray:
        cols = []
        for k in keys:
            c0 = self._layout.col(k)
            if c0 < 0:
                raise KeyError(f"node {k!r} is fixed or unknown; it has no covariance")
            cols.extend(range(c0, c0 + self.graph.nodes[k].kind.dof))
        return np.array(cols, int)

    def joint_covariance(self, keys: Sequence[str]) -> np.ndarray:
        """Joint marginal covariance of several nodes, in their local tangents."""
        self._require()
        cols = self._columns(keys)
        E = np.zeros((self._layout.size, len(cols)))
        E[cols, np.arange(len(cols))] = 1.0
        X = self._factor.solve(E)
        return _psd(X[cols])

    def covariance(self, node_id: str) -> np.ndarray:
        if node_id not in self._cache:
            self._cache[node_id] = self.joint_covariance([node_id])
        return self._cache[node_id]

    def covariances(self, node_ids: Optional[Sequence[str]] = None, chunk: int = 256) -> dict:
        """Marginal blocks for many nodes, solving in column chunks."""
        self._require()
        ids = [n for n in (node_ids if node_ids is not None else self._layout.offset) if self._layout.col(n) >= 0]
        out = {}
        for s in range(0, len(ids), chunk):
            part = ids[s:s + chunk]
            cols = self._columns(part)
            E = np.zeros((self._layout.size, len(cols)))
            E[cols, np.arange(len(cols))] = 1.0
            X = self._factor.solve(E)
            k = 0
            for n in part:
                dof = self.graph.nodes[n].kind.dof
                blk = cols[k:k + dof]
                out[n] = _psd(X[blk][:, k:k + dof])
                k += dof
        self._cache.update(out)
        return out


def _psd(C: np.ndarray) -> np.ndarray:
    C = 0.5 * (C + C.T)
    w, V = np.linalg.eigh(C)
    if w.min() >= 0:
        return C
    return (V * np.maximum(w, 0.0)) @ V.T


def marginal_covariance(solution: GraphSolution, node_id: str) -> np.ndarray:
    """Covariance block of one node (local tangent at the estimate)."""
    return solution.covariance(node_id)


def check_graph(graph: FactorGraph) -> None:
    """Reachability and gauge preconditions of ``optimize``."""
    touched = set()
    for f in graph.factors:
        touched.update(f.nodes)
    orphans = [nid for nid, n in graph.nodes.items() if not n.fixed and nid not in touched]
    if orphans:
        raise GaugeUnderconstrained(
            f"{len(orphans)} node(s) not constrained by any factor: {orphans[:5]}",
            sum(graph.nodes[n].kind.dof for n in orphans))
    has_prior = any(f.kind is FactorKind.PRIOR_POSE for f in graph.factors)
    has_fixed_pose = any(n.fixed and n.kind.block == "pose" for n in graph.nodes.values())
    has_pose = any(n.kind.block == "pose" for n in graph.nodes.values())
    if has_pose and not (has_prior or has_fixed_pose):
        raise GaugeUnderconstrained("no PriorPose or fixed pose fixes the gauge", 6)


def optimize(graph: FactorGraph, initial: dict, options: Optional[SolverOptions] = None, **overrides) -> GraphSolution:
    """Minimize the robust cost of ``graph`` starting from ``initial``.

    ``overrides`` replace individual :class:`SolverOptions` fields. BLAS runs
    single-threaded inside the solver so results are bit-identical whatever
    the host's thread settings.
    """
    with threadpool_limits(limits=1):
        return _optimize(graph, initial, options, **overrides)


def _optimize(graph: FactorGraph, initial: dict, options: Optional[SolverOptions] = None,
              **overrides) -> GraphSolution:
    opts = options or SolverOptions()
    if overrides:
        opts = SolverOptions(**{**opts.__dict__, **overrides})
    check_graph(graph)
    S = PackedState(graph, initial)
    prob = _Problem(graph, S, opts)
    n = prob.layout.size
    dense = n < DENSE_DOF_LIMIT

    lin = prob.evaluate(S, True)
    history = [lin.cost]
    lam = opts.lambda0
    converged = False
    it = 0
    if n == 0:
        converged = True
    rank_checked = not opts.check_rank
    H = g = None
    while n and it < opts.max_iter:
        it += 1
        H = _normal_matrix(lin.J, dense)
        g = lin.J.T @ lin.r
        if not rank_checked:
            rank_checked = True
            nd = _structural_null_dim(prob, S, n)
            if nd:
                raise GaugeUnderconstrained(f"normal equations are singular: {nd} unconstrained direction(s)", nd)
        accepted = False
        while lam <= opts.lambda_max:
            try:
                delta = -_Factorization(_damped(H, lam)).solve(g)
            except (np.linalg.LinAlgError, RuntimeError):
                lam *= opts.lambda_up
                continue
            if not np.all(np.isfinite(delta)):
                lam *= opts.lambda_up
                continue
            step = float(np.linalg.norm(delta))
            S_new = S.retract(prob.layout, delta)
            trial = prob.evaluate(S_new, False)
            if trial.cost <= lin.cost and trial.n_invalid <= lin.n_invalid:
                dcost = lin.cost - trial.cost
                assert trial.cost <= lin.cost
                S = S_new
                lin = prob.evaluate(S, True)
                history.append(lin.cost)
                lam = max(lam * opts.lambda_down, 1e-12)
                accepted = True
                if dcost < max(opts.cost_tol, opts.cost_rtol * lin.cost) or step < opts.step_tol:
                    converged = True
                break
            if step < opts.step_tol:
                # a negligible step that does not help: nothing left to gain
                converged = True
                break
            lam *= opts.lambda_up
        if converged:
            break
        if not accepted:
            # no descent possible at any damping: we are at a (numerical) minimum
            if lin.cost < 1e-20 or _gradient_small(g, lin.cost):
                converged = True
                break
            nd = _structural_null_dim(prob, S, n)
            if nd:
                raise GaugeUnderconstrained(f"normal equations stay singular after damping: {nd} free direction(s)", nd)
            log.warning("LM stalled at cost %.6g after %d iterations", lin.cost, it)
            break

    factor = None
    if n:
        H = _normal_matrix(lin.J, dense)
        try:
            factor = _Factorization(H)
        except (np.linalg.LinAlgError, RuntimeError) as exc:
            nd = _structural_null_dim(prob, S, n)
            if not nd and n <= 3 * DENSE_DOF_LIMIT:
                nd = max(_null_dim(H if dense else H.toarray()), 1)
            if converged:
                raise GaugeUnderconstrained(f"information matrix is singular at the solution ({nd} dof)",
                                            nd) from exc
    return GraphSolution(S.values(), lin.cost, it, converged, tuple(history), lin.n_invalid, graph, S,
                         prob.layout, factor)


def _structural_null_dim(prob: _Problem, S: PackedState, n: int) -> int:
    """Null directions of the unwhitened normal matrix.

    Noise weights can span many orders of magnitude (noiseless scenarios use
    tiny sigma floors), which makes the whitened system look rank deficient
    when it is merely ill-conditioned. The raw Jacobians reveal the true
    unconstrained directions.
    """
    if n > 3 * DENSE_DOF_LIMIT:
        return 0
    raw = prob.evaluate(S, True, whiten=False)
    return _null_dim((raw.J.T @ raw.J).toarray())


def _gradient_small(g: np.ndarray, cost: float) -> bool:
    return float(np.linalg.norm(g)) <= 1e-10 * max(1.0, np.sqrt(2 * cost))
