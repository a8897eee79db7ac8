"""Monte Carlo harness: many seeds, several modes, robust aggregates.

Run ``i`` uses seed ``base_seed + i``; every mode is estimated on the same
simulated mission. Aggregates are medians and interquartile ranges, and each
ordered pair of modes gets a win rate (fraction of seeds where the second
mode has the lower ATE). Results do not depend on execution order or on the
number of worker processes.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .config import ScenarioConfig
from .graph.builder import BuildOptions, Mode
from .metrics import RunMetrics
from .pipeline import evaluate, lander_nees, run_estimator
from .scenario import simulate

log = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.2

RUN_COLUMNS = ("seed", "mode", "status", "ate", "ate_abs", "rpe", "nees", "nees_singular", "final_error",
               "lander_trans_error", "lander_rot_error", "lander_scale_error", "lander_nees", "iterations", "error")


class HarnessError(RuntimeError):
    """Too many individual runs failed for the aggregate to mean anything."""


@dataclass
class RunRecord:
    seed: int
    mode: str
    metrics: Optional[RunMetrics] = None
    lander_nees: Optional[float] = None
    iterations: Optional[int] = None
    error: Optional[str] = None
    wall_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.metrics is not None

    def row(self) -> dict:
        m = self.metrics
        lp = (m.lander_pose_error or {}) if m else {}
        return {
            "seed": self.seed,
            "mode": self.mode,
            "status": "ok" if m else "failed",
            "ate": m.ate_rmse if m else None,
            "ate_abs": m.ate_abs if m else None,
            "rpe": m.rpe_rmse if m else None,
            "nees": m.nees_mean if m else None,
            "nees_singular": m.nees_singular if m else None,
            "final_error": m.final_error if m else None,
            "lander_trans_error": lp.get("trans"),
            "lander_rot_error": lp.get("rot"),
            "lander_scale_error": m.lander_scale_error if m else None,
            "lander_nees": self.lander_nees,
            "iterations": self.iterations,
            "error": self.error or "",
        }


@dataclass(frozen=True)
class Comparison:
    """Paired comparison of ``mode_b`` against ``mode_a`` over common seeds."""

    mode_a: str
    mode_b: str
    n: int
    win_rate: float          # fraction of seeds where ATE(b) < ATE(a)
    median_delta: float      # median of ATE(b) - ATE(a)
    delta_ci: tuple          # bootstrap 95% interval of that median

    def to_dict(self) -> dict:
        return {"mode_a": self.mode_a, "mode_b": self.mode_b, "n": self.n, "win_rate": self.win_rate,
                "median_ate_delta": self.median_delta, "median_ate_delta_ci95": list(self.delta_ci)}


@dataclass
class MonteCarloResult:
    config: ScenarioConfig
    modes: tuple
    seeds: tuple
    runs: list                      # RunRecord, sorted by (seed, mode order)
    summary: dict = field(default_factory=dict)
    comparisons: list = field(default_factory=list)
    wall_time: float = 0.0

    def records(self, mode: str) -> list:
        return [r for r in self.runs if r.mode == mode]

    def values(self, mode: str, key: str = "ate") -> np.ndarray:
        """Per-seed metric for ``mode`` (NaN for failed runs)."""
        return np.array([_f(r.row()[key]) for r in self.records(mode)], dtype=float)

    def comparison(self, mode_a: str, mode_b: str) -> Comparison:
        for c in self.comparisons:
            if (c.mode_a, c.mode_b) == (mode_a, mode_b):
                return c
        raise KeyError((mode_a, mode_b))

    def runs_csv(self) -> str:
        return runs_csv(self.runs)

    def to_dict(self) -> dict:
        return {
            "modes": list(self.modes),
            "seeds": list(self.seeds),
            "n_runs": len(self.seeds),
            "summary": self.summary,
            "comparisons": [c.to_dict() for c in self.comparisons],
            "wall_time": self.wall_time,
        }


def _f(v) -> float:
    return float("nan") if v is None else float(v)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def runs_csv(runs: Sequence[RunRecord]) -> str:
    """Per-run table. Wall time is left out so the file is reproducible."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUN_COLUMNS)
    for r in runs:
        row = r.row()
        w.writerow([_fmt(row[c]) for c in RUN_COLUMNS])
    return buf.getvalue()


def run_one(config: ScenarioConfig, seed: int, modes: Sequence[str], options: Optional[BuildOptions] = None,
            kappa: Optional[float] = None) -> list[RunRecord]:
    """Simulate ``seed`` once and estimate it under every mode. Never raises."""
    cfg = config.replace(seed=int(seed))
    out = []
    try:
        mission = simulate(cfg)
    except Exception as exc:  # recorded, not fatal
        return [RunRecord(int(seed), m, error=f"simulate: {type(exc).__name__}: {exc}") for m in modes]
    for mode in modes:
        t0 = time.perf_counter()
        try:
            res = run_estimator(mission.measurements, cfg, mode, options=options, model=mission.model, kappa=kappa)
            if not res.solution.converged:
                raise RuntimeError(f"optimizer did not converge in {res.solution.iterations} iterations")
            met = evaluate(res, mission.truth)
            met.seeds = [int(seed)]
            met.wall_time = time.perf_counter() - t0
            out.append(RunRecord(int(seed), mode, met, lander_nees(res, mission.truth), res.solution.iterations,
                                 wall_time=met.wall_time))
        except Exception as exc:
            out.append(RunRecord(int(seed), mode, error=f"{type(exc).__name__}: {exc}",
                                 wall_time=time.perf_counter() - t0))
    return out


def _run_one_packed(args):
    return run_one(*args)


def _quantiles(x: np.ndarray) -> dict:
    x = x[np.isfinite(x)]
    if len(x) == 0:
        return {"median": None, "q25": None, "q75": None, "iqr": None}
    q25, med, q75 = (float(v) for v in np.percentile(x, [25, 50, 75]))
    return {"median": med, "q25": q25, "q75": q75, "iqr": q75 - q25}


def bootstrap_median_ci(delta: np.ndarray, n_boot: int = 2000, level: float = 0.95, seed: int = 0) -> tuple:
    """Percentile bootstrap interval for the median (seeded, so reproducible)."""
    delta = np.asarray(delta, dtype=float)
    if len(delta) == 0:
        return (float("nan"), float("nan"))
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(delta), size=(n_boot, len(delta)))
    meds = np.median(delta[idx], axis=1)
    a = (1.0 - level) / 2
    lo, hi = np.quantile(meds, [a, 1.0 - a])
    return (float(lo), float(hi))


def compare(ate_a: np.ndarray, ate_b: np.ndarray, mode_a: str, mode_b: str) -> Comparison:
    ok = np.isfinite(ate_a) & np.isfinite(ate_b)
    a, b = ate_a[ok], ate_b[ok]
    if not ok.any():
        return Comparison(mode_a, mode_b, 0, float("nan"), float("nan"), (float("nan"), float("nan")))
    d = b - a
    return Comparison(mode_a, mode_b, int(ok.sum()), float(np.mean(b < a)), float(np.median(d)),
                      bootstrap_median_ci(d))


def summarize(runs: Sequence[RunRecord], modes: Sequence[str]) -> dict:
    """Per-mode aggregates shaped like :class:`RunMetrics` (medians), plus IQRs."""
    out = {}
    for mode in modes:
        rs = [r for r in runs if r.mode == mode]
        good = [r for r in rs if r.ok]
        col = lambda key: np.array([_f(r.row()[key]) for r in good], dtype=float)
        q = {k: _quantiles(col(k)) for k in ("ate", "ate_abs", "rpe", "nees", "final_error", "lander_trans_error",
                                            "lander_rot_error", "lander_scale_error", "lander_nees")}
        nees_vals = col("nees")
        nees_vals = nees_vals[np.isfinite(nees_vals)]
        lander = None
        if q["lander_trans_error"]["median"] is not None:
            lander = {"trans": q["lander_trans_error"]["median"], "rot": q["lander_rot_error"]["median"]}
        agg = RunMetrics(
            ate_rmse=q["ate"]["median"],
            rpe_rmse=q["rpe"]["median"],
            nees_mean=float(nees_vals.mean()) if len(nees_vals) else None,
            lander_pose_error=lander,
            lander_scale_error=q["lander_scale_error"]["median"],
            final_error=q["final_error"]["median"],
            mode=mode,
            seeds=sorted(r.seed for r in good),
            wall_time=float(sum(r.wall_time for r in rs)),
            nees_singular=int(sum(r.metrics.nees_singular for r in good)),
            ate_abs=q["ate_abs"]["median"],
        ).to_dict()
        agg["n_ok"] = len(good)
        agg["n_failed"] = len(rs) - len(good)
        agg["failures"] = {str(r.seed): r.error for r in rs if not r.ok}
        agg["quantiles"] = q
        out[mode] = agg
    return out


def monte_carlo(config: ScenarioConfig, modes: Sequence = ("odom", "odom+uwb"), n_runs: int = 10,
                base_seed: int = 0, workers: int = 1, options: Optional[BuildOptions] = None,
                kappa: Optional[float] = None,
                progress: Optional[Callable[[int, int], None]] = None) -> MonteCarloResult:
    """Estimate ``n_runs`` missions under every mode and aggregate.

    A failed run is recorded with its error message; more than 20% failed
    runs across the whole harness raises :class:`HarnessError`.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    modes = tuple(Mode.parse(m).value for m in modes)
    if len(set(modes)) != len(modes):
        raise ValueError("modes must be distinct")
    if kappa is None and Mode.FULL_INTERP.value in modes:
        # calibrate once for the whole harness rather than per run
        from .interp import calibrate_kappa
        from .pipeline import estimator_pixel_sigma

        kappa = calibrate_kappa(config, pixel_sigma=estimator_pixel_sigma(config, options))
    seeds = tuple(int(base_seed) + i for i in range(n_runs))
    t0 = time.perf_counter()
    jobs = [(config, s, modes, options, kappa) for s in seeds]
    runs: list[RunRecord] = []
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for k, recs in enumerate(ex.map(_run_one_packed, jobs)):
                runs.extend(recs)
                if progress:
                    progress(k + 1, n_runs)
    else:
        for k, job in enumerate(jobs):
            runs.extend(run_one(*job))
            if progress:
                progress(k + 1, n_runs)
    order = {m: i for i, m in enumerate(modes)}
    runs.sort(key=lambda r: (r.seed, order[r.mode]))
    failed = [r for r in runs if not r.ok]
    for r in failed:
        log.warning("seed %d mode %s failed: %s", r.seed, r.mode, r.error)
    if len(failed) > MAX_FAILURE_FRACTION * len(runs):
        raise HarnessError(f"{len(failed)} of {len(runs)} runs failed (limit {MAX_FAILURE_FRACTION:.0%}); "
                           f"first error: {failed[0].error}")
    res = MonteCarloResult(config, modes, seeds, runs)
    res.summary = summarize(runs, modes)
    ate = {m: res.values(m, "ate") for m in modes}
    res.comparisons = [compare(ate[a], ate[b], a, b) for a, b in itertools.permutations(modes, 2)]
    res.wall_time = time.perf_counter() - t0
    return res


def write_plots(result: MonteCarloResult, out_dir) -> list[str]:
    """ATE CDF per mode, as SVG. Needs matplotlib (optional); returns files written."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.info("matplotlib not installed; skipping plots")
        return []
    from pathlib import Path

    plt.rcParams["svg.hashsalt"] = "lunaloc"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for mode in result.modes:
        x = np.sort(result.values(mode, "ate"))
        x = x[np.isfinite(x)]
        if len(x):
            ax.step(x, np.arange(1, len(x) + 1) / len(x), where="post", label=mode)
    ax.set_xlabel("ATE [m]")
    ax.set_ylabel("fraction of runs")
    ax.legend()
    fig.tight_layout()
    path = Path(out_dir) / "ate_cdf.svg"
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    return [path.name]


def sweep(config: ScenarioConfig, param: str, values: Sequence, modes: Sequence = ("odom+uwb",), n_runs: int = 10,
          base_seed: int = 0, workers: int = 1, options: Optional[BuildOptions] = None,
          scale_trajectory: bool = False, progress=None) -> list[dict]:
    """Monte Carlo at each value of one config field.

    With ``scale_trajectory`` and ``param == "duration"`` the path length
    grows with the duration (constant speed) instead of the same path being
    driven more slowly.
    """
    rows = []
    for v in values:
        cfg = config.replace(**{param: v})
        if scale_trajectory and param == "duration":
            cfg = cfg.replace(trajectory=scaled_trajectory(config.trajectory, float(v) / config.duration))
        res = monte_carlo(cfg, modes, n_runs, base_seed, workers, options, progress=progress)
        rows.append({"param": param, "value": v, "summary": res.summary,
                     "comparisons": [c.to_dict() for c in res.comparisons]})
    return rows


def scaled_trajectory(spec, factor: float):
    """The same kind of path, ``factor`` times as long at the same speed."""
    from .config import Arc, Straight, Waypoints

    if isinstance(spec, Straight):
        return Straight(spec.length * factor)
    if isinstance(spec, Arc):
        return Arc(spec.radius, spec.sweep * factor)
    if isinstance(spec, Waypoints):
        raise ValueError("waypoint trajectories fix their own timing; scale the waypoints instead")
    raise TypeError(type(spec).__name__)


def ratio(a: float, b: float) -> float:
    return a / b if b and math.isfinite(b) else float("nan")
