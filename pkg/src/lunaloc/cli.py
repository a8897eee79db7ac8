"""``lunaloc`` command line: simulate, estimate, evaluate, montecarlo, sweep.

Progress and diagnostics go to stderr; stdout carries a single JSON line
summarising the result. Exit codes: 0 success, 1 run failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, ScenarioConfig

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
MODES = ("odom", "odom+uwb", "full", "full+interp")

log = logging.getLogger("lunaloc")


class UsageError(Exception):
    pass


def _mode(value: str) -> str:
    if value not in MODES:
        raise argparse.ArgumentTypeError(f"unknown mode {value!r} (choose from {', '.join(MODES)})")
    return value


def _modes(value: str) -> list:
    return [_mode(v.strip()) for v in value.split(",") if v.strip()]


def _values(value: str) -> list:
    out = []
    for v in value.split(","):
        v = v.strip()
        if not v:
            continue
        try:
            out.append(json.loads(v))
        except json.JSONDecodeError:
            out.append(v)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lunaloc", description=__doc__.splitlines()[0])
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("simulate", help="simulate a mission into a run directory")
    s.add_argument("--config", required=True, help="scenario config JSON (field names as in ScenarioConfig)")
    s.add_argument("--out", required=True, help="output run directory")

    e = sub.add_parser("estimate", help="estimate a simulated run under one mode")
    e.add_argument("--run", required=True, help="run directory written by 'simulate'")
    e.add_argument("--mode", required=True, type=_mode, help=f"one of {', '.join(MODES)}")
    e.add_argument("--out", required=True, help="output directory for estimate.csv and solution.json")
    e.add_argument("--kappa", type=float, default=None,
                   help="virtual-feature noise inflation (full+interp); default: calibrate on held-out seeds")
    e.add_argument("--no-covariance", action="store_true", help="skip marginal covariances (no NEES later)")

    v = sub.add_parser("evaluate", help="score an estimate against ground truth")
    v.add_argument("--est", required=True, help="estimate directory")
    v.add_argument("--truth", required=True, help="run directory with truth.csv and lander.json")
    v.add_argument("--out", required=True, help="metrics.json path")

    m = sub.add_parser("montecarlo", help="many seeds, several modes, aggregated")
    m.add_argument("--config", required=True, help="scenario config JSON")
    m.add_argument("--runs", required=True, type=int, help="number of seeds")
    m.add_argument("--seed", type=int, default=0, help="base seed; run i uses seed+i (default 0)")
    m.add_argument("--modes", type=_modes, default=["odom", "odom+uwb"], help="comma-separated modes")
    m.add_argument("--out", required=True, help="output directory")
    m.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
    m.add_argument("--no-plots", action="store_true", help="do not write ate_cdf.svg")

    w = sub.add_parser("sweep", help="Monte Carlo at several values of one config field")
    w.add_argument("--config", required=True, help="scenario config JSON")
    w.add_argument("--param", required=True, help="ScenarioConfig field name, e.g. uwb_sigma")
    w.add_argument("--values", required=True, type=_values, help="comma-separated values, e.g. 0.05,0.1,0.2")
    w.add_argument("--modes", type=_modes, default=["odom+uwb"], help="comma-separated modes")
    w.add_argument("--runs", type=int, default=10, help="seeds per value (default 10)")
    w.add_argument("--seed", type=int, default=0, help="base seed (default 0)")
    w.add_argument("--scale-trajectory", action="store_true",
                   help="with --param duration: keep speed constant so the path grows with duration")
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--out", default=None, help="optional output directory (sweep.json + manifest)")
    return p


def _load_config(path) -> tuple[ScenarioConfig, bytes]:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    raw = p.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{p}: not UTF-8 text ({exc})") from exc
    try:
        return ScenarioConfig.from_json(text), raw
    except ConfigError as exc:
        raise ConfigError(f"{p}: {exc}") from exc


def _require_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} directory not found: {p}")
    return p


def _separate(out: Path, *inputs: Path) -> None:
    for i in inputs:
        if out.resolve() == i.resolve():
            raise UsageError(f"output directory must differ from the input directory {i}")


def _progress(label: str):
    def report(k, n):
        log.info("%s: %d/%d", label, k, n)
    return report


def cmd_simulate(args, argv) -> dict:
    from . import io as lio
    from .scenario import simulate

    started = lio.now_iso()
    cfg, raw = _load_config(args.config)
    out = Path(args.out)
    log.info("simulating seed %d, %.1f s", cfg.seed, cfg.duration)
    mission = simulate(cfg)
    files = lio.write_run(out, mission, raw.decode("utf-8"))
    lio.write_manifest(out, "simulate", argv, started, files, raw, [cfg.seed])
    return {"command": "simulate", "out": str(out), "n_records": len(mission.measurements), "seed": cfg.seed}


def cmd_estimate(args, argv) -> dict:
    from . import io as lio
    from .pipeline import run_estimator

    started = lio.now_iso()
    run = _require_dir(args.run, "run")
    out = Path(args.out)
    _separate(out, run)
    cfg, raw = _load_config(run / lio.CONFIG_FILE)
    records = lio.read_measurements(run / lio.MEASUREMENTS_FILE)
    model = lio.read_model(run)
    log.info("estimating %s (%d records)", args.mode, len(records))
    res = run_estimator(records, cfg, args.mode, model=model, kappa=args.kappa, covariances=not args.no_covariance)
    files = lio.write_estimate(out, res)
    files.append(lio.CONFIG_FILE)
    lio.atomic_write_text(out / lio.CONFIG_FILE, raw.decode("utf-8"))
    lio.write_manifest(out, "estimate", argv, started, files, raw, [cfg.seed])
    if not res.solution.converged:
        raise RuntimeError(f"optimizer did not converge in {res.solution.iterations} iterations "
                           f"(cost {res.solution.cost:.6g}); partial estimate written to {out}")
    return {"command": "estimate", "mode": args.mode, "out": str(out), "cost": res.solution.cost,
            "iterations": res.solution.iterations, "converged": res.solution.converged}


def cmd_evaluate(args, argv) -> dict:
    from . import io as lio
    from .pipeline import evaluate

    started = lio.now_iso()
    est = _require_dir(args.est, "estimate")
    truth_dir = _require_dir(args.truth, "truth")
    out = Path(args.out)
    _separate(out.parent, est, truth_dir)
    met = evaluate(lio.read_estimate(est), lio.read_truth(truth_dir))
    cfg_path = truth_dir / lio.CONFIG_FILE
    if cfg_path.is_file():
        met.seeds = [ScenarioConfig.from_json(cfg_path.read_text()).seed]
    lio.write_json(out, met.to_dict())
    lio.write_manifest(out.parent, "evaluate", argv, started, [out.name],
                       cfg_path.read_bytes() if cfg_path.is_file() else None, met.seeds)
    return {"command": "evaluate", "out": str(out), "ate_rmse": met.ate_rmse, "rpe_rmse": met.rpe_rmse,
            "nees_mean": met.nees_mean}


def cmd_montecarlo(args, argv) -> dict:
    from . import io as lio
    from .montecarlo import monte_carlo, write_plots

    started = lio.now_iso()
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    cfg, raw = _load_config(args.config)
    out = Path(args.out)
    res = monte_carlo(cfg, args.modes, args.runs, args.seed, workers=args.workers,
                      progress=_progress("montecarlo"))
    out.mkdir(parents=True, exist_ok=True)
    lio.atomic_write_text(out / lio.RUNS_FILE, res.runs_csv())
    lio.write_json(out / lio.METRICS_FILE, res.to_dict())
    lio.atomic_write_text(out / lio.CONFIG_FILE, raw.decode("utf-8"))
    files = [lio.RUNS_FILE, lio.METRICS_FILE, lio.CONFIG_FILE]
    if not args.no_plots:
        files += write_plots(res, out)
    lio.write_manifest(out, "montecarlo", argv, started, files, raw, res.seeds)
    return {"command": "montecarlo", "out": str(out), "runs": args.runs,
            "median_ate": {m: res.summary[m]["ate_rmse"] for m in res.modes},
            "win_rate": {f"{c.mode_b}<{c.mode_a}": c.win_rate for c in res.comparisons}}


def cmd_sweep(args, argv) -> dict:
    from . import io as lio
    from .montecarlo import sweep

    started = lio.now_iso()
    cfg, raw = _load_config(args.config)
    if args.param in ("trajectory", "seed"):
        raise UsageError(f"cannot sweep {args.param!r}")
    try:
        for v in args.values:
            cfg.replace(**{args.param: v})
    except TypeError as exc:
        raise UsageError(f"unknown config field {args.param!r}") from exc
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"--values: {exc}") from exc
    rows = sweep(cfg, args.param, args.values, args.modes, args.runs, args.seed, args.workers,
                 scale_trajectory=args.scale_trajectory, progress=_progress("sweep"))
    grid = {str(r["value"]): {m: r["summary"][m]["ate_rmse"] for m in args.modes} for r in rows}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        lio.write_json(out / "sweep.json", rows)
        lio.atomic_write_text(out / lio.CONFIG_FILE, raw.decode("utf-8"))
        lio.write_manifest(out, "sweep", argv, started, ["sweep.json", lio.CONFIG_FILE], raw,
                           [args.seed + i for i in range(args.runs)])
    return {"command": "sweep", "param": args.param, "median_ate": grid}


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "evaluate": cmd_evaluate,
    "montecarlo": cmd_montecarlo,
    "sweep": cmd_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage to stderr
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        summary = COMMANDS[args.command](args, argv)
    except (UsageError, ConfigError) as exc:
        print(f"lunaloc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"lunaloc {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    sys.stdout.write(json.dumps(summary, sort_keys=True, default=float) + "\n")
    sys.stdout.flush()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
