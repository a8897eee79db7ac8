"""On-disk formats for simulated runs, estimates and evaluations.

A simulated run directory holds ``config.json`` (the exact input bytes),
``truth.csv``, ``lander.json``, ``measurements.jsonl`` and
``lander_model.json``. An estimate directory holds ``estimate.csv`` (same
schema as ``truth.csv``) and ``solution.json``. Every output directory gets a
``manifest.json`` written last and atomically.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .geometry import Pose
from .lander import LanderModel
from .metrics import Trajectory
from .records import dumps_record, record_from_json

TRAJ_HEADER = ("t", "x", "y", "z", "qw", "qx", "qy", "qz")

CONFIG_FILE = "config.json"
TRUTH_FILE = "truth.csv"
LANDER_FILE = "lander.json"
MEASUREMENTS_FILE = "measurements.jsonl"
MODEL_FILE = "lander_model.json"
ESTIMATE_FILE = "estimate.csv"
SOLUTION_FILE = "solution.json"
METRICS_FILE = "metrics.json"
RUNS_FILE = "runs.csv"
MANIFEST_FILE = "manifest.json"


def _num(x: float) -> str:
    # repr round-trips doubles exactly and is platform independent
    return repr(float(x))


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path, obj) -> None:
    atomic_write_text(path, dumps_json(obj))


def read_json(path):
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------- trajectories

def trajectory_csv(times: Sequence[float], poses: Sequence[Pose]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJ_HEADER)
    for t, p in zip(times, poses):
        w.writerow([_num(t)] + [_num(v) for v in p.to_vector7()])
    return buf.getvalue()


def write_trajectory(path, times: Sequence[float], poses: Sequence[Pose]) -> None:
    atomic_write_text(path, trajectory_csv(times, poses))


def read_trajectory(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRAJ_HEADER:
        raise ValueError(f"{path}: expected header {','.join(TRAJ_HEADER)}")
    data = np.array(rows[1:], dtype=float).reshape(-1, 8)
    return Trajectory(data[:, 0], [Pose.from_vector7(r[1:]) for r in data])


# ----------------------------------------------------------------- lander info

def write_lander(path, pose: Pose, scale: float) -> None:
    write_json(path, {"pose": [float(v) for v in pose.to_vector7()], "scale": float(scale)})


def read_lander(path) -> tuple[Pose, float]:
    d = read_json(path)
    return Pose.from_vector7(d["pose"]), float(d["scale"])


# ---------------------------------------------------------------- measurements

def measurements_jsonl(records: Iterable) -> str:
    return "".join(dumps_record(r) + "\n" for r in records)


def write_measurements(path, records: Iterable) -> None:
    atomic_write_text(path, measurements_jsonl(records))


def read_measurements(path) -> list:
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(record_from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{n}: {exc}") from exc
    return out


# ------------------------------------------------------------------ run layout

@dataclass(frozen=True, eq=False)
class TruthFiles:
    """Ground truth as read back from a run directory (what evaluation needs)."""

    times: np.ndarray
    poses: tuple
    lander_pose: Pose
    lander_scale: float


def write_run(out_dir, mission, config_text: Optional[str] = None) -> list[str]:
    """Write a simulated mission; returns the file names written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / CONFIG_FILE, config_text if config_text is not None else mission.config.to_json() + "\n")
    write_trajectory(out / TRUTH_FILE, mission.truth.times, mission.truth.poses)
    write_lander(out / LANDER_FILE, mission.truth.lander_pose, mission.truth.lander_scale)
    write_measurements(out / MEASUREMENTS_FILE, mission.measurements)
    write_json(out / MODEL_FILE, mission.model.to_dict())
    return [CONFIG_FILE, TRUTH_FILE, LANDER_FILE, MEASUREMENTS_FILE, MODEL_FILE]


def read_truth(run_dir) -> TruthFiles:
    d = Path(run_dir)
    traj = read_trajectory(d / TRUTH_FILE)
    pose, scale = read_lander(d / LANDER_FILE)
    return TruthFiles(traj.times, traj.poses, pose, scale)


def read_model(run_dir) -> Optional[LanderModel]:
    p = Path(run_dir) / MODEL_FILE
    return LanderModel.load(p) if p.exists() else None


# ------------------------------------------------------------------- estimates

def _cov_list(C) -> list:
    return np.asarray(C, dtype=float).tolist()


def solution_dict(result) -> dict:
    """``solution.json`` content for an :class:`~lunaloc.pipeline.EstimateResult`."""
    sol = result.solution
    covs = result.covariances
    d = {
        "mode": result.mode.value,
        "cost": float(sol.cost),
        "iterations": int(sol.iterations),
        "converged": bool(sol.converged),
        "lander_pose": [float(v) for v in result.lander_pose.to_vector7()] if result.lander_pose is not None else None,
        "scale": float(result.lander_scale) if result.lander_scale is not None else None,
        "bias": float(result.bias) if result.bias is not None else None,
        "covariance_traces": {k: float(np.trace(np.atleast_2d(v))) for k, v in sorted(covs.items())},
        "node_ids": list(result.node_ids),
        "rover_covariances": [_cov_list(covs[n]) if n in covs else None for n in result.node_ids],
        "lander_covariance": _cov_list(covs["lander"]) if "lander" in covs else None,
        "info": {k: v for k, v in sorted(result.info.items()) if k != "epochs"},
    }
    return d


def write_estimate(out_dir, result) -> list[str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory(out / ESTIMATE_FILE, result.trajectory.times, result.trajectory.poses)
    write_json(out / SOLUTION_FILE, solution_dict(result))
    return [ESTIMATE_FILE, SOLUTION_FILE]


@dataclass(frozen=True, eq=False)
class EstimateFiles:
    """An estimate as read back from disk: enough to score it."""

    trajectory: Trajectory
    solution: dict

    @property
    def mode(self) -> str:
        return self.solution["mode"]

    @property
    def lander_pose(self) -> Optional[Pose]:
        v = self.solution.get("lander_pose")
        return Pose.from_vector7(v) if v is not None else None

    @property
    def lander_scale(self) -> Optional[float]:
        return self.solution.get("scale")

    def rover_covariances(self) -> list:
        return [np.array(c) if c is not None else None for c in self.solution.get("rover_covariances", [])]


def read_estimate(est_dir) -> EstimateFiles:
    d = Path(est_dir)
    return EstimateFiles(read_trajectory(d / ESTIMATE_FILE), read_json(d / SOLUTION_FILE))


# -------------------------------------------------------------------- manifest

def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir, command: str, argv: Sequence[str], started: str, files: Sequence[str],
                   config_bytes: Optional[bytes] = None, seeds: Sequence[int] = ()) -> dict:
    """Record how to reproduce ``out_dir``. Written last, atomically."""
    from . import __version__

    out = Path(out_dir)
    inventory = {}
    for name in sorted(set(files)):
        p = out / name
        if p.is_file():
            inventory[name] = {"sha256": sha256_file(p), "bytes": p.stat().st_size}
    manifest = {
        "command": command,
        "argv": list(argv),
        "tool": "lunaloc",
        "version": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "config_sha256": sha256_bytes(config_bytes) if config_bytes is not None else None,
        "seeds": [int(s) for s in seeds],
        "started": started,
        "finished": now_iso(),
        "files": inventory,
    }
    write_json(out / MANIFEST_FILE, manifest)
    return manifest
