import hashlib
import json
import subprocess
import sys
from pathlib import Path

from lunaloc import io as lio
from lunaloc.cli import main
from lunaloc.config import ScenarioConfig

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _write_config(path: Path, cfg: ScenarioConfig) -> Path:
    path.write_text(cfg.to_json())
    return path


def _digest(d: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir()) if p.is_file()}


def test_noiseless_end_to_end(tmp_path, capsys):
    cfg = _write_config(tmp_path / "cfg.json", ScenarioConfig(seed=3).noiseless())
    run, est, met = tmp_path / "run", tmp_path / "est", tmp_path / "eval" / "metrics.json"
    assert main(["-q", "simulate", "--config", str(cfg), "--out", str(run)]) == EXIT_OK
    for name in (lio.CONFIG_FILE, lio.TRUTH_FILE, lio.LANDER_FILE, lio.MEASUREMENTS_FILE, lio.MANIFEST_FILE):
        assert (run / name).is_file(), name
    assert main(["-q", "estimate", "--run", str(run), "--mode", "full", "--out", str(est)]) == EXIT_OK
    assert (est / lio.ESTIMATE_FILE).is_file() and (est / lio.MANIFEST_FILE).is_file()
    assert main(["-q", "evaluate", "--est", str(est), "--truth", str(run), "--out", str(met)]) == EXIT_OK
    m = json.loads(met.read_text())
    assert m["ate_rmse"] < 1e-6
    assert m["lander_pose_error"]["trans"] < 1e-6 and m["lander_scale_error"] < 1e-8
    out = capsys.readouterr().out.strip().splitlines()
    assert json.loads(out[-1])["command"] == "evaluate"
    manifest = json.loads((run / lio.MANIFEST_FILE).read_text())
    assert manifest["seeds"] == [3]


def test_inputs_are_not_modified(tmp_path):
    cfg = _write_config(tmp_path / "cfg.json", ScenarioConfig(duration=10.0, seed=1))
    run = tmp_path / "run"
    assert main(["-q", "simulate", "--config", str(cfg), "--out", str(run)]) == EXIT_OK
    before = _digest(run)
    cfg_bytes = cfg.read_bytes()
    assert main(["-q", "estimate", "--run", str(run), "--mode", "odom+uwb", "--out", str(tmp_path / "e")]) == 0
    assert _digest(run) == before and cfg.read_bytes() == cfg_bytes


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text('{"uwb_sigma": -1}')
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert "uwb_sigma" in capsys.readouterr().err
    assert main(["estimate", "--run", str(tmp_path), "--mode", "nonsense", "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert main(["no-such-command"]) == EXIT_USAGE
    assert main(["estimate", "--run", str(tmp_path / "nowhere"), "--mode", "full", "--out", str(tmp_path / "o")]) \
        == EXIT_USAGE


def test_runtime_failure_exits_1(tmp_path, capsys):
    cfg = _write_config(tmp_path / "cfg.json", ScenarioConfig(duration=10.0, seed=1))
    run = tmp_path / "run"
    assert main(["-q", "simulate", "--config", str(cfg), "--out", str(run)]) == EXIT_OK
    (run / lio.MEASUREMENTS_FILE).write_text("{not json\n")
    rc = main(["-q", "estimate", "--run", str(run), "--mode", "full", "--out", str(tmp_path / "e")])
    assert rc == EXIT_FAIL
    assert "failed" in capsys.readouterr().err


def test_montecarlo_runs_csv_is_reproducible(tmp_path):
    cfg = _write_config(tmp_path / "cfg.json", ScenarioConfig(duration=15.0))
    outs = []
    for k in range(2):
        out = tmp_path / f"mc{k}"
        args = ["-q", "montecarlo", "--config", str(cfg), "--runs", "2", "--seed", "7", "--out", str(out),
                "--no-plots"]
        assert main(args) == EXIT_OK
        outs.append((out / lio.RUNS_FILE).read_bytes())
        assert (out / lio.MANIFEST_FILE).is_file() and (out / lio.METRICS_FILE).is_file()
    assert outs[0] == outs[1]
    lines = outs[0].decode().strip().splitlines()
    assert len(lines) == 1 + 2 * 2


def test_sweep_uwb_sigma_is_monotone(tmp_path, capsys):
    # ranging fixes the absolute position, so the unaligned error is the one that tracks uwb_sigma
    cfg = _write_config(tmp_path / "cfg.json", ScenarioConfig(duration=60.0))
    args = ["-q", "sweep", "--config", str(cfg), "--param", "uwb_sigma", "--values", "0.02,0.2,2.0",
            "--runs", "5", "--out", str(tmp_path / "sw")]
    assert main(args) == EXIT_OK
    grid = json.loads(capsys.readouterr().out.strip().splitlines()[-1])["median_ate"]
    assert set(grid) == {"0.02", "0.2", "2.0"}
    rows = json.loads((tmp_path / "sw" / "sweep.json").read_text())
    ates = [r["summary"]["odom+uwb"]["ate_abs"] for r in rows]
    assert ates[0] < ates[1] < ates[2]
    assert (tmp_path / "sw" / lio.MANIFEST_FILE).is_file()
    assert main(["-q", "sweep", "--config", str(cfg), "--param", "nope", "--values", "1"]) == EXIT_USAGE


def test_help_exits_0():
    r = subprocess.run([sys.executable, "-m", "lunaloc.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("simulate", "estimate", "evaluate", "montecarlo", "sweep"):
        assert cmd in r.stdout
