import json
from pathlib import Path

import numpy as np
import pytest

from src import scenarios
from src.config import get_default_config, merged, parse_config
from src.database import RunLog, SessionLocal
from src.errors import ConfigError, ConvergenceError
from src.evolution import Snapshot, Trajectory
from src.main import main
from src.modulation import minimal_mass_initial_data
from src.storage import load_snapshot, save_profiles, save_trajectory, verify_manifest

SMALL = {"grid": {"n": 256, "box_length": 32.0}}


def small_config(out_dir, **updates):
    return merged(get_default_config(), {**SMALL, "out": str(out_dir), **updates})


def ledger_rows():
    db = SessionLocal()
    try:
        return [(row.scenario, row.status, row.exit_code, row.details) for row in db.query(RunLog).all()]
    finally:
        db.close()


def test_ground_state_run_writes_manifest_and_ledger(tmp_path):
    out = tmp_path / "gs"
    manifest_path = scenarios.run(small_config(out))
    manifest = json.loads(Path(manifest_path).read_text())
    assert set(manifest["files"]) == {"ground_state.hwf", "halfwave.conf"}
    assert manifest["results"]["residual"] <= 1e-8
    assert verify_manifest(str(out)) == []
    field, _ = load_snapshot(str(out / "ground_state.hwf"))
    assert field.grid.n == 256
    assert parse_config((out / "halfwave.conf").read_text())["grid"]["n"] == 256
    rows = ledger_rows()
    assert [(label, status, code) for label, status, code, _ in rows] == [("ground_state", "success", 0)]
    assert json.loads(rows[0][3])["mass"] == pytest.approx(manifest["results"]["mass"])


def test_failed_run_is_recorded(tmp_path, monkeypatch):
    def diverge(cfg, out_dir):
        raise ConvergenceError("no fixed point", iterations=5)

    monkeypatch.setitem(scenarios.SCENARIO_RUNNERS, "ground_state", diverge)
    out = tmp_path / "failed"
    with pytest.raises(ConvergenceError):
        scenarios.run(small_config(out))
    assert [(label, status, code) for label, status, code, _ in ledger_rows()] == [("ground_state", "failed", 3)]
    assert not (out / "manifest.json").exists()


def test_invalid_config_never_starts(tmp_path):
    with pytest.raises(ConfigError):
        scenarios.run(small_config(tmp_path / "bad", grid={"n": 100, "box_length": 32.0}))
    assert not (tmp_path / "bad").exists()


def test_spectrum_csv_is_reproducible(tmp_path):
    outputs = []
    for name in ("first", "second"):
        cfg = small_config(tmp_path / name, scenario="spectrum", spectrum={"operator": "plus", "count": 4})
        scenarios.run(cfg)
        outputs.append((tmp_path / name / "spectrum.csv").read_bytes())
    assert outputs[0] == outputs[1]
    assert outputs[0].decode().splitlines()[0] == "index,eigenvalue,drift_estimate,overlap_Q,overlap_dQ"


def test_builtin_fields(tmp_path):
    cfg = small_config(tmp_path)
    ground = scenarios.builtin_field(cfg, "ground")
    subcritical = scenarios.builtin_field(cfg, "subcritical")
    assert np.allclose(subcritical.values, scenarios.SUBCRITICAL_FACTOR * ground.values)
    with pytest.raises(ConfigError):
        scenarios.builtin_field(cfg, "supercritical")


def test_track_tool_on_stored_data(tmp_path, profile_set):
    ps = profile_set
    save_profiles(str(tmp_path / "profiles"), ps)
    snapshots = []
    for t in (-0.204, -0.202, -0.2):
        field, _ = minimal_mass_initial_data(ps, t, ps.e1)
        snapshots.append(Snapshot(t, field))
    save_trajectory(str(tmp_path / "traj"), Trajectory(snapshots=snapshots))
    cfg = merged(get_default_config(), {"out": str(tmp_path / "track")})
    scenarios.execute(cfg, "track", scenarios.track_directory, str(tmp_path / "traj"), str(tmp_path / "profiles"))
    lines = (tmp_path / "track" / "track.csv").read_text().splitlines()
    assert len(lines) == 4
    assert lines[0].startswith("t,s,lambda,alpha,gamma,b,v")
    b_values = [float(line.split(",")[5]) for line in lines[1:]]
    assert b_values == pytest.approx([0.102, 0.101, 0.1], abs=1e-4)


def test_cli_ground_state(tmp_path):
    out = tmp_path / "cli"
    snapshot = tmp_path / "q.hwf"
    code = main(
        ["--config", str(tmp_path / "none.conf"), "--out", str(out),
         "ground-state", "--n", "256", "--box", "32", "--snapshot", str(snapshot)]
    )
    assert code == 0
    assert snapshot.read_bytes() == (out / "ground_state.hwf").read_bytes()


def test_cli_evolve_copies_conserved_series(tmp_path):
    out = tmp_path / "evolve"
    series = tmp_path / "series.csv"
    conf = tmp_path / "small.conf"
    conf.write_text("grid.n = 256\ngrid.box_length = 32\n")
    code = main(
        ["--config", str(conf), "--out", str(out), "evolve",
         "--init", "subcritical", "--t1", "0.05", "--dt", "0.01", "--csv", str(series)]
    )
    assert code == 0
    lines = series.read_text().splitlines()
    assert lines[0] == "t,mass,energy,momentum"
    assert float(lines[-1].split(",")[0]) == pytest.approx(0.05)


def test_cli_reports_config_errors(tmp_path):
    code = main(["--config", str(tmp_path / "none.conf"), "--out", str(tmp_path / "x"), "ground-state", "--n", "100"])
    assert code == ConfigError.exit_code


def test_cli_reads_the_config_file(tmp_path):
    conf = tmp_path / "lab.conf"
    conf.write_text(f"grid.n = 256\ngrid.box_length = 32\nout = {tmp_path / 'from_file'}\n")
    assert main(["--config", str(conf), "run", "--scenario", "ground_state"]) == 0
    assert (tmp_path / "from_file" / "manifest.json").exists()


@pytest.mark.slow
def test_soliton_check(tmp_path):
    cfg = merged(
        get_default_config(),
        {"scenario": "soliton_check", "out": str(tmp_path), "grid": {"n": 1024, "box_length": 128.0}},
    )
    manifest = json.loads(Path(scenarios.run(cfg)).read_text())
    results = manifest["results"]
    assert results["soliton_drift"] <= 1e-4
    assert results["traveling_shift"] == pytest.approx(scenarios.TRAVELING_VELOCITY, abs=1e-3)
    assert results["traveling_drift"] <= 1e-3


@pytest.mark.slow
def test_blowup_run_follows_the_collapse_laws(tmp_path):
    cfg = merged(get_default_config(), {"scenario": "blowup_run", "out": str(tmp_path)})
    manifest = json.loads(Path(scenarios.run(cfg)).read_text())
    results = manifest["results"]
    assert not results["halted"]
    assert results["tracked"] >= 3
    assert results["lambda_shrink"] >= 4.0
    assert results["lambda_law_deviation"] <= 0.10
    assert results["b_law_deviation"] <= 0.10
    assert results["b_s_over_b2"] == pytest.approx(-0.5, abs=0.075)
    assert results["half_derivative_slope"] == pytest.approx(-1.0, abs=0.15)
    assert results["momentum"]["expected"] == 0.0
    assert verify_manifest(str(tmp_path)) == []
