"""CLI and runner tests: config validation, determinism, exit codes."""

import json

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from toruslab.cli import main
from toruslab.config import load_config, validate_config
from toruslab.errors import ConfigError
from toruslab.flowmap import DiffeoMap
from toruslab.runner import run_diagnose, run_shoot, run_simulate, run_sweep
from toruslab.snapshots import write_snapshot
from toruslab.spectral import TorusGrid


def tiny_simulate_cfg(**overrides):
    sim = {
        "family": "l2_incompressible_2d",
        "n": 16,
        "dt": 5e-3,
        "horizon": 1.0,
        "checkpoints": 11,
        "initial": {"kind": "random_divfree", "max_mode": 2, "amplitude": 0.1},
        "checks": {"energy_drift": 1e-6, "transport_residual": 1e-3,
                   "mean_drift": 1e-10, "volume_defect": 1e-4},
    }
    sim.update(overrides)
    return validate_config({"run": {"seed": 11}, "simulate": sim})


def test_config_defaults_and_unknown_keys():
    cfg = validate_config({})
    assert cfg["simulate"]["family"] == "l2_incompressible_2d"
    with pytest.raises(ConfigError, match="unknown key"):
        validate_config({"simulate": {"frobnicate": 1}})
    with pytest.raises(ConfigError, match="unknown section"):
        validate_config({"bogus": {}})


def test_config_rejects_negative_dt():
    with pytest.raises(ConfigError, match="simulate.dt"):
        validate_config({"simulate": {"dt": -1e-3}})


def test_config_rejects_bad_family():
    with pytest.raises(ConfigError, match="family"):
        validate_config({"simulate": {"family": "navier_stokes"}})


def test_load_config_round_trip(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"run": {"seed": 5},
                                    "simulate": {"n": 16, "dt": 0.01}}))
    cfg = load_config(path)
    assert cfg["run"]["seed"] == 5
    assert cfg["simulate"]["n"] == 16


def test_run_simulate_outputs_and_checks(tmp_path):
    out = tmp_path / "run1"
    manifest = run_simulate(tiny_simulate_cfg(), str(out))
    assert (out / "config.resolved.yaml").exists()
    assert (out / "manifest.json").exists()
    assert (out / "tables" / "series.csv").exists()
    assert (out / "tables" / "residuals.csv").exists()
    assert (out / "trajectory" / "meta.json").exists()
    assert all(c["passed"] for c in manifest["checks"])
    first = (out / "tables" / "residuals.csv").read_text().splitlines()[0]
    assert first == "law,time,residual"


def test_run_simulate_deterministic(tmp_path):
    cfg = tiny_simulate_cfg()
    m1 = run_simulate(cfg, str(tmp_path / "a"))
    m2 = run_simulate(cfg, str(tmp_path / "b"))
    for rel in ("tables/series.csv", "tables/residuals.csv", "manifest.json",
                "trajectory/checkpoints.csv"):
        b1 = (tmp_path / "a" / rel).read_bytes()
        b2 = (tmp_path / "b" / rel).read_bytes()
        assert b1 == b2, rel
    assert m1 == m2


def test_run_simulate_failing_check(tmp_path):
    cfg = tiny_simulate_cfg(checks={"transport_residual": 1e-30})
    manifest = run_simulate(cfg, str(tmp_path / "f"))
    assert any(not c["passed"] for c in manifest["checks"])


def test_run_diagnose_on_trajectory(tmp_path):
    cfg = tiny_simulate_cfg()
    run_simulate(cfg, str(tmp_path / "sim"))
    diag_cfg = validate_config({
        "run": {"seed": 11},
        "diagnose": {"samples": 6, "transfer_samples": 2, "min_checkpoints": 11,
                     "checks": {"identity_residual": 1e-1,
                                "vorticity_transport": 1e-3}},
    })
    manifest = run_diagnose(diag_cfg, str(tmp_path / "diag"),
                            trajectory=str(tmp_path / "sim" / "trajectory"))
    assert manifest["shift"] >= 1.0
    assert manifest["transfer_min_quotient"] > 0
    tables = tmp_path / "diag" / "tables"
    assert (tables / "endpoint_identity.csv").exists()
    assert (tables / "residuals.csv").exists()
    assert (tables / "shift_search.csv").exists()
    assert all(c["passed"] for c in manifest["checks"])


def test_run_diagnose_family_mismatch(tmp_path):
    cfg = tiny_simulate_cfg()
    run_simulate(cfg, str(tmp_path / "sim"))
    diag_cfg = validate_config({"diagnose": {"family": "hr_compressible",
                                             "min_checkpoints": 11}})
    with pytest.raises(ConfigError, match="family"):
        run_diagnose(diag_cfg, str(tmp_path / "d"),
                     trajectory=str(tmp_path / "sim" / "trajectory"))


def test_run_shoot_roundtrip_and_identity_target(tmp_path):
    cfg = validate_config({
        "run": {"seed": 21},
        "shoot": {"n": 16, "dt": 1e-2, "tol": 1e-5, "cutoffs": [2, "full"],
                  "roundtrip": {"max_mode": 2, "amplitude": 0.1},
                  "checks": {"recovery_rel": 1e-3, "converged": True}},
    })
    manifest = run_shoot(cfg, str(tmp_path / "shoot"))
    assert manifest["converged"]
    assert manifest["recovery_rel"] < 1e-3
    assert all(c["passed"] for c in manifest["checks"])
    assert (tmp_path / "shoot" / "recovered_u0.snap").exists()
    assert (tmp_path / "shoot" / "tables" / "residual_history.csv").exists()

    grid = TorusGrid(2, 16)
    target_path = tmp_path / "identity.snap"
    write_snapshot(target_path, DiffeoMap.identity(grid).displacement,
                   "displacement")
    cfg2 = validate_config({"shoot": {"n": 16, "dt": 1e-2}})
    manifest2 = run_shoot(cfg2, str(tmp_path / "shoot2"), target=str(target_path))
    assert manifest2["converged"]
    assert manifest2["final_residual"] == 0.0


def test_run_shoot_basin_guard(tmp_path):
    grid = TorusGrid(2, 16)
    big = DiffeoMap.from_arrays(grid, [np.full(grid.shape, 0.9),
                                       np.zeros(grid.shape)])
    target_path = tmp_path / "big.snap"
    write_snapshot(target_path, big.displacement, "displacement")
    cfg = validate_config({"shoot": {"n": 16}})
    with pytest.raises(ValueError, match="basin"):
        run_shoot(cfg, str(tmp_path / "s"), target=str(target_path))


def test_run_sweep_orders(tmp_path):
    cfg = validate_config({
        "run": {"seed": 31},
        "simulate": {"n": 16, "horizon": 0.25, "checkpoints": 6,
                     "initial": {"kind": "perturbed_shear", "amplitude": 1.0,
                                 "max_mode": 2, "epsilon": 0.05},
                     "save_trajectory": False},
        "sweep": {"grid": {"dt": [4e-3, 2e-3, 1e-3]}},
    })
    manifest = run_sweep(cfg, str(tmp_path / "sweep"))
    assert manifest["runs"] == 3
    assert len(manifest["observed_orders"]) == 1
    assert 3.5 < manifest["observed_orders"][0] < 4.5
    assert (tmp_path / "sweep" / "tables" / "orders.csv").exists()


def test_run_sweep_refuses_large_grid(tmp_path):
    cfg = validate_config({"sweep": {"grid": {"dt": [1e-3] * 300}}})
    with pytest.raises(ConfigError, match="exceed"):
        run_sweep(cfg, str(tmp_path / "s"))


def test_cli_presets_and_help():
    runner = CliRunner()
    result = runner.invoke(main, ["presets"])
    assert result.exit_code == 0
    assert "shear" in result.output
    assert "shoot_roundtrip" in result.output
    result = runner.invoke(main, ["--help"])
    assert result.exit_code == 0
    for sub in ("simulate", "diagnose", "shoot", "sweep", "presets"):
        assert sub in result.output


def test_cli_simulate_with_config_and_seed(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({
        "run": {"seed": 1},
        "simulate": {"n": 16, "dt": 5e-3, "horizon": 0.2, "checkpoints": 5,
                     "initial": {"kind": "random_divfree", "max_mode": 2,
                                 "amplitude": 0.2},
                     "checks": {"energy_drift": 1e-6}},
    }))
    runner = CliRunner()
    out = tmp_path / "out"
    result = runner.invoke(main, ["simulate", "--config", str(path),
                                  "--out", str(out), "--seed", "42"])
    assert result.exit_code == 0, result.output
    assert "[pass] energy_drift" in result.output
    resolved = yaml.safe_load((out / "config.resolved.yaml").read_text())
    assert resolved["run"]["seed"] == 42


def test_cli_failing_check_exits_one(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({
        "simulate": {"n": 16, "dt": 5e-3, "horizon": 0.2, "checkpoints": 5,
                     "initial": {"kind": "random_divfree", "max_mode": 2,
                                 "amplitude": 0.2},
                     "checks": {"energy_drift": 1e-30}},
    }))
    runner = CliRunner()
    result = runner.invoke(main, ["simulate", "--config", str(path),
                                  "--out", str(tmp_path / "out")])
    assert result.exit_code == 1
    assert "[FAIL]" in result.output


def test_cli_config_error_exits_two(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump({"simulate": {"dt": -1.0}}))
    runner = CliRunner()
    result = runner.invoke(main, ["simulate", "--config", str(path),
                                  "--out", str(tmp_path / "out")])
    assert result.exit_code == 2
    assert "simulate.dt" in result.output


def test_cli_env_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("TORUSLAB_OUTPUT_ROOT", str(tmp_path / "root"))
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({
        "run": {"seed": 7},
        "simulate": {"n": 16, "dt": 1e-2, "horizon": 0.1, "checkpoints": 3,
                     "initial": {"kind": "translation",
                                 "mean_velocity": [0.2, 0.0]}},
    }))
    runner = CliRunner()
    result = runner.invoke(main, ["simulate", "--config", str(path)])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "root" / "simulate-seed7" / "manifest.json").exists()


def test_manifest_deterministic_fields(tmp_path):
    cfg = tiny_simulate_cfg()
    manifest = run_simulate(cfg, str(tmp_path / "m"))
    raw = json.loads((tmp_path / "m" / "manifest.json").read_text())
    assert raw["config_hash"] == manifest["config_hash"]
    assert "wall_seconds" not in raw
    timings = json.loads((tmp_path / "m" / "timings.json").read_text())
    assert timings["wall_seconds"] >= 0


def test_run_simulate_snapshot_dumps(tmp_path):
    cfg = tiny_simulate_cfg(snapshots={"maps": True, "jacobian": True, "det": True},
                            checkpoints=3, horizon=0.1)
    run_simulate(cfg, str(tmp_path / "snaps"))
    snap_dir = tmp_path / "snaps" / "snapshots"
    for stem in ("map", "jacobian", "det"):
        assert (snap_dir / f"{stem}_0000.snap").exists()
        assert (snap_dir / f"{stem}_0002.snap").exists()
    from toruslab.snapshots import read_snapshot
    det, kind = read_snapshot(snap_dir / "det_0000.snap")
    assert np.abs(det.values - 1.0).max() < 1e-12


def test_run_simulate_transport_jacobian_mode(tmp_path):
    cfg = tiny_simulate_cfg(jacobian_mode="transport_ode", checkpoints=3,
                            horizon=0.1)
    manifest = run_simulate(cfg, str(tmp_path / "tj"))
    assert all(c["passed"] for c in manifest["checks"])
