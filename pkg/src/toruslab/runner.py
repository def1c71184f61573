"""Run orchestration behind the CLI subcommands.

Each run_* function takes a validated config and an output directory,
writes the resolved config, tables, and snapshots there, and returns the
manifest dict.  Manifests are deterministic for a fixed config and seed;
wall-clock timings go to a separate timings.json so manifests stay
byte-reproducible.
"""

import itertools
import json
import os
import time

import numpy as np

from . import __version__
from .config import canonical_yaml, config_hash
from .errors import ConfigError
from .flowmap import DiffeoMap
from .geodesics import (
    MetricConfig,
    exp_map,
    hamiltonian_field,
    integrate_family,
    lift_axisymmetric_field,
    velocity_from_vorticity,
)
from .regularity import (
    compute_inverses,
    conservation_residuals,
    shift_search,
    transfer_coercivity,
    verify_integral_identity,
)
from .sampling import (
    power_law_divergence_free,
    random_divergence_free,
    random_scalar,
    random_vector,
)
from .shooting import ShootingProblem, regularity_experiment, shoot
from .snapshots import read_snapshot, write_snapshot
from .spectral import ScalarField, TorusGrid, VectorField
from .trajio import load_trajectory, save_trajectory, write_table


def _metric_config(section):
    from .spectral import InertiaSpec

    shift = section.get("shift", 1.0)
    return MetricConfig(
        section["family"],
        InertiaSpec(section["inertia"]["order"], section["inertia"]["alpha"]),
        shift=1.0 if shift == "auto" else float(shift),
        killing_axis=section.get("killing_axis", 2),
    )


def build_initial(section, seed):
    """Construct the initial velocity field from the configured kind."""
    family = section["family"]
    dim = section["dim"]
    n = section["n"]
    init = section["initial"]
    kind = init["kind"]
    amp = float(init["amplitude"])
    rng = np.random.default_rng(seed)
    planar = family == "axisym_swirlfree_3d"
    grid = TorusGrid(2 if planar else dim, n)

    if kind == "file":
        field, _ = read_snapshot(init["path"])
        if isinstance(field, ScalarField):
            field = VectorField([field])
        return field
    if kind == "shear":
        u = VectorField.from_arrays(grid, [amp * np.sin(grid.nodes[1]),
                                           np.zeros(grid.shape)])
    elif kind == "taylor_green":
        omega = ScalarField.from_function(
            grid, lambda x, y: amp * (np.cos(x) + np.cos(y)))
        u = velocity_from_vorticity(omega)
    elif kind == "translation":
        u = VectorField.constant(grid, [float(v) for v in
                                        init["mean_velocity"][:grid.dim]])
    elif kind == "random_divfree":
        u = random_divergence_free(grid, rng, init["max_mode"], amp) if amp > 0 \
            else VectorField.zeros(grid)
    elif kind == "power_law":
        u = power_law_divergence_free(grid, rng, init["slope"],
                                      init["max_mode"], amp)
    elif kind == "perturbed_shear":
        base = VectorField.from_arrays(grid, [amp * np.sin(grid.nodes[1]),
                                              np.zeros(grid.shape)])
        u = base + random_divergence_free(grid, rng, init["max_mode"],
                                          float(init["epsilon"]))
    elif kind == "sine_1d":
        u = VectorField.from_arrays(grid, [amp * np.sin(grid.nodes[0])])
    elif kind == "smooth_1d":
        x = grid.nodes[0]
        u = VectorField.from_arrays(grid, [amp * (np.sin(x) + 0.3 * np.cos(2 * x))])
    elif kind == "random_vector":
        u = random_vector(grid, rng, init["max_mode"], amp)
    elif kind == "hamiltonian_random":
        f = random_scalar(grid, rng, init["max_mode"], 1.0)
        u = hamiltonian_field(f)
        u = u * (amp / u.max_norm())
    else:
        raise ConfigError("simulate.initial.kind", f"unhandled kind {kind!r}")

    mean = init.get("mean_velocity")
    if mean and kind not in ("translation",) and any(float(v) != 0.0 for v in mean):
        u = u + VectorField.constant(grid, [float(v) for v in mean[:grid.dim]])
    if planar:
        u = lift_axisymmetric_field(u, section["killing_axis"], TorusGrid(3, n))
    return u


def _write_manifest(outdir, manifest, started):
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(outdir, "timings.json"), "w") as fh:
        json.dump({"wall_seconds": time.time() - started}, fh)
        fh.write("\n")


def _start_run(cfg, outdir):
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "config.resolved.yaml"), "w") as fh:
        fh.write(canonical_yaml(cfg))


def _check(checks, name, value, tolerance, mode="max"):
    passed = bool(value <= tolerance) if mode == "max" else bool(value >= tolerance)
    checks.append({"name": name, "value": float(value),
                   "tolerance": float(tolerance), "mode": mode, "passed": passed})


def run_simulate(cfg, outdir):
    started = time.time()
    _start_run(cfg, outdir)
    sim = cfg["simulate"]
    seed = cfg["run"]["seed"]
    mcfg = _metric_config(sim)
    u0 = build_initial(sim, seed)
    traj = integrate_family(u0, mcfg, T=sim["horizon"], dt=sim["dt"],
                            checkpoints=sim["checkpoints"],
                            jacobian_mode=sim["jacobian_mode"])
    if sim["save_trajectory"]:
        save_trajectory(traj, os.path.join(outdir, "trajectory"))

    tables_dir = os.path.join(outdir, "tables")
    os.makedirs(tables_dir, exist_ok=True)
    n_ck = len(traj.times)
    per_ck = {k: v for k, v in traj.diagnostics.items() if len(v) == n_ck}
    header = ["time"] + sorted(per_ck)
    rows = [[traj.times[i]] + [per_ck[k][i] for k in sorted(per_ck)]
            for i in range(n_ck)]
    write_table(os.path.join(tables_dir, "series.csv"), header, rows)

    law_map = {
        "transport_residual": {
            "l2_incompressible_2d": "vorticity_transport",
            "hr_incompressible_2d": "filtered_vorticity_transport",
            "axisym_swirlfree_3d": "vorticity_transport",
            "symplectic_2k": "symplectic_vorticity_transport",
        }.get(mcfg.family),
        "coadjoint_momentum_residual": "coadjoint_momentum",
    }
    rows = []
    for key, law in law_map.items():
        if law is None or key not in per_ck:
            continue
        for i in range(n_ck):
            rows.append([law, traj.times[i], per_ck[key][i]])
    if rows:
        write_table(os.path.join(tables_dir, "residuals.csv"),
                    ["law", "time", "residual"], rows)

    snap_cfg = sim["snapshots"]
    if any(snap_cfg.values()):
        snap_dir = os.path.join(outdir, "snapshots")
        os.makedirs(snap_dir, exist_ok=True)
        for i, gamma in enumerate(traj.maps):
            if snap_cfg["maps"]:
                write_snapshot(os.path.join(snap_dir, f"map_{i:04d}.snap"),
                               gamma.displacement, "displacement")
            if snap_cfg["jacobian"]:
                jac = gamma.jacobian
                d = traj.grid.dim
                flat = VectorField.from_arrays(
                    traj.grid, [jac[a, b] for a in range(d) for b in range(d)])
                write_snapshot(os.path.join(snap_dir, f"jacobian_{i:04d}.snap"),
                               flat, "field")
            if snap_cfg["det"]:
                write_snapshot(os.path.join(snap_dir, f"det_{i:04d}.snap"),
                               ScalarField(traj.grid, values=gamma.det_jacobian()),
                               "field")

    checks = []
    diag = traj.diagnostics
    requested = sim["checks"]
    if "energy_drift" in requested:
        e = diag["energy"]
        drift = float(np.max(np.abs(e - e[0])) / max(e[0], 1e-300))
        _check(checks, "energy_drift", drift, requested["energy_drift"])
    if "transport_residual" in requested and "transport_residual" in diag:
        _check(checks, "transport_residual", float(np.max(diag["transport_residual"])),
               requested["transport_residual"])
    if "mean_drift" in requested and "mean_drift" in diag:
        _check(checks, "mean_drift", float(np.max(diag["mean_drift"])),
               requested["mean_drift"])
    if "volume_defect" in requested and "volume_defect" in diag:
        _check(checks, "volume_defect", float(np.max(diag["volume_defect"])),
               requested["volume_defect"])
    if "stationarity" in requested:
        drift = (traj.velocities[-1] - traj.velocities[0]).l2() / \
            max(traj.velocities[0].l2(), 1e-300)
        _check(checks, "stationarity", drift, requested["stationarity"])
    if "coadjoint_momentum_residual" in requested and \
            "coadjoint_momentum_residual" in diag:
        _check(checks, "coadjoint_momentum_residual",
               float(np.max(diag["coadjoint_momentum_residual"])),
               requested["coadjoint_momentum_residual"])
    if "swirl_max" in requested and "swirl_max" in diag:
        _check(checks, "swirl_max", float(np.max(diag["swirl_max"])),
               requested["swirl_max"])
    if "laplacian_conjugation_final" in requested:
        val = float(diag["laplacian_conjugation_residual_final"][0])
        _check(checks, "laplacian_conjugation_final", val,
               requested["laplacian_conjugation_final"])

    manifest = {
        "subcommand": "simulate",
        "version": __version__,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "family": mcfg.family,
        "checkpoints": n_ck,
        "final_energy": float(diag["energy"][-1]) if "energy" in diag else None,
        "checks": checks,
        "outputs": sorted(os.path.relpath(os.path.join(r, f), outdir)
                          for r, _, fs in os.walk(outdir) for f in fs),
    }
    _write_manifest(outdir, manifest, started)
    return manifest


def run_diagnose(cfg, outdir, trajectory=None):
    started = time.time()
    _start_run(cfg, outdir)
    diag_cfg = cfg["diagnose"]
    path = trajectory or diag_cfg["trajectory"]
    if not path or not os.path.isdir(path):
        raise ConfigError("diagnose.trajectory", f"no trajectory directory at {path!r}")
    traj = load_trajectory(path)
    if diag_cfg["family"] and diag_cfg["family"] != traj.config.family:
        raise ConfigError("diagnose.family",
                          f"trajectory family {traj.config.family!r} does not match "
                          f"{diag_cfg['family']!r}")
    seed = cfg["run"]["seed"]
    tables_dir = os.path.join(outdir, "tables")
    os.makedirs(tables_dir, exist_ok=True)
    inverses = compute_inverses(traj)
    checks = []

    if diag_cfg["shift"] == "auto":
        search = shift_search(traj, samples=diag_cfg["samples"], seed=seed,
                              inverses=inverses)
        shift = search.shift
        write_table(os.path.join(tables_dir, "shift_search.csv"),
                    ["shift", "min_quotient", "max_quotient"],
                    [[s, lo, hi] for s, lo, hi in search.history])
        _check(checks, "coercivity_min", search.min_quotient, 0.1, mode="min")
        _check(checks, "coercivity_ratio",
               search.max_quotient / max(search.min_quotient, 1e-300),
               diag_cfg["checks"].get("coercivity_ratio", 100.0))
        if not search.converged:
            checks.append({"name": "shift_search_converged", "value": 0.0,
                           "tolerance": 1.0, "mode": "min", "passed": False})
    else:
        shift = float(diag_cfg["shift"])

    identity_residual = verify_integral_identity(
        traj, shift, inverses=inverses, min_checkpoints=diag_cfg["min_checkpoints"])
    write_table(os.path.join(tables_dir, "endpoint_identity.csv"),
                ["law", "shift", "residual"],
                [["endpoint_identity", shift, identity_residual]])
    if "identity_residual" in diag_cfg["checks"]:
        _check(checks, "identity_residual", identity_residual,
               diag_cfg["checks"]["identity_residual"])

    tmin, quotients = transfer_coercivity(
        traj, traj.config, shift, samples=diag_cfg["transfer_samples"], seed=seed,
        max_mode=diag_cfg["max_mode"], inverses=inverses)
    write_table(os.path.join(tables_dir, "transfer_coercivity.csv"),
                ["sample", "quotient"],
                [[str(i), q] for i, q in enumerate(quotients)])
    _check(checks, "transfer_min", tmin, 0.0, mode="min")

    series = conservation_residuals(traj, stride=diag_cfg["stride"],
                                    inverses=inverses)
    rows = []
    for s in series:
        for t, v in zip(s.times, s.values):
            rows.append([s.law, t, v])
        tol_key = s.law
        if tol_key in diag_cfg["checks"]:
            _check(checks, tol_key, s.worst(), diag_cfg["checks"][tol_key])
    write_table(os.path.join(tables_dir, "residuals.csv"),
                ["law", "time", "residual"], rows)

    manifest = {
        "subcommand": "diagnose",
        "version": __version__,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "family": traj.config.family,
        "shift": shift,
        "identity_residual": float(identity_residual),
        "transfer_min_quotient": float(tmin),
        "checks": checks,
        "outputs": sorted(os.path.relpath(os.path.join(r, f), outdir)
                          for r, _, fs in os.walk(outdir) for f in fs),
    }
    _write_manifest(outdir, manifest, started)
    return manifest


def run_shoot(cfg, outdir, target=None):
    started = time.time()
    _start_run(cfg, outdir)
    shoot_cfg = cfg["shoot"]
    seed = cfg["run"]["seed"]
    mcfg = _metric_config(shoot_cfg)
    grid = TorusGrid(shoot_cfg["dim"], shoot_cfg["n"])
    u_star = None
    target_path = target or shoot_cfg["target"]
    if target_path:
        disp, kind = read_snapshot(target_path)
        if kind != "displacement":
            raise ConfigError("shoot.target", "snapshot is not a displacement/map")
        if isinstance(disp, ScalarField):
            disp = VectorField([disp])
        target_map = DiffeoMap(disp)
    elif shoot_cfg["roundtrip"]:
        rt = shoot_cfg["roundtrip"]
        rng = np.random.default_rng(seed)
        amp = float(rt["amplitude"])
        if rt["kind"] == "power_law":
            u_star = power_law_divergence_free(grid, rng, rt["slope"],
                                               rt["max_mode"], amp)
        else:
            u_star = random_divergence_free(grid, rng, rt["max_mode"], amp) \
                if amp > 0 else VectorField.zeros(grid)
        target_map = exp_map(u_star, mcfg, shoot_cfg["dt"])
    else:
        raise ConfigError("shoot.target", "need a target snapshot or a roundtrip block")

    problem = ShootingProblem(
        target=target_map, config=mcfg, dt=shoot_cfg["dt"], tol=shoot_cfg["tol"],
        max_iter=shoot_cfg["max_iter"], coarse_to_fine=tuple(shoot_cfg["cutoffs"]),
        basin_guard=shoot_cfg["basin_guard"],
        condition_band=shoot_cfg["condition_band"])
    report = shoot(problem)

    tables_dir = os.path.join(outdir, "tables")
    os.makedirs(tables_dir, exist_ok=True)
    write_table(os.path.join(tables_dir, "residual_history.csv"),
                ["step", "residual"],
                [[str(i), r] for i, r in enumerate(report.residual_history)])
    write_snapshot(os.path.join(outdir, "recovered_u0.snap"), report.u0, "field")

    checks = []
    if shoot_cfg["checks"].get("converged"):
        checks.append({"name": "converged", "value": float(report.converged),
                       "tolerance": 1.0, "mode": "min",
                       "passed": bool(report.converged)})
    recovery = None
    if u_star is not None and u_star.l2() > 0:
        recovery = (report.u0 - u_star).l2() / u_star.l2()
        if "recovery_rel" in shoot_cfg["checks"]:
            _check(checks, "recovery_rel", recovery,
                   shoot_cfg["checks"]["recovery_rel"])
    monotone = all(b <= a * (1 + 1e-12) for a, b in
                   zip(report.residual_history, report.residual_history[1:]))
    checks.append({"name": "residual_monotone", "value": float(monotone),
                   "tolerance": 1.0, "mode": "min", "passed": monotone})

    slope_difference = None
    nontrivial = target_map.max_displacement() > 0 and report.u0.l2() > 0
    if report.converged and nontrivial:
        pair = regularity_experiment(problem, report)
        slope_difference = pair.slope_difference
        rows = []
        shells = max(len(pair.target.shell_energies),
                     len(pair.recovered.shell_energies))
        for m in range(shells):
            rows.append([str(m),
                         pair.target.shell_energies[m] if m < len(
                             pair.target.shell_energies) else 0.0,
                         pair.recovered.shell_energies[m] if m < len(
                             pair.recovered.shell_energies) else 0.0])
        write_table(os.path.join(tables_dir, "shell_energies.csv"),
                    ["shell", "target_map", "recovered_u0"], rows)
        write_table(os.path.join(tables_dir, "sobolev.csv"),
                    ["s", "target_map", "recovered_u0"],
                    [[f"{s:g}", pair.target.norm(s), pair.recovered.norm(s)]
                     for s, _ in pair.target.sobolev_table])

    manifest = {
        "subcommand": "shoot",
        "version": __version__,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "family": mcfg.family,
        "converged": bool(report.converged),
        "iterations": report.iterations,
        "final_residual": float(report.residual_history[-1]),
        "recovery_rel": None if recovery is None else float(recovery),
        "dexp_condition": float(report.dexp_condition),
        "slope_difference": slope_difference,
        "checks": checks,
        "outputs": sorted(os.path.relpath(os.path.join(r, f), outdir)
                          for r, _, fs in os.walk(outdir) for f in fs),
    }
    _write_manifest(outdir, manifest, started)
    return manifest


def run_sweep(cfg, outdir):
    started = time.time()
    _start_run(cfg, outdir)
    sweep = cfg["sweep"]
    grid_spec = sweep["grid"]
    if not grid_spec:
        raise ConfigError("sweep.grid", "empty sweep grid")
    keys = sorted(grid_spec)
    combos = list(itertools.product(*(grid_spec[k] for k in keys)))
    if len(combos) > sweep["max_runs"]:
        raise ConfigError("sweep.grid",
                          f"{len(combos)} runs exceed the limit {sweep['max_runs']}")
    seed = cfg["run"]["seed"]
    results = []
    for combo in combos:
        sim = json.loads(json.dumps(cfg["simulate"]))
        for key, val in zip(keys, combo):
            if key == "order":
                sim["inertia"]["order"] = val
            else:
                sim[key] = val
        mcfg = _metric_config(sim)
        u0 = build_initial(sim, seed)
        traj = integrate_family(u0, mcfg, T=sim["horizon"], dt=sim["dt"],
                                checkpoints=max(2, min(sim["checkpoints"], 11)))
        e = traj.diagnostics["energy"]
        results.append({
            "params": dict(zip(keys, combo)),
            "dt": sim["dt"],
            "n": sim["n"],
            "energy_drift": float(np.max(np.abs(e - e[0])) / max(e[0], 1e-300)),
            "final_velocity": traj.velocities[-1],
        })

    tables_dir = os.path.join(outdir, "tables")
    os.makedirs(tables_dir, exist_ok=True)
    rows = [[json.dumps(r["params"], sort_keys=True), r["energy_drift"]]
            for r in results]
    write_table(os.path.join(tables_dir, "sweep.csv"),
                ["params", "energy_drift"], rows)

    order_rows = []
    observed = []
    if keys == ["dt"] or ("dt" in keys and len({r["n"] for r in results}) == 1):
        by_dt = sorted(results, key=lambda r: -r["dt"])
        ref = by_dt[-1]
        errors = []
        for r in by_dt[:-1]:
            err = (r["final_velocity"] - ref["final_velocity"]).l2()
            errors.append((r["dt"], err))
        for (dt1, e1), (dt2, e2) in zip(errors, errors[1:]):
            if e2 > 0:
                slope = float(np.log(e1 / e2) / np.log(dt1 / dt2))
                observed.append(slope)
                order_rows.append([dt1, dt2, e1, e2, slope])
    if order_rows:
        write_table(os.path.join(tables_dir, "orders.csv"),
                    ["dt_coarse", "dt_fine", "err_coarse", "err_fine", "observed_order"],
                    order_rows)

    manifest = {
        "subcommand": "sweep",
        "version": __version__,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "runs": len(results),
        "observed_orders": observed,
        "checks": [],
        "outputs": sorted(os.path.relpath(os.path.join(r, f), outdir)
                          for r, _, fs in os.walk(outdir) for f in fs),
    }
    _write_manifest(outdir, manifest, started)
    return manifest
