"""Trajectory serialization: a directory of snapshots plus a tabular manifest.

Layout of a trajectory directory:

    meta.json            family, inertia, shift, dt, grid, checkpoint count
    checkpoints.csv      one row per checkpoint: index, time, then one column
                         per per-checkpoint diagnostic
    velocity_XXXX.snap   field snapshot per checkpoint
    map_XXXX.snap        displacement snapshot per checkpoint
"""

import json
import os

import numpy as np

from .flowmap import DiffeoMap
from .geodesics import GeodesicTrajectory, MetricConfig
from .snapshots import read_snapshot, write_snapshot
from .spectral import InertiaSpec, ScalarField, VectorField


def _fmt(x):
    return f"{float(x):.17e}"


def write_table(path, header, rows):
    """Comma-delimited table with one header row; floats at full precision."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(cell if isinstance(cell, str) else _fmt(cell)
                              for cell in row) + "\n")


def save_trajectory(traj, directory):
    os.makedirs(directory, exist_ok=True)
    n_ck = len(traj.times)
    meta = {
        "family": traj.config.family,
        "inertia": {"order": traj.config.inertia.order,
                    "alpha": traj.config.inertia.alpha,
                    "family": traj.config.inertia.family},
        "shift": traj.config.shift,
        "killing_axis": traj.config.killing_axis,
        "dt": traj.dt,
        "dim": traj.grid.dim,
        "n_per_axis": traj.grid.n,
        "checkpoints": n_ck,
        "scalar_diagnostics": {k: list(map(float, v))
                               for k, v in traj.diagnostics.items()
                               if len(v) != n_ck},
    }
    with open(os.path.join(directory, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    per_ck = {k: v for k, v in traj.diagnostics.items() if len(v) == n_ck}
    header = ["index", "time"] + sorted(per_ck)
    rows = []
    for i, t in enumerate(traj.times):
        rows.append([str(i), t] + [per_ck[k][i] for k in sorted(per_ck)])
    write_table(os.path.join(directory, "checkpoints.csv"), header, rows)
    for i, (gamma, u) in enumerate(zip(traj.maps, traj.velocities)):
        write_snapshot(os.path.join(directory, f"velocity_{i:04d}.snap"), u, "field")
        write_snapshot(os.path.join(directory, f"map_{i:04d}.snap"),
                       gamma.displacement, "displacement")


def load_trajectory(directory):
    with open(os.path.join(directory, "meta.json")) as fh:
        meta = json.load(fh)
    config = MetricConfig(
        meta["family"],
        InertiaSpec(meta["inertia"]["order"], meta["inertia"]["alpha"],
                    meta["inertia"]["family"]),
        shift=meta["shift"],
        killing_axis=meta["killing_axis"],
    )
    times = []
    diag_rows = []
    with open(os.path.join(directory, "checkpoints.csv")) as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            cells = line.strip().split(",")
            times.append(float(cells[1]))
            diag_rows.append([float(c) for c in cells[2:]])
    diag = {}
    for j, key in enumerate(header[2:]):
        diag[key] = np.array([row[j] for row in diag_rows])
    for key, vals in meta.get("scalar_diagnostics", {}).items():
        diag[key] = np.asarray(vals)
    maps, velocities = [], []
    for i in range(meta["checkpoints"]):
        u, kind = read_snapshot(os.path.join(directory, f"velocity_{i:04d}.snap"))
        if isinstance(u, ScalarField):
            u = VectorField([u])
        velocities.append(u)
        disp, kind = read_snapshot(os.path.join(directory, f"map_{i:04d}.snap"))
        if kind != "displacement":
            raise ValueError(f"map_{i:04d}.snap is not a displacement snapshot")
        if isinstance(disp, ScalarField):
            disp = VectorField([disp])
        maps.append(DiffeoMap(disp))
    return GeodesicTrajectory(np.asarray(times), maps, velocities, config,
                              meta["dt"], diag)
