"""Self-describing snapshot container for fields and map displacements.

Layout (stable across versions):

    line 1: ``TORUSLAB-SNAP 1``            ASCII magic + format version
    line 2: one-line JSON header with keys ``dim``, ``n_per_axis``,
            ``components``, ``kind`` ("field" or "displacement"),
            ``normalization`` (always "mean-is-coeff0"), ``dtype`` ("<f8")
    body:   components * n_per_axis**dim float64 little-endian node
            samples, row-major, one component block after another
"""

import json

import numpy as np

from .spectral import TorusGrid, ScalarField, VectorField

MAGIC = b"TORUSLAB-SNAP 1\n"
NORMALIZATION = "mean-is-coeff0"


def _header(grid, components, kind):
    return {
        "dim": grid.dim,
        "n_per_axis": grid.n,
        "components": components,
        "kind": kind,
        "normalization": NORMALIZATION,
        "dtype": "<f8",
    }


def write_snapshot(path, field, kind="field"):
    """Write a ScalarField or VectorField; kind tags velocity vs displacement."""
    comps = field.components if isinstance(field, VectorField) else (field,)
    grid = comps[0].grid
    header = _header(grid, len(comps), kind)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        for c in comps:
            fh.write(np.ascontiguousarray(c.values, dtype="<f8").tobytes())


def read_snapshot(path):
    """Read a snapshot; returns (field, kind) with a VectorField when components > 1."""
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != MAGIC:
            raise ValueError(f"{path}: not a toruslab snapshot")
        header = json.loads(fh.readline().decode("ascii"))
        if header.get("normalization") != NORMALIZATION:
            raise ValueError(f"{path}: unsupported normalization tag")
        grid = TorusGrid(header["dim"], header["n_per_axis"])
        count = header["components"]
        raw = fh.read(count * grid.size * 8)
    data = np.frombuffer(raw, dtype="<f8").reshape((count,) + grid.shape)
    if count == 1:
        return ScalarField(grid, values=data[0].copy()), header["kind"]
    return VectorField.from_arrays(grid, [d.copy() for d in data]), header["kind"]
