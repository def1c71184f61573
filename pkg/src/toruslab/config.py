"""Experiment configuration: YAML loading, strict validation, canonical echo.

A config is a nested mapping with a ``run`` section plus one section per
subcommand.  Unknown keys are rejected; numeric fields are checked before
any allocation, and every run writes the fully-resolved config next to its
outputs so results are reproducible from the output directory alone.
"""

import hashlib

import yaml

from .errors import ConfigError

_INITIAL_KINDS = (
    "shear", "taylor_green", "translation", "random_divfree", "power_law",
    "perturbed_shear", "sine_1d", "smooth_1d", "random_vector",
    "hamiltonian_random", "file",
)

_FAMILIES = ("l2_incompressible_2d", "hr_incompressible_2d", "hr_compressible",
             "axisym_swirlfree_3d", "symplectic_2k")

RUN_DEFAULTS = {"seed": 0, "out": None}

SIMULATE_DEFAULTS = {
    "family": "l2_incompressible_2d",
    "dim": 2,
    "n": 64,
    "inertia": {"order": 0, "alpha": 1.0},
    "shift": 1.0,
    "killing_axis": 2,
    "dt": 1e-3,
    "horizon": 1.0,
    "checkpoints": 101,
    "jacobian_mode": "spectral_diff",
    "initial": {
        "kind": "shear",
        "amplitude": 1.0,
        "mean_velocity": [0.0, 0.0],
        "max_mode": 4,
        "slope": -4.0,
        "epsilon": 0.05,
        "path": None,
    },
    "save_trajectory": True,
    "snapshots": {"maps": False, "jacobian": False, "det": False},
    "checks": {},
}

DIAGNOSE_DEFAULTS = {
    "trajectory": None,
    "family": None,
    "shift": "auto",
    "samples": 100,
    "transfer_samples": 8,
    "stride": 1,
    "min_checkpoints": 50,
    "max_mode": None,
    "checks": {},
}

SHOOT_DEFAULTS = {
    "target": None,
    "family": "l2_incompressible_2d",
    "dim": 2,
    "n": 32,
    "inertia": {"order": 0, "alpha": 1.0},
    "killing_axis": 2,
    "dt": 2e-3,
    "tol": 1e-6,
    "max_iter": 30,
    "cutoffs": [2, 4, 8, "full"],
    "basin_guard": 0.5,
    "condition_band": 1,
    "roundtrip": None,  # optional: {kind, max_mode, amplitude, slope}
    "checks": {},
}

ROUNDTRIP_DEFAULTS = {"kind": "random_divfree", "max_mode": 4, "amplitude": 0.2,
                      "slope": -4.0}

SWEEP_DEFAULTS = {"grid": {}, "max_runs": 256}

_SECTION_DEFAULTS = {
    "run": RUN_DEFAULTS,
    "simulate": SIMULATE_DEFAULTS,
    "diagnose": DIAGNOSE_DEFAULTS,
    "shoot": SHOOT_DEFAULTS,
    "sweep": SWEEP_DEFAULTS,
}


def _merge(defaults, given, path):
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ConfigError(path, f"expected a mapping, got {type(given).__name__}")
    out = {}
    for key, default in defaults.items():
        if key in given and isinstance(default, dict) and default:
            out[key] = _merge(default, given[key], f"{path}.{key}")
        elif key in given:
            out[key] = given[key]
        else:
            out[key] = default
    for key in given:
        if key not in defaults:
            raise ConfigError(f"{path}.{key}", "unknown key")
    return out


def _require_positive(cfg, path, *keys):
    for key in keys:
        val = cfg[key]
        if not isinstance(val, (int, float)) or val <= 0:
            raise ConfigError(f"{path}.{key}", f"must be positive, got {val!r}")


def validate_config(raw):
    """Merge with defaults and validate; returns the fully-resolved config."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping")
    for key in raw:
        if key not in _SECTION_DEFAULTS:
            raise ConfigError(key, "unknown section")
    cfg = {name: _merge(defaults, raw.get(name), name)
           for name, defaults in _SECTION_DEFAULTS.items()}

    if not isinstance(cfg["run"]["seed"], int):
        raise ConfigError("run.seed", "must be an integer")

    sim = cfg["simulate"]
    if sim["family"] not in _FAMILIES:
        raise ConfigError("simulate.family", f"unknown family {sim['family']!r}")
    _require_positive(sim, "simulate", "n", "dt", "horizon")
    if sim["dim"] not in (1, 2, 3, 4):
        raise ConfigError("simulate.dim", "must be 1, 2, 3 or 4")
    if sim["checkpoints"] < 2:
        raise ConfigError("simulate.checkpoints", "need at least 2")
    if sim["inertia"]["order"] < 0:
        raise ConfigError("simulate.inertia.order", "must be >= 0")
    _require_positive(sim["inertia"], "simulate.inertia", "alpha")
    if sim["initial"]["kind"] not in _INITIAL_KINDS:
        raise ConfigError("simulate.initial.kind",
                          f"unknown kind {sim['initial']['kind']!r}")
    if sim["jacobian_mode"] not in ("spectral_diff", "transport_ode"):
        raise ConfigError("simulate.jacobian_mode", "spectral_diff or transport_ode")
    if sim["shift"] != "auto":
        _require_positive(sim, "simulate", "shift")

    diag = cfg["diagnose"]
    _require_positive(diag, "diagnose", "samples", "transfer_samples", "stride")
    if diag["shift"] != "auto":
        _require_positive(diag, "diagnose", "shift")

    shoot = cfg["shoot"]
    if shoot["family"] not in _FAMILIES:
        raise ConfigError("shoot.family", f"unknown family {shoot['family']!r}")
    _require_positive(shoot, "shoot", "n", "dt", "tol", "max_iter", "basin_guard")
    if shoot["roundtrip"] is not None:
        shoot["roundtrip"] = _merge(ROUNDTRIP_DEFAULTS, shoot["roundtrip"],
                                    "shoot.roundtrip")
    for i, cut in enumerate(shoot["cutoffs"]):
        if cut != "full" and (not isinstance(cut, int) or cut < 1):
            raise ConfigError(f"shoot.cutoffs[{i}]", "positive integer or 'full'")

    sweep = cfg["sweep"]
    allowed = {"dt", "n", "shift", "order", "checkpoints"}
    for key in sweep["grid"]:
        if key not in allowed:
            raise ConfigError(f"sweep.grid.{key}",
                              f"sweepable keys are {sorted(allowed)}")
        if not isinstance(sweep["grid"][key], list) or not sweep["grid"][key]:
            raise ConfigError(f"sweep.grid.{key}", "must be a non-empty list")
    return cfg


def load_config(path):
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return validate_config(raw)


def canonical_yaml(cfg):
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False)


def config_hash(cfg):
    return hashlib.sha256(canonical_yaml(cfg).encode()).hexdigest()
