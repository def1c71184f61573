"""Named experiment presets: one command per acceptance-style check."""

import copy

PRESETS = {
    "shear": {
        "description": "stationary shear column on the 2-torus; conservation checks",
        "config": {
            "run": {"seed": 101},
            "simulate": {
                "family": "l2_incompressible_2d", "n": 64, "dt": 1e-3,
                "horizon": 1.0, "checkpoints": 101,
                "initial": {"kind": "shear", "amplitude": 1.0},
                "checks": {"energy_drift": 1e-6, "transport_residual": 1e-3,
                           "mean_drift": 1e-10, "volume_defect": 1e-4,
                           "stationarity": 1e-6},
            },
        },
    },
    "taylor_green": {
        "description": "stationary cellular vortex array; conservation checks",
        "config": {
            "run": {"seed": 102},
            "simulate": {
                "family": "l2_incompressible_2d", "n": 64, "dt": 1e-3,
                "horizon": 1.0, "checkpoints": 101,
                "initial": {"kind": "taylor_green", "amplitude": 1.0},
                "checks": {"energy_drift": 1e-6, "transport_residual": 1e-3,
                           "mean_drift": 1e-10, "volume_defect": 1e-4,
                           "stationarity": 1e-6},
            },
        },
    },
    "translation": {
        "description": "constant velocity: geodesic is a rigid translation",
        "config": {
            "run": {"seed": 103},
            "simulate": {
                "family": "l2_incompressible_2d", "n": 32, "dt": 1e-3,
                "horizon": 1.0, "checkpoints": 51,
                "initial": {"kind": "translation", "mean_velocity": [0.3, 0.0]},
                "checks": {"energy_drift": 1e-10, "transport_residual": 1e-10,
                           "mean_drift": 1e-10, "volume_defect": 1e-10},
            },
        },
    },
    "random_smooth": {
        "description": "band-limited random ideal flow; vorticity transport suite",
        "config": {
            "run": {"seed": 1},
            "simulate": {
                "family": "l2_incompressible_2d", "n": 64, "dt": 1e-3,
                "horizon": 1.0, "checkpoints": 101,
                "initial": {"kind": "random_divfree", "max_mode": 4,
                            "amplitude": 0.25},
                "checks": {"energy_drift": 1e-6, "transport_residual": 1e-3,
                           "mean_drift": 1e-10, "volume_defect": 1e-4},
            },
        },
    },
    "euler_alpha_shear": {
        "description": "order-1 filtered metric (smoothing scale 1) on the shear column",
        "config": {
            "run": {"seed": 104},
            "simulate": {
                "family": "hr_incompressible_2d", "n": 64, "dt": 1e-3,
                "horizon": 1.0, "checkpoints": 101,
                "inertia": {"order": 1, "alpha": 1.0},
                "initial": {"kind": "shear", "amplitude": 1.0},
                "checks": {"energy_drift": 1e-6, "transport_residual": 1e-3,
                           "stationarity": 1e-6},
            },
        },
    },
    "burgers": {
        "description": "order-0 compressible family on the circle, guarded pre-blowup",
        "config": {
            "run": {"seed": 105},
            "simulate": {
                "family": "hr_compressible", "dim": 1, "n": 256, "dt": 2e-4,
                "horizon": 0.16, "checkpoints": 81,
                "inertia": {"order": 0},
                "initial": {"kind": "sine_1d", "amplitude": 1.0},
                "checks": {"energy_drift": 1e-6,
                           "coadjoint_momentum_residual": 1e-5},
            },
        },
    },
    "ch_momentum": {
        "description": "order-1 metric on the circle; pointwise momentum identity",
        "config": {
            "run": {"seed": 106},
            "simulate": {
                "family": "hr_compressible", "dim": 1, "n": 256, "dt": 1e-3,
                "horizon": 0.5, "checkpoints": 101,
                "inertia": {"order": 1, "alpha": 1.0},
                "initial": {"kind": "smooth_1d", "amplitude": 0.5},
                "checks": {"energy_drift": 1e-6,
                           "coadjoint_momentum_residual": 1e-5},
            },
        },
    },
    "axisym": {
        "description": "swirl-free symmetric 3D flow reduced to the transverse 2-torus",
        "config": {
            "run": {"seed": 107},
            "simulate": {
                "family": "axisym_swirlfree_3d", "dim": 3, "n": 64, "dt": 1e-3,
                "horizon": 1.0, "checkpoints": 101, "killing_axis": 2,
                "initial": {"kind": "random_divfree", "max_mode": 4,
                            "amplitude": 0.5},
                "checks": {"energy_drift": 1e-6, "transport_residual": 1e-3,
                           "swirl_max": 1e-10},
            },
        },
    },
    "symplectic_k1": {
        "description": "symplectic family on the 2-torus (coincides with the ideal fluid)",
        "config": {
            "run": {"seed": 108},
            "simulate": {
                "family": "symplectic_2k", "n": 64, "dt": 1e-3,
                "horizon": 1.0, "checkpoints": 101,
                "initial": {"kind": "shear", "amplitude": 1.0},
                "checks": {"energy_drift": 1e-6, "transport_residual": 1e-3,
                           "laplacian_conjugation_final": 1e-3},
            },
        },
    },
    "symplectic_k2": {
        "description": "symplectic family on the 4-torus at desk resolution",
        "config": {
            "run": {"seed": 109},
            "simulate": {
                "family": "symplectic_2k", "dim": 4, "n": 8, "dt": 2e-3,
                "horizon": 0.5, "checkpoints": 51,
                "initial": {"kind": "hamiltonian_random", "max_mode": 2,
                            "amplitude": 0.3},
                "checks": {"energy_drift": 1e-6},
            },
        },
    },
    "perturbed_shear_order": {
        "description": "dt sweep on a perturbed shear; observed RK4 order",
        "config": {
            "run": {"seed": 110},
            "simulate": {
                "family": "l2_incompressible_2d", "n": 32, "dt": 4e-3,
                "horizon": 0.5, "checkpoints": 11,
                "initial": {"kind": "perturbed_shear", "amplitude": 1.0,
                            "max_mode": 4, "epsilon": 0.05},
                "save_trajectory": False,
            },
            "sweep": {"grid": {"dt": [4e-3, 2e-3, 1e-3]}},
        },
    },
    "shoot_roundtrip": {
        "description": "recover a seeded band-limited velocity from its time-1 map",
        "config": {
            "run": {"seed": 2},
            "shoot": {
                "family": "l2_incompressible_2d", "n": 32, "dt": 2e-3,
                "tol": 1e-6,
                "roundtrip": {"kind": "random_divfree", "max_mode": 4,
                              "amplitude": 0.2},
                "checks": {"recovery_rel": 1e-3, "converged": True},
            },
        },
    },
    "shoot_identity": {
        "description": "identity target: zero velocity recovered immediately",
        "config": {
            "run": {"seed": 3},
            "shoot": {
                "family": "l2_incompressible_2d", "n": 32, "dt": 2e-3,
                "tol": 1e-6, "roundtrip": {"kind": "random_divfree",
                                           "max_mode": 2, "amplitude": 0.0},
                "checks": {"recovery_rel": 1e-3, "converged": True},
            },
        },
    },
}


def preset_config(name):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; run the presets command for a list")
    return copy.deepcopy(PRESETS[name]["config"])


def preset_list():
    return [(name, PRESETS[name]["description"]) for name in sorted(PRESETS)]
