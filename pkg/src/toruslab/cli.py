"""Command-line driver: simulate, diagnose, shoot, sweep, presets.

Every run writes its resolved config, tables, and a deterministic manifest
into the output directory.  Exit status is 0 when all configured checks
pass, 1 when any check fails, and 2 on configuration or input errors.
The default output root comes from TORUSLAB_OUTPUT_ROOT (falling back to
./runs); --out overrides it per run.
"""

import os
import sys

import click

from .config import load_config, validate_config
from .errors import TorusLabError
from .presets import preset_config, preset_list
from .runner import run_diagnose, run_shoot, run_simulate, run_sweep

ENV_OUTPUT_ROOT = "TORUSLAB_OUTPUT_ROOT"


def _resolve_config(config_path, preset, seed):
    if config_path and preset:
        raise click.UsageError("use either --config or --preset, not both")
    if preset:
        cfg = validate_config(preset_config(preset))
    elif config_path:
        cfg = load_config(config_path)
    else:
        cfg = validate_config({})
    if seed is not None:
        cfg["run"]["seed"] = seed
    return cfg


def _resolve_out(cfg, out, label):
    if out:
        return out
    if cfg["run"]["out"]:
        return cfg["run"]["out"]
    root = os.environ.get(ENV_OUTPUT_ROOT, "runs")
    return os.path.join(root, f"{label}-seed{cfg['run']['seed']}")


def _finish(manifest):
    failed = [c for c in manifest["checks"] if not c["passed"]]
    for check in manifest["checks"]:
        status = "pass" if check["passed"] else "FAIL"
        click.echo(f"[{status}] {check['name']}: {check['value']:.6e} "
                   f"({'<=' if check['mode'] == 'max' else '>='} "
                   f"{check['tolerance']:.6e})")
    if failed:
        sys.exit(1)


_common = [
    click.option("--config", "config_path", type=click.Path(exists=True),
                 help="YAML experiment configuration."),
    click.option("--preset", help="named built-in configuration (see presets)."),
    click.option("--out", type=click.Path(), help="output directory."),
    click.option("--seed", type=int, help="override run.seed."),
]


def common_options(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Pseudospectral lab for geodesic flows on torus diffeomorphism groups."""


@main.command()
@common_options
def simulate(config_path, preset, out, seed):
    """Integrate a geodesic and record conservation diagnostics."""
    _run(run_simulate, "simulate", config_path, preset, out, seed)


@main.command()
@common_options
@click.option("--trajectory", type=click.Path(exists=True),
              help="trajectory directory written by simulate.")
def diagnose(config_path, preset, out, seed, trajectory):
    """Run the regularity diagnostics on a stored trajectory."""
    _run(run_diagnose, "diagnose", config_path, preset, out, seed,
         trajectory=trajectory)


@main.command()
@common_options
@click.option("--target", type=click.Path(exists=True),
              help="displacement snapshot of the target map.")
def shoot(config_path, preset, out, seed, target):
    """Solve the two-point boundary value problem for the initial velocity."""
    _run(run_shoot, "shoot", config_path, preset, out, seed, target=target)


@main.command()
@common_options
def sweep(config_path, preset, out, seed):
    """Cross-product parameter sweep with convergence-order tables."""
    _run(run_sweep, "sweep", config_path, preset, out, seed)


@main.command()
def presets():
    """List the built-in experiment presets."""
    for name, description in preset_list():
        click.echo(f"{name:24s} {description}")


def _run(fn, label, config_path, preset, out, seed, **kwargs):
    try:
        cfg = _resolve_config(config_path, preset, seed)
        outdir = _resolve_out(cfg, out, label)
        manifest = fn(cfg, outdir, **kwargs)
    except TorusLabError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"outputs: {outdir}")
    _finish(manifest)


if __name__ == "__main__":
    main()
