"""Seeded generators for band-limited random fields.

All samplers draw through an explicit numpy Generator so that scans and
presets are reproducible; per-sample generators should be spawned from a
master SeedSequence to stay order-independent.
"""

import numpy as np

from .spectral import ScalarField, VectorField, perp_gradient


def band_mask(grid, max_mode):
    """True on modes with |k_i| <= max_mode on every axis."""
    keep = np.ones(grid.shape, dtype=bool)
    for ax in range(grid.dim):
        keep &= np.abs(grid.wavenumber(ax)) <= max_mode
    return keep


def random_scalar(grid, rng, max_mode, amplitude=1.0, zero_mean=True):
    """Random real field with spectrum supported on |k_i| <= max_mode.

    Scaled so the max node value equals amplitude.
    """
    noise = rng.standard_normal(grid.shape)
    spec = np.fft.fftn(noise) / grid.size
    spec *= band_mask(grid, max_mode)
    if zero_mean:
        spec[(0,) * grid.dim] = 0.0
    f = ScalarField(grid, spectral=spec)
    peak = np.abs(f.values).max()
    if peak == 0.0:
        raise ValueError("sampler produced a zero field; widen the band")
    return f * (amplitude / peak)


def random_vector(grid, rng, max_mode, amplitude=1.0, zero_mean=True, dim=None):
    """Vector field with independent random band-limited components."""
    comps = [random_scalar(grid, rng, max_mode, amplitude, zero_mean)
             for _ in range(dim or grid.dim)]
    return VectorField(comps)


def random_divergence_free(grid, rng, max_mode, amplitude=1.0):
    """Divergence-free zero-mean field on the 2-torus from a random stream function."""
    psi = random_scalar(grid, rng, max_mode, 1.0)
    u = perp_gradient(psi)
    return u * (amplitude / u.max_norm())


def power_law_divergence_free(grid, rng, slope, max_mode=None, amplitude=1.0):
    """Divergence-free field whose stream-function modes scale like |k|^(slope-1).

    The velocity coefficients then scale like |k|^slope, which is what the
    spectral-decay diagnostics fit.
    """
    k2 = grid.k_squared.copy()
    k2[(0,) * grid.dim] = 1.0
    # Hermitian random phases: the transform of a real noise field
    noise_spec = np.fft.fftn(rng.standard_normal(grid.shape))
    noise_spec[np.abs(noise_spec) == 0.0] = 1.0
    phases = noise_spec / np.abs(noise_spec)
    spec = np.sqrt(k2) ** (slope - 1.0) * phases
    spec[(0,) * grid.dim] = 0.0
    # exclude Nyquist rows: i*k derivatives of self-conjugate modes are not
    # Hermitian, which would leave the sampled velocity slightly divergent
    spec = spec * band_mask(grid, min(max_mode or grid.n, grid.n // 2 - 1))
    psi = ScalarField(grid, spectral=spec)
    u = perp_gradient(psi)
    return u * (amplitude / u.max_norm())
