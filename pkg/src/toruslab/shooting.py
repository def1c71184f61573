"""Two-point boundary value solver: recover u0 with time-1 flow matching a target map.

The solver is a damped Gauss-Newton iteration on the L2 displacement
residual, with matrix-free normal equations solved by conjugate gradient.
Jacobian actions come from central finite differences of the forward
integrator, so the solver is family-agnostic; the transpose action reuses
the forward linearization projected onto the admissible space, which is
self-adjoint to leading order near the identity (the regime enforced by the
basin guard).  A coarse-to-fine continuation over Fourier cutoffs keeps the
iteration in the right basin; coarse stages integrate with proportionally
larger steps, the final stage with the configured dt.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NotConverged
from .flowmap import DiffeoMap
from .geodesics import MetricConfig, exp_map
from .regularity import RegularityReport, regularity_report
from .spectral import VectorField, l2_inner


@dataclass
class ShootingProblem:
    """Target map, metric family, and solver controls."""

    target: DiffeoMap
    config: MetricConfig
    dt: float = 2e-3
    tol: float = 1e-6
    max_iter: int = 30
    coarse_to_fine: tuple = (2, 4, 8, "full")
    basin_guard: float = 0.5
    cg_iters: int = 4
    cg_rtol: float = 0.25
    fd_scale: float = 1e-4
    line_search_halvings: int = 20
    condition_band: int = 1
    interp_refine: int = 2

    def validate(self):
        if self.target.det_jacobian().min() <= 0:
            raise ValueError("target map is not orientation-preserving")
        peak = self.target.max_displacement()
        if peak > self.basin_guard:
            raise ValueError(
                f"target displacement {peak:.3f} exceeds the basin guard "
                f"{self.basin_guard}; the solver is local at the identity")
        if self.tol <= 0 or self.dt <= 0 or self.max_iter < 1:
            raise ValueError("tol, dt must be positive and max_iter >= 1")


@dataclass
class ShootingReport:
    """Solver outcome: recovered velocity, residual history, diagnostics."""

    u0: VectorField
    residual_history: list
    converged: bool
    dexp_condition: float
    iterations: int
    stage_residuals: dict
    regularity: tuple = None


def _band_mask(grid, cutoff):
    keep = np.ones(grid.shape, dtype=bool)
    for ax in range(grid.dim):
        keep &= np.abs(grid.wavenumber(ax)) <= cutoff
    return keep


def project_admissible(u, config, cutoff=None):
    """Project onto the family's admissible space, optionally band-limited.

    Modes outside the 2/3-rule band are always removed: the dealiased
    dynamics are exactly independent of them, so they lie in the kernel of
    the flow linearization and are unidentifiable from any target map.
    This also keeps the projection Hermitian-safe (the mode-wise projection
    tensors are not even at the self-conjugate Nyquist rows).
    """
    grid = u.grid
    spectra = u.spectra() * grid.dealias_mask
    if cutoff is not None and cutoff != "full":
        spectra = spectra * _band_mask(grid, int(cutoff))
    family = config.family
    zero = (0,) * grid.dim
    means = spectra[(slice(None),) + zero].copy()
    if family in ("l2_incompressible_2d", "hr_incompressible_2d",
                  "axisym_swirlfree_3d") or (family == "symplectic_2k"
                                             and grid.dim == 2):
        if family == "axisym_swirlfree_3d":
            axis = config.killing_axis
            spectra[axis] = 0.0
            means[axis] = 0.0
            spectra = spectra * (grid.wavenumber(axis) == 0)
        kvecs = np.stack([np.broadcast_to(grid.wavenumber(ax).astype(float), grid.shape)
                          for ax in range(grid.dim)])
        k2 = grid.k_squared.copy()
        k2[zero] = 1.0
        udotk = np.einsum("a...,a...->...", spectra, kvecs)
        spectra = spectra - kvecs * (udotk / k2)
    elif family == "symplectic_2k":
        d = grid.dim
        pattern = np.empty((d,) + grid.shape)
        for p in range(d // 2):
            pattern[2 * p] = grid.wavenumber(2 * p + 1)
            pattern[2 * p + 1] = -grid.wavenumber(2 * p)
        norm2 = np.einsum("a...,a...->...", pattern, pattern)
        norm2[norm2 == 0.0] = 1.0
        coeff = np.einsum("a...,a...->...", pattern, spectra) / norm2
        spectra = pattern * coeff
    # compressible family: every field is admissible
    for ax in range(u.dim):
        spectra[(ax,) + zero] = means[ax]
    return VectorField.from_spectra(grid, list(spectra))


def _displacement_residual(eta, target):
    return eta.displacement - target.displacement


def _rel_norm(r, target):
    return r.l2() / max(target.displacement.l2(), 1e-12)


def dexp_action(u0, w, config, dt, h=None, richardson=False, interp_refine=4):
    """Central finite-difference action of the differential of the time-1 flow.

    w is projected onto the family's admissible space (the linearization
    only acts there), normalized in L2, and the result rescaled, so the
    action is linear in w.  Directions that are numerically zero relative
    to the base point return a zero action: normalizing round-off debris
    would otherwise amplify its inadmissible residue into the probes.
    With richardson=True also returns the step-halving error estimate
    |D_h - D_2h| / 3 in L2.
    """
    w = project_admissible(w, config)
    scale = w.l2()
    if scale <= 1e-13 * (1.0 + u0.l2()):
        return (VectorField.zeros(u0.grid, u0.dim), 0.0) if richardson \
            else VectorField.zeros(u0.grid, u0.dim)
    wn = w * (1.0 / scale)
    if h is None:
        h = 1e-4 * (1.0 + u0.l2())

    def diff(step):
        plus = exp_map(u0 + step * wn, config, dt, interp_refine=interp_refine)
        minus = exp_map(u0 + (-step) * wn, config, dt, interp_refine=interp_refine)
        return (plus.displacement - minus.displacement) * (1.0 / (2.0 * step))

    d_h = diff(h)
    if not richardson:
        return d_h * scale
    d_2h = diff(2.0 * h)
    est = (d_h - d_2h).l2() / 3.0
    return d_h * scale, est * scale


def _cg_normal(apply_fwd, rhs, iters, rtol):
    """CG on the (approximately self-adjoint) normal operator w -> J(J(w))."""
    x = rhs * 0.0
    r = rhs
    p = r
    rs = l2_inner(r, r)
    rs0 = rs
    for _ in range(iters):
        if rs <= (rtol ** 2) * rs0 or rs == 0.0:
            break
        jjp = apply_fwd(apply_fwd(p))
        denom = l2_inner(p, jjp)
        if denom <= 0.0:
            break
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * jjp
        rs_new = l2_inner(r, r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def _stage_dt(base_dt, cutoff, final_cutoff):
    """Coarse continuation stages run with power-of-two multiples of dt."""
    if cutoff == final_cutoff:
        return base_dt
    if cutoff == "full" or (isinstance(cutoff, int) and cutoff >= 8):
        return base_dt * 2.0
    return base_dt * 4.0


def shoot(problem):
    """Gauss-Newton shooting for the two-point boundary value problem."""
    problem.validate()
    config = problem.config
    target = problem.target
    grid = target.grid
    u0 = project_admissible(VectorField.zeros(grid, grid.dim), config)
    final_cutoff = problem.coarse_to_fine[-1]
    history = []
    stage_residuals = {}
    iterations = 0
    best = (np.inf, u0)
    converged = False

    for cutoff in problem.coarse_to_fine:
        dt_stage = _stage_dt(problem.dt, cutoff, final_cutoff)

        def proj(w, _cutoff=cutoff):
            return project_admissible(w, config, _cutoff)

        u0 = proj(u0)
        eta = exp_map(u0, config, dt_stage, interp_refine=problem.interp_refine)
        r = _displacement_residual(eta, target)
        res = _rel_norm(r, target)
        if not history:
            history.append(res)
        stage_accepted = True
        while res > problem.tol and iterations < problem.max_iter and stage_accepted:
            iterations += 1

            refine = problem.interp_refine

            def fwd(w, _u0=u0, _dt=dt_stage, _proj=proj):
                return _proj(dexp_action(_u0, _proj(w), config, _dt,
                                         interp_refine=refine))

            rhs = proj(dexp_action(u0, proj(r), config, dt_stage,
                                   interp_refine=refine)) * -1.0
            delta = _cg_normal(fwd, rhs, problem.cg_iters, problem.cg_rtol)
            if delta.l2() == 0.0:
                delta = rhs
            if delta.l2() == 0.0:
                # residual has no component in this stage's band: the stage
                # is exhausted, continue to the next cutoff
                break
            step = 1.0
            stage_accepted = False
            for _ in range(problem.line_search_halvings):
                trial = proj(u0 + step * delta)
                eta_trial = exp_map(trial, config, dt_stage,
                                    interp_refine=problem.interp_refine)
                r_trial = _displacement_residual(eta_trial, target)
                res_trial = _rel_norm(r_trial, target)
                # require improvement over the recorded history too, so the
                # reported residuals stay monotone across stage boundaries
                if res_trial < res and res_trial <= history[-1]:
                    u0, eta, r, res = trial, eta_trial, r_trial, res_trial
                    history.append(res)
                    stage_accepted = True
                    break
                step *= 0.5
        stage_residuals[str(cutoff)] = res
        if res < best[0]:
            best = (res, u0)
        if res <= problem.tol and cutoff == final_cutoff:
            converged = True

    # measure the returned iterate at the configured dt
    res_final = _rel_norm(_displacement_residual(
        exp_map(best[1], config, problem.dt, interp_refine=problem.interp_refine),
        target), target)
    converged = res_final <= problem.tol
    cond = dexp_condition_estimate(best[1], config, problem.dt * 4.0,
                                   band=problem.condition_band,
                                   interp_refine=problem.interp_refine)
    return ShootingReport(best[1], history, converged, cond, iterations,
                          stage_residuals)


def _half_space_modes(band, dim):
    """One representative per conjugate mode pair with |k|_inf <= band."""
    modes = []
    for idx in np.ndindex(*[2 * band + 1] * dim):
        k = tuple(i - band for i in idx)
        if all(v == 0 for v in k):
            continue
        nonzero = next(v for v in k if v != 0)
        if nonzero > 0:
            modes.append(k)
    return modes


def admissible_basis(grid, config, band):
    """Orthonormal basis of the band-limited admissible subspace (with means)."""
    candidates = []
    for comp in range(grid.dim):
        means = np.zeros(grid.dim)
        means[comp] = 1.0
        candidates.append(VectorField.constant(grid, means))
    for k in _half_space_modes(band, grid.dim):
        for comp in range(grid.dim):
            for part in (1.0, 1.0j):
                spec = np.zeros((grid.dim,) + grid.shape, dtype=complex)
                spec[(comp,) + tuple(np.mod(k, grid.n))] = part
                spec[(comp,) + tuple(np.mod([-v for v in k], grid.n))] = np.conj(part)
                candidates.append(VectorField.from_spectra(grid, list(spec)))
    basis = []
    for cand in candidates:
        v = project_admissible(cand, config, band)
        for e in basis:
            v = v - l2_inner(e, v) * e
        norm = v.l2()
        if norm > 1e-8:
            basis.append(v * (1.0 / norm))
    return basis


def dexp_condition_estimate(u0, config, dt, band=1, interp_refine=4):
    """Condition number of the FD Jacobian restricted to the band-limited subspace."""
    basis = admissible_basis(u0.grid, config, band)
    n = len(basis)
    mat = np.empty((n, n))
    for j, e in enumerate(basis):
        col = project_admissible(
            dexp_action(u0, e, config, dt, interp_refine=interp_refine), config)
        for i, f in enumerate(basis):
            mat[i, j] = l2_inner(f, col)
    return float(np.linalg.cond(mat))


@dataclass
class RegularityPair:
    """Side-by-side spectral regularity of the target map and the recovered velocity."""

    target: RegularityReport
    recovered: RegularityReport
    slope_difference: float


def regularity_experiment(problem, report, s_values=(0.0, 1.0, 2.0)):
    """Decay-slope comparison between the target displacement and recovered u0."""
    if not report.converged:
        raise NotConverged("shooting did not converge; no regularity comparison")
    target_rep = regularity_report(problem.target.displacement, s_values)
    recovered_rep = regularity_report(report.u0, s_values)
    diff = recovered_rep.decay_slope - target_rep.decay_slope
    pair = RegularityPair(target_rep, recovered_rep, float(diff))
    report.regularity = (target_rep, recovered_rep)
    return pair
