"""Geodesic integrators for right-invariant metrics on torus diffeomorphism groups.

Each family advances its conserved scalar (vorticity, filtered vorticity,
symplectic vorticity) or works directly from the coadjoint conservation law,
with the flow map advanced jointly by the same RK4 step.  Quadratic terms are
dealiased by the 2/3 rule, so the truncated transport dynamics conserve
energy and enstrophy up to time-integration error.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    NonZeroSwirl,
    NotAxisymmetric,
    NotSymplecticField,
    ResolutionTooHigh,
    TorusLabError,
    WrongDimension,
)
from .flowmap import (
    DiffeoMap,
    check_cfl,
    invert_map,
    pullback,
    pullback_scalar,
    volume_defect,
    _det,
)
from .spectral import (
    TWO_PI,
    InertiaSpec,
    ScalarField,
    TorusGrid,
    VectorField,
    apply_inertia,
    divergence,
    evaluate_at,
    inverse_laplacian,
    laplacian,
    perp_gradient,
    rot,
    solve_inertia,
    spectral_derivative,
    _forward,
    _inverse,
    _require_zero_mean,
)

FAMILIES = (
    "l2_incompressible_2d",
    "hr_incompressible_2d",
    "hr_compressible",
    "axisym_swirlfree_3d",
    "symplectic_2k",
)

# Relative tolerance for family admissibility validation (divergence, swirl,
# axis independence, symplectic exactness).
FAMILY_TOL = 1e-10


class NotDivergenceFree(TorusLabError):
    """Velocity is not divergence-free to the family tolerance."""


@dataclass(frozen=True)
class MetricConfig:
    """Metric family, inertia operator, and the elliptic shift used by diagnostics."""

    family: str
    inertia: InertiaSpec = field(default_factory=InertiaSpec)
    shift: float = 1.0
    killing_axis: int = 2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.shift <= 0:
            raise ValueError("shift must be positive")
        if self.family in ("l2_incompressible_2d", "axisym_swirlfree_3d",
                           "symplectic_2k") and self.inertia.order != 0:
            raise ValueError(f"{self.family} uses the L2 metric (inertia order 0)")
        if self.family == "hr_incompressible_2d" and self.inertia.order < 1:
            raise ValueError("hr_incompressible_2d needs inertia order >= 1")
        if not 0 <= self.killing_axis <= 2:
            raise ValueError("killing_axis must be 0, 1 or 2")


def euler_alpha_config(alpha=1.0, shift=1.0):
    """The filtered-fluid model with smoothing scale alpha: order-1 inertia."""
    return MetricConfig("hr_incompressible_2d", InertiaSpec(order=1, alpha=alpha),
                        shift=shift)


@dataclass
class GeodesicTrajectory:
    """Time-sampled (map, velocity) pairs with per-checkpoint diagnostics."""

    times: np.ndarray
    maps: list
    velocities: list
    config: MetricConfig
    dt: float
    diagnostics: dict

    @property
    def grid(self):
        return self.maps[0].grid

    @property
    def initial_velocity(self):
        return self.velocities[0]

    @property
    def final_map(self):
        return self.maps[-1]

    def velocity_provider(self):
        """Callable t -> VectorField, linear in t between stored checkpoints."""
        times = self.times

        def provider(t):
            i = int(np.clip(np.searchsorted(times, t) - 1, 0, len(times) - 2))
            t0, t1 = times[i], times[i + 1]
            w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
            a, b = self.velocities[i], self.velocities[i + 1]
            return a * (1.0 - w) + b * w

        return provider


def metric_energy(u, inertia):
    """Geodesic energy <A u, u> in L2 over the torus."""
    symbol = inertia.symbol(u.grid)
    total = sum(float(np.sum(symbol * np.abs(c.spectral) ** 2)) for c in u.components)
    return TWO_PI ** u.grid.dim * total


def transport_residual(scalar0, scalar_t, gamma_t):
    """Relative L2 residual of (f_t o gamma_t) - f_0 against |f_0|."""
    pulled = pullback_scalar(scalar_t, gamma_t)
    return (pulled - scalar0).l2() / max(scalar0.l2(), 1e-300)


def coadjoint_pullback(gamma, v, inertia):
    """Coadjoint transport of v by gamma under the inertia metric.

    Returns A^-1(det(Dg) Dg^T (A v o g)); along a geodesic this reproduces
    the initial velocity for every t.
    """
    grid = gamma.grid
    av = apply_inertia(v, inertia)
    av_pulled = pullback(av, gamma)
    jac = gamma.jacobian
    det = _det(jac)
    vals = av_pulled.values()
    out = det * np.einsum("ji...,j...->i...", jac, vals)
    w = VectorField.from_arrays(grid, list(out))
    return solve_inertia(w, inertia)


def adjoint_action(gamma, v, inverse=None):
    """Group adjoint (Dgamma . v) o gamma^-1."""
    jac = gamma.jacobian
    vals = v.values()
    pushed = np.einsum("ij...,j...->i...", jac, vals)
    z = VectorField.from_arrays(gamma.grid, list(pushed))
    inv = inverse if inverse is not None else invert_map(gamma)
    return pullback(z, inv)


def laplacian_conjugation_residual(traj, index=-1, inverse=None):
    """Relative residual of Lap(u_t) = Ad_gamma Lap(u_0) at one checkpoint."""
    u0 = traj.initial_velocity
    lap0 = VectorField([laplacian(c) for c in u0.components])
    u_t = traj.velocities[index]
    lap_t = VectorField([laplacian(c) for c in u_t.components])
    transported = adjoint_action(traj.maps[index], lap0, inverse=inverse)
    return (lap_t - transported).l2() / max(lap0.l2(), 1e-300)


def require_divergence_free(u, what="velocity"):
    defect = divergence(u).l2()
    if defect > FAMILY_TOL * max(1.0, u.l2()):
        raise NotDivergenceFree(f"{what} has divergence norm {defect:.3e}")


# ---------------------------------------------------------------------------
# scalar-transport integrators (2D Euler, filtered 2D, symplectic)
# ---------------------------------------------------------------------------


def velocity_from_vorticity(omega, mean_velocity=(0.0, 0.0)):
    """Biot-Savart on the 2-torus: rotated gradient of the stream function plus mean."""
    _require_zero_mean(omega, "velocity_from_vorticity")
    u = perp_gradient(inverse_laplacian(omega))
    return u + VectorField.constant(omega.grid, mean_velocity)


def euler2d_rhs(omega, mean_velocity=(0.0, 0.0)):
    """Vorticity tendency -u . grad(omega) with 2/3-rule dealiasing."""
    u = velocity_from_vorticity(omega, mean_velocity)
    grid = omega.grid
    rhs = _advect_spectral(omega.spectral * grid.dealias_mask, u, grid)
    return ScalarField(grid, spectral=rhs)


def _advect_spectral(w_spec, u, grid):
    """Spectral tendency of -u . grad(w); inputs assumed inside the dealias mask."""
    total = np.zeros(grid.shape)
    for ax, comp in enumerate(u.components):
        dw = _inverse(1j * grid.wavenumber(ax) * w_spec)
        total += comp.values * dw
    rhs = -_forward(total) * grid.dealias_mask
    rhs[(0,) * grid.dim] = 0.0
    return rhs


def _checkpoint_layout(T, dt, checkpoints):
    if checkpoints < 2:
        raise ValueError("need at least 2 checkpoints")
    steps = max(1, round(T / dt))
    per = max(1, round(steps / (checkpoints - 1)))
    steps = per * (checkpoints - 1)
    return steps, per, T / steps


def _transport_trajectory(config, grid, w0, reconstruct, T, dt, checkpoints,
                          diagnostics=True, extra_diag=None,
                          jacobian_mode="spectral_diff", interp_refine=4):
    """Joint RK4 advance of a transported scalar and the flow map.

    reconstruct(w_spec) -> VectorField recovers the velocity from the scalar;
    the scalar is advected by -u.grad(w) and the displacement by u o gamma.
    interp_refine trades flow-advance interpolation accuracy for speed.
    """
    steps, per, dt_eff = _checkpoint_layout(T, dt, checkpoints)
    mask = grid.dealias_mask
    w = w0.spectral * mask
    w[(0,) * grid.dim] = 0.0
    w0_masked = ScalarField(grid, spectral=w.copy())
    d = grid.dim
    nodes = np.stack([a.reshape(-1) for a in grid.nodes], axis=1)
    disp = np.zeros_like(nodes)
    transport_j = jacobian_mode == "transport_ode"
    jac = np.broadcast_to(np.eye(d).reshape(d, d, 1), (d, d, grid.size)).copy() \
        if transport_j else None

    def stage(w_spec, disp_flat, jac_flat):
        u = reconstruct(w_spec)
        rhs_w = _advect_spectral(w_spec, u, grid)
        pts = nodes + disp_flat
        rhs_d = np.stack([evaluate_at(c, pts, refine=interp_refine)
                          for c in u.components], axis=1)
        rhs_j = None
        if transport_j:
            grads = np.empty((d, d, pts.shape[0]))
            for i, comp in enumerate(u.components):
                for j in range(d):
                    grads[i, j] = evaluate_at(spectral_derivative(comp, j), pts,
                                              refine=interp_refine)
            rhs_j = np.einsum("ik...,kj...->ij...", grads, jac_flat)
        return u, rhs_w, rhs_d, rhs_j

    def checkpoint_state(w_spec, disp_flat, jac_flat):
        u = reconstruct(w_spec)
        arrays = [disp_flat[:, i].reshape(grid.shape) for i in range(d)]
        jfull = None
        if transport_j:
            jfull = jac_flat.reshape((d, d) + grid.shape).copy()
        gamma = DiffeoMap(VectorField.from_arrays(grid, arrays), jacobian=jfull)
        return u, gamma

    times = [0.0]
    u_ckpt, gamma_ckpt = checkpoint_state(w, disp, jac)
    maps = [gamma_ckpt]
    velocities = [u_ckpt]
    diag = {}

    def record(u, gamma, w_spec):
        if not diagnostics:
            return
        rows = {
            "energy": metric_energy(u, config.inertia),
            "volume_defect": volume_defect(gamma),
            "scalar_l2": ScalarField(grid, spectral=w_spec).l2(),
            "transport_residual": transport_residual(
                w0_masked, ScalarField(grid, spectral=w_spec), gamma),
            "mean_drift": float(np.max(np.abs(u.mean() - velocities[0].mean()))),
        }
        if extra_diag is not None:
            rows.update(extra_diag(u, gamma, w_spec))
        for key, val in rows.items():
            diag.setdefault(key, []).append(val)

    record(u_ckpt, gamma_ckpt, w)
    t = 0.0
    for step in range(steps):
        u1, kw1, kd1, kj1 = stage(w, disp, jac)
        check_cfl(u1.max_norm(), dt_eff, grid)
        half = 0.5 * dt_eff
        _, kw2, kd2, kj2 = stage(w + half * kw1, disp + half * kd1,
                                 None if not transport_j else jac + half * kj1)
        _, kw3, kd3, kj3 = stage(w + half * kw2, disp + half * kd2,
                                 None if not transport_j else jac + half * kj2)
        _, kw4, kd4, kj4 = stage(w + dt_eff * kw3, disp + dt_eff * kd3,
                                 None if not transport_j else jac + dt_eff * kj3)
        w = w + (dt_eff / 6.0) * (kw1 + 2 * kw2 + 2 * kw3 + kw4)
        disp = disp + (dt_eff / 6.0) * (kd1 + 2 * kd2 + 2 * kd3 + kd4)
        if transport_j:
            jac = jac + (dt_eff / 6.0) * (kj1 + 2 * kj2 + 2 * kj3 + kj4)
        t += dt_eff
        if (step + 1) % per == 0:
            u_ckpt, gamma_ckpt = checkpoint_state(w, disp, jac)
            times.append(t)
            maps.append(gamma_ckpt)
            velocities.append(u_ckpt)
            record(u_ckpt, gamma_ckpt, w)

    diag = {k: np.asarray(v) for k, v in diag.items()}
    return GeodesicTrajectory(np.asarray(times), maps, velocities, config, dt_eff, diag)


def integrate_euler2d(omega0, mean_velocity=(0.0, 0.0), T=1.0, dt=1e-3,
                      checkpoints=101, config=None, diagnostics=True,
                      jacobian_mode="spectral_diff", interp_refine=4):
    """Ideal-fluid geodesic on the 2-torus driven by vorticity transport."""
    grid = omega0.grid
    if grid.dim != 2:
        raise WrongDimension("integrate_euler2d needs a 2D grid")
    _require_zero_mean(omega0, "integrate_euler2d")
    config = config or MetricConfig("l2_incompressible_2d")
    mean = tuple(float(v) for v in mean_velocity)

    def reconstruct(w_spec):
        return velocity_from_vorticity(ScalarField(grid, spectral=w_spec), mean)

    def extra(u, gamma, w_spec):
        return {"enstrophy": ScalarField(grid, spectral=w_spec).l2() ** 2}

    return _transport_trajectory(config, grid, omega0, reconstruct, T, dt,
                                 checkpoints, diagnostics, extra, jacobian_mode,
                                 interp_refine)


def integrate_higher_order_2d(u0, inertia, T=1.0, dt=1e-3, checkpoints=101,
                              config=None, diagnostics=True,
                              jacobian_mode="spectral_diff", interp_refine=4):
    """Geodesic of the order-r metric on volumorphisms of the 2-torus.

    Advances the filtered vorticity q = rot(A u) by transport and recovers
    u by inverting rot on A^-1 q.  For inertia order 0 this is exactly the
    ideal-fluid integrator.
    """
    grid = u0.grid
    if grid.dim != 2:
        raise WrongDimension("integrate_higher_order_2d needs a 2D grid")
    require_divergence_free(u0, "initial velocity")
    config = config or MetricConfig(
        "hr_incompressible_2d" if inertia.order >= 1 else "l2_incompressible_2d",
        inertia)
    mean = tuple(u0.mean())
    q0 = rot(apply_inertia(u0, inertia))
    symbol = inertia.symbol(grid)

    def reconstruct(q_spec):
        omega = ScalarField(grid, spectral=q_spec / symbol)
        return velocity_from_vorticity(omega, mean)

    def extra(u, gamma, q_spec):
        return {"filtered_enstrophy": ScalarField(grid, spectral=q_spec).l2() ** 2}

    return _transport_trajectory(config, grid, q0, reconstruct, T, dt,
                                 checkpoints, diagnostics, extra, jacobian_mode,
                                 interp_refine)


# ---------------------------------------------------------------------------
# coadjoint-driven integrator on the full diffeomorphism group (n = 1 or 2)
# ---------------------------------------------------------------------------


def blowup_horizon(u0):
    """1D slope-based blowup estimate for the order-0 compressible family."""
    du = spectral_derivative(u0.components[0], 0).values
    worst = float(du.min())
    if worst >= 0:
        return np.inf
    return -1.0 / (3.0 * worst)


def _pointwise_momentum_solve(jac, det, m_vals):
    """Solve (det * J^T) w = m at every node."""
    d = jac.shape[0]
    if d == 1:
        return m_vals / (det * jac[0, 0])[None]
    if d == 2:
        a, b = jac[0, 0], jac[1, 0]
        c, e = jac[0, 1], jac[1, 1]
        # J^T rows: (a, b), (c, e); inverse of det*J^T via adjugate
        denom = det * (a * e - b * c)
        w0 = (e * m_vals[0] - b * m_vals[1]) / denom
        w1 = (-c * m_vals[0] + a * m_vals[1]) / denom
        return np.stack([w0, w1])
    raise WrongDimension("coadjoint integrator supports dim 1 and 2")


def integrate_epdiff_lagrangian(u0, inertia, T=1.0, dt=1e-3, checkpoints=101,
                                config=None, diagnostics=True):
    """Geodesic on the full diffeomorphism group via the coadjoint conservation law.

    Each stage recovers the Eulerian velocity from the initial momentum:
    u = A^-1 [ (det(Dg) Dg^T)^-1 (A u0) o g^-1 ], then advances g by u o g.
    For inertia order 0 (dim 1) the map inversion drops out since u o g is
    the solved momentum itself; that desk-scale regime is guarded to half
    the slope-based blowup horizon.
    """
    grid = u0.grid
    d = grid.dim
    if d not in (1, 2):
        raise WrongDimension("coadjoint integrator supports dim 1 and 2")
    r = inertia.order
    if d >= 2 and r < 1:
        raise ValueError("inertia order >= 1 required for dim >= 2")
    if r == 0:
        horizon = blowup_horizon(u0)
        if T > 0.5 * horizon * (1 + 1e-12):
            raise ValueError(
                f"horizon {T} exceeds half the blowup estimate {horizon:.4f}")
    config = config or MetricConfig("hr_compressible", inertia)
    steps, per, dt_eff = _checkpoint_layout(T, dt, checkpoints)
    nodes = np.stack([a.reshape(-1) for a in grid.nodes], axis=1)
    disp = np.zeros_like(nodes)
    m0_vals = apply_inertia(u0, inertia).values()

    def solved_momentum(disp_flat):
        arrays = [disp_flat[:, i].reshape(grid.shape) for i in range(d)]
        gamma = DiffeoMap.from_arrays(grid, arrays)
        jac = gamma.jacobian
        det = _det(jac)
        w_vals = _pointwise_momentum_solve(jac, det, m0_vals)
        return gamma, VectorField.from_arrays(grid, list(w_vals))

    def eulerian_velocity(gamma, w):
        if r == 0:
            return pullback(w, invert_map(gamma))
        return solve_inertia(pullback(w, invert_map(gamma)), inertia)

    def stage(disp_flat):
        gamma, w = solved_momentum(disp_flat)
        if r == 0:
            # u o gamma equals the solved momentum directly
            return np.stack([c.values.reshape(-1) for c in w.components], axis=1)
        u = eulerian_velocity(gamma, w)
        pts = nodes + disp_flat
        return np.stack([evaluate_at(c, pts) for c in u.components], axis=1)

    def checkpoint_state(disp_flat):
        gamma, w = solved_momentum(disp_flat)
        return gamma, eulerian_velocity(gamma, w)

    times = [0.0]
    gamma0, u_ck = checkpoint_state(disp)
    maps = [gamma0]
    velocities = [u_ck]
    diag = {}

    def record(gamma, u):
        if not diagnostics:
            return
        recovered = coadjoint_pullback(gamma, u, inertia)
        rows = {
            "energy": metric_energy(u, config.inertia),
            "coadjoint_momentum_residual": (recovered - u0).l2() / max(u0.l2(), 1e-300),
            "det_min": float(gamma.det_jacobian().min()),
        }
        for key, val in rows.items():
            diag.setdefault(key, []).append(val)

    record(gamma0, u_ck)
    t = 0.0
    for step in range(steps):
        k1 = stage(disp)
        check_cfl(np.abs(k1).max(), dt_eff, grid)
        half = 0.5 * dt_eff
        k2 = stage(disp + half * k1)
        k3 = stage(disp + half * k2)
        k4 = stage(disp + dt_eff * k3)
        disp = disp + (dt_eff / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt_eff
        if (step + 1) % per == 0:
            gamma, u = checkpoint_state(disp)
            times.append(t)
            maps.append(gamma)
            velocities.append(u)
            record(gamma, u)

    diag = {k: np.asarray(v) for k, v in diag.items()}
    return GeodesicTrajectory(np.asarray(times), maps, velocities, config, dt_eff, diag)


# ---------------------------------------------------------------------------
# axisymmetric swirl-free reduction on the 3-torus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AxisymmetricState:
    """Planar reduction of a swirl-free axisymmetric 3D velocity."""

    killing_axis: int
    planar_velocity: VectorField


def axisym_reduce(u0, killing_axis=2):
    """Validate axis independence and zero swirl, then reduce to the transverse 2-torus."""
    grid = u0.grid
    if grid.dim != 3 or u0.dim != 3:
        raise WrongDimension("axisym_reduce expects a 3-component field on a 3D grid")
    scale = max(1.0, u0.max_norm())
    swirl = np.abs(u0.components[killing_axis].values).max()
    if swirl > FAMILY_TOL * scale:
        raise NonZeroSwirl(f"swirl component reaches {swirl:.3e}")
    varies = np.broadcast_to(np.abs(grid.wavenumber(killing_axis)) > 0, grid.shape)
    for i, comp in enumerate(u0.components):
        if i == killing_axis:
            continue
        dependent = np.linalg.norm(comp.spectral[varies])
        if dependent > FAMILY_TOL * max(1.0, np.linalg.norm(comp.spectral)):
            raise NotAxisymmetric(
                f"component {i} varies along axis {killing_axis} (norm {dependent:.3e})")
    planar_axes = [ax for ax in range(3) if ax != killing_axis]
    grid2 = TorusGrid(2, grid.n)
    slicer = [slice(None)] * 3
    slicer[killing_axis] = 0
    arrays = [u0.components[ax].values[tuple(slicer)] for ax in planar_axes]
    planar = VectorField.from_arrays(grid2, arrays)
    require_divergence_free(planar, "planar velocity")
    return AxisymmetricState(killing_axis, planar)


def axisym_integrate(state, T=1.0, dt=1e-3, checkpoints=101, diagnostics=True):
    """Advance the reduced planar system; the curl profile rides as 2D vorticity."""
    planar = state.planar_velocity
    omega0 = rot(planar)
    config = MetricConfig("axisym_swirlfree_3d", killing_axis=state.killing_axis)
    traj = integrate_euler2d(omega0, tuple(planar.mean()), T, dt, checkpoints,
                             config=config, diagnostics=diagnostics)
    if diagnostics:
        n_ck = len(traj.times)
        traj.diagnostics["swirl_max"] = np.zeros(n_ck)
    return traj


def lift_axisymmetric_map(planar_map, killing_axis, grid3=None):
    """Extend a planar map to the 3-torus, constant along the symmetry axis."""
    grid3 = grid3 or TorusGrid(3, planar_map.grid.n)
    return DiffeoMap(lift_axisymmetric_field(planar_map.displacement,
                                             killing_axis, grid3))


def lift_axisymmetric_field(planar, killing_axis, grid3=None):
    """Extend a planar vector field to 3D with zero swirl component."""
    grid3 = grid3 or TorusGrid(3, planar.grid.n)
    planar_axes = [ax for ax in range(3) if ax != killing_axis]
    arrays = [np.zeros(grid3.shape) for _ in range(3)]
    for comp, ax in zip(planar.components, planar_axes):
        vals = comp.values
        expanded = np.expand_dims(vals, axis=killing_axis)
        arrays[ax] = np.broadcast_to(expanded, grid3.shape).copy()
    return VectorField.from_arrays(grid3, arrays)


# ---------------------------------------------------------------------------
# symplectomorphism family on the 2k-torus
# ---------------------------------------------------------------------------


def symplectic_one_form(u):
    """Covector components of the symplectic pairing with u (pairs of axes)."""
    comps = []
    for p in range(u.dim // 2):
        comps.append(-1.0 * u.components[2 * p + 1])
        comps.append(1.0 * u.components[2 * p])
    return comps


def symplectic_form_defect(u):
    """Max norm of the exterior derivative of the symplectic one-form of u."""
    alpha = symplectic_one_form(u)
    worst = 0.0
    for i in range(u.dim):
        for j in range(i + 1, u.dim):
            comp = spectral_derivative(alpha[j], i) - spectral_derivative(alpha[i], j)
            worst = max(worst, float(np.abs(comp.values).max()))
    return worst


def symplectic_vorticity(u):
    """Codifferential of the symplectic one-form: the transported scalar."""
    total = None
    for p in range(u.dim // 2):
        term = (spectral_derivative(u.components[2 * p + 1], 2 * p) -
                spectral_derivative(u.components[2 * p], 2 * p + 1))
        total = term if total is None else total + term
    return total


def hamiltonian_field(f):
    """Velocity with stream/Hamiltonian function f on the 2k-torus."""
    comps = []
    for p in range(f.grid.dim // 2):
        comps.append(spectral_derivative(f, 2 * p + 1))
        comps.append(-1.0 * spectral_derivative(f, 2 * p))
    return VectorField(comps)


def symplectic_integrate(u0, T=1.0, dt=1e-3, checkpoints=101, k=None,
                         diagnostics=True, config=None):
    """Geodesic of the L2 metric on symplectomorphisms of the 2k-torus.

    For k = 1 this coincides with the ideal-fluid integrator; for k = 2 the
    symplectic vorticity is advected directly (resolution capped at 8).
    """
    grid = u0.grid
    if grid.dim % 2 != 0:
        raise WrongDimension("symplectic family needs an even-dimensional torus")
    kk = grid.dim // 2
    if k is not None and k != kk:
        raise ValueError(f"grid dimension {grid.dim} implies k={kk}, got k={k}")
    if kk not in (1, 2):
        raise WrongDimension("symplectic family supports k = 1 or 2")
    if kk == 2 and grid.n > 8:
        raise ResolutionTooHigh("k = 2 runs are capped at 8 points per axis")
    defect = symplectic_form_defect(u0)
    if defect > FAMILY_TOL * max(1.0, u0.max_norm()):
        raise NotSymplecticField(
            f"one-form of u0 is not closed (defect {defect:.3e})")
    config = config or MetricConfig("symplectic_2k")
    rho0 = symplectic_vorticity(u0)
    mean = tuple(u0.mean())

    if kk == 1:
        traj = integrate_euler2d(rho0, mean, T, dt, checkpoints, config=config,
                                 diagnostics=diagnostics)
    else:
        def reconstruct(rho_spec):
            rho = ScalarField(grid, spectral=rho_spec)
            f = -1.0 * inverse_laplacian(rho)
            return hamiltonian_field(f) + VectorField.constant(grid, mean)

        # refine 2 keeps 4D interpolation tractable; its error sits far below
        # the n<=8 truncation floor of this family
        traj = _transport_trajectory(config, grid, rho0, reconstruct, T, dt,
                                     checkpoints, diagnostics, interp_refine=2)
    if diagnostics:
        traj.diagnostics["laplacian_conjugation_residual_final"] = np.array(
            [laplacian_conjugation_residual(traj)])
    return traj


# ---------------------------------------------------------------------------
# family validation and the exponential map
# ---------------------------------------------------------------------------


def validate_family(u0, config):
    """Check u0 against the admissibility constraints of the configured family."""
    family = config.family
    if family in ("l2_incompressible_2d", "hr_incompressible_2d"):
        if u0.grid.dim != 2:
            raise WrongDimension(f"{family} needs a 2D grid")
        require_divergence_free(u0, "initial velocity")
    elif family == "axisym_swirlfree_3d":
        axisym_reduce(u0, config.killing_axis)
    elif family == "symplectic_2k":
        defect = symplectic_form_defect(u0)
        if defect > FAMILY_TOL * max(1.0, u0.max_norm()):
            raise NotSymplecticField(f"one-form defect {defect:.3e}")


def integrate_family(u0, config, T=1.0, dt=1e-3, checkpoints=101, diagnostics=True,
                     interp_refine=4, jacobian_mode="spectral_diff"):
    """Run the configured family's integrator from the initial velocity u0."""
    family = config.family
    validate_family(u0, config)
    if family in ("l2_incompressible_2d", "hr_incompressible_2d"):
        return integrate_higher_order_2d(u0, config.inertia, T, dt, checkpoints,
                                         config=config, diagnostics=diagnostics,
                                         jacobian_mode=jacobian_mode,
                                         interp_refine=interp_refine)
    if jacobian_mode != "spectral_diff":
        raise ValueError(f"jacobian_mode {jacobian_mode!r} is only supported by "
                         "the 2D transport families")
    if family == "hr_compressible":
        return integrate_epdiff_lagrangian(u0, config.inertia, T, dt, checkpoints,
                                           config=config, diagnostics=diagnostics)
    if family == "axisym_swirlfree_3d":
        state = axisym_reduce(u0, config.killing_axis)
        return axisym_integrate(state, T, dt, checkpoints, diagnostics=diagnostics)
    if family == "symplectic_2k":
        return symplectic_integrate(u0, T, dt, checkpoints, diagnostics=diagnostics,
                                    config=config)
    raise ValueError(f"unknown family {family!r}")


def exp_map(u0, config, dt=1e-3, checkpoints=2, interp_refine=4):
    """Time-1 flow map of the geodesic with initial velocity u0.

    For the axisymmetric family the reduced planar map is lifted back to the
    3-torus (block-diagonal Jacobian, identity along the symmetry axis).
    """
    traj = integrate_family(u0, config, T=1.0, dt=dt, checkpoints=checkpoints,
                            diagnostics=False, interp_refine=interp_refine)
    final = traj.final_map
    if config.family == "axisym_swirlfree_3d":
        return lift_axisymmetric_map(final, config.killing_axis,
                                     TorusGrid(3, u0.grid.n))
    return final
