"""Executable regularity diagnostics for geodesic trajectories.

The central objects are the flow-dependent elliptic operator
``shift - sum p_ij d_i d_j`` with coefficients ``p = (Dg Dg^T) o g^-1``,
the endpoint identity tying the Laplacian of the time-1 map to a time
average of that operator along the flow, and the time-averaged conjugated
operator whose coercivity transfers endpoint smoothness to the initial
velocity.  Everything here is a pure function of stored trajectories.
"""

from dataclasses import dataclass

import numpy as np

from .errors import TooFewCheckpoints, ZeroField
from .flowmap import invert_map, pullback, pullback_scalar
from .geodesics import (
    adjoint_action,
    coadjoint_pullback,
    metric_energy,
    transport_residual,
)
from .sampling import random_divergence_free, random_vector
from .spectral import (
    TWO_PI,
    ScalarField,
    VectorField,
    apply_inertia,
    apply_inertia_scalar,
    fractional_laplacian,
    l2_inner,
    laplacian,
    rot,
    sobolev_norm,
    _forward,
    _inverse,
)

INCOMPRESSIBLE_FAMILIES = ("l2_incompressible_2d", "hr_incompressible_2d",
                           "axisym_swirlfree_3d", "symplectic_2k")


# ---------------------------------------------------------------------------
# flow-dependent elliptic operator
# ---------------------------------------------------------------------------


class DeformationOperator:
    """Second-order operator shift*v - sum p_ij d_i d_j v, coefficients from one map."""

    def __init__(self, shift, coeffs, source_map):
        self.shift = float(shift)
        self.coeffs = coeffs                      # (d, d, grid...) node values
        self.source_map = source_map
        self.grid = source_map.grid
        mask = self.grid.dealias_mask
        d = self.grid.dim
        self._masked = np.empty_like(coeffs)
        for i in range(d):
            for j in range(d):
                self._masked[i, j] = _inverse(_forward(coeffs[i, j]) * mask)

    def coeff_fields(self):
        d = self.grid.dim
        return [[ScalarField(self.grid, values=self.coeffs[i, j]) for j in range(d)]
                for i in range(d)]

    def with_shift(self, shift):
        """Same coefficients under a different shift (coefficients are shared)."""
        clone = object.__new__(DeformationOperator)
        clone.shift = float(shift)
        clone.coeffs = self.coeffs
        clone.source_map = self.source_map
        clone.grid = self.grid
        clone._masked = self._masked
        return clone

    def min_eigenvalue(self):
        """Smallest eigenvalue of the coefficient matrix over all nodes."""
        d = self.grid.dim
        if d == 1:
            return float(self.coeffs[0, 0].min())
        stacked = np.moveaxis(self.coeffs, (0, 1), (-2, -1))
        return float(np.linalg.eigvalsh(stacked)[..., 0].min())

    def apply(self, v):
        """Componentwise application with dealiased coefficient products."""
        grid = self.grid
        d = grid.dim
        mask = grid.dealias_mask
        out = []
        for comp in v.components:
            total = np.zeros(grid.shape)
            for i in range(d):
                di = 1j * grid.wavenumber(i) * (comp.spectral * mask)
                for j in range(d):
                    dij = _inverse(1j * grid.wavenumber(j) * di)
                    total += self._masked[i, j] * dij
            spec = self.shift * comp.spectral - _forward(total) * mask
            out.append(ScalarField(grid, spectral=spec))
        return VectorField(out)


def build_deformation_operator(gamma, shift, inverse=None):
    """Assemble the operator for one map: p = (Dg Dg^T) o g^-1, validated SPD."""
    grid = gamma.grid
    d = grid.dim
    jac = gamma.jacobian
    prod = np.einsum("ik...,jk...->ij...", jac, jac)
    inv = inverse if inverse is not None else invert_map(gamma)
    coeffs = np.empty((d, d) + grid.shape)
    for i in range(d):
        for j in range(i, d):
            field = ScalarField(grid, values=prod[i, j])
            pulled = pullback_scalar(field, inv).values
            coeffs[i, j] = pulled
            coeffs[j, i] = pulled
    op = DeformationOperator(shift, coeffs, gamma)
    lam_min = op.min_eigenvalue()
    if lam_min <= 0:
        raise ValueError(f"coefficient matrix not positive definite (min eig {lam_min:.3e})")
    return op


def apply_deformation_operator(op, v):
    return op.apply(v)


def coercivity_scan(op, samples, seed, max_mode=None):
    """Extremes of <Pv, v> / |v|_H1^2 over seeded random band-limited fields."""
    if samples < 1:
        raise ValueError("need at least one sample")
    grid = op.grid
    max_mode = max_mode or max(2, grid.n // 4)
    quotients = []
    for i in range(samples):
        rng = np.random.default_rng([int(seed), i])
        v = random_vector(grid, rng, max_mode, amplitude=1.0, zero_mean=False)
        num = l2_inner(op.apply(v), v)
        den = sobolev_norm(v, 1.0) ** 2
        quotients.append(num / den)
    return float(min(quotients)), float(max(quotients))


@dataclass
class ShiftSearchResult:
    """Outcome of the doubling search for a coercive elliptic shift."""

    shift: float
    min_quotient: float
    max_quotient: float
    converged: bool
    history: list


def shift_search(traj, samples=32, seed=0, time_indices=None, target=0.1,
                 cap=2.0 ** 16, inverses=None):
    """Double the shift from 1 until the scan min-quotient reaches the target.

    The scan takes the worst quotient over the sampled checkpoints of the
    trajectory (the estimate must hold uniformly in time).
    """
    if time_indices is None:
        last = len(traj.maps) - 1
        time_indices = sorted({0, last // 2, last})
    base_ops = {}
    for idx in time_indices:
        inv = None if inverses is None else inverses[idx]
        base_ops[idx] = build_deformation_operator(traj.maps[idx], 1.0, inverse=inv)
    history = []
    shift = 1.0
    while True:
        worst_min, worst_max = np.inf, -np.inf
        for idx in time_indices:
            lo, hi = coercivity_scan(base_ops[idx].with_shift(shift), samples, seed)
            worst_min = min(worst_min, lo)
            worst_max = max(worst_max, hi)
        history.append((shift, worst_min, worst_max))
        if worst_min >= target:
            return ShiftSearchResult(shift, worst_min, worst_max, True, history)
        if shift >= cap:
            return ShiftSearchResult(shift, worst_min, worst_max, False, history)
        shift *= 2.0


# ---------------------------------------------------------------------------
# endpoint identity and the transfer operator
# ---------------------------------------------------------------------------


def _simpson_weights(n):
    if n < 3 or n % 2 == 0:
        raise ValueError("composite Simpson needs an odd number of nodes >= 3")
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def compute_inverses(traj, tol=1e-12):
    """Inverse maps at every checkpoint (shared by the diagnostics below).

    Tighter than the public inversion contract: conjugation diagnostics are
    compared at the 1e-10 level, so the inverses must not be the floor.
    """
    return [invert_map(g, tol=tol) for g in traj.maps]


def _solve_jacobian(jac, vals):
    """Pointwise solve of Dg x = vals."""
    d = jac.shape[0]
    if d == 1:
        return vals / jac[0, 0][None]
    if d == 2:
        det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
        x0 = (jac[1, 1] * vals[0] - jac[0, 1] * vals[1]) / det
        x1 = (-jac[1, 0] * vals[0] + jac[0, 0] * vals[1]) / det
        return np.stack([x0, x1])
    stacked = np.moveaxis(jac, (0, 1), (-2, -1))
    rhs = np.moveaxis(vals, 0, -1)[..., None]
    sol = np.linalg.solve(stacked, rhs)[..., 0]
    return np.moveaxis(sol, -1, 0)


def _l2_of_arrays(grid, arrays):
    return VectorField.from_arrays(grid, list(arrays)).l2()


def verify_integral_identity(traj, shift, inverses=None, min_checkpoints=50):
    """Relative residual of the endpoint identity along a [0, 1] trajectory.

    Both sides are assembled from the stored checkpoints: the Laplacian of
    the time-1 map versus the Jacobian-weighted time average of the elliptic
    operator applied to the velocity, including the shift correction term.
    """
    times = traj.times
    if len(times) < min_checkpoints:
        raise TooFewCheckpoints(f"need >= {min_checkpoints} checkpoints, have {len(times)}")
    if abs(times[0]) > 1e-12 or abs(times[-1] - 1.0) > 1e-9:
        raise ValueError("identity is stated for trajectories spanning [0, 1]")
    grid = traj.grid
    d = grid.dim
    n_ck = len(times)
    weights = _simpson_weights(n_ck) * (times[-1] - times[0]) / (n_ck - 1)

    int_main = np.zeros((d,) + grid.shape)
    int_shift = np.zeros((d,) + grid.shape)
    for k in range(n_ck):
        gamma = traj.maps[k]
        u = traj.velocities[k]
        inv = inverses[k] if inverses is not None else None
        op = build_deformation_operator(gamma, shift, inverse=inv)
        pu = op.apply(u)
        pu_pulled = pullback(pu, gamma).values()
        u_pulled = pullback(u, gamma).values()
        jac = gamma.jacobian
        int_main += weights[k] * _solve_jacobian(jac, pu_pulled)
        int_shift += weights[k] * _solve_jacobian(jac, u_pulled)

    eta = traj.final_map
    jac_eta = eta.jacobian
    rhs = (np.einsum("ij...,j...->i...", jac_eta, int_main)
           - shift * np.einsum("ij...,j...->i...", jac_eta, int_shift))
    # geometer's sign: the identity is stated for the positive-spectrum
    # Laplacian, whose action on the map is minus the componentwise analyst
    # Laplacian of the displacement
    lhs = np.stack([-laplacian(c).values for c in eta.displacement.components])
    num = _l2_of_arrays(grid, lhs - rhs)
    den = max(_l2_of_arrays(grid, lhs), 1e-14)
    return num / den


def _zero_mean(v):
    comps = []
    for c in v.components:
        spec = c.spectral.copy()
        spec[(0,) * c.grid.dim] = 0.0
        comps.append(ScalarField(c.grid, spectral=spec))
    return VectorField(comps)


def apply_transfer_operator(v, traj, config, shift, inverses=None, ops=None):
    """Matrix-free application of the time-averaged conjugated operator.

    Incompressible form: average of R_g Lap^-1/2 pi0 P Lap^-1/2 R_g^-1.
    Compressible form: average of Ad^-1 A^-1/2 P A^1/2 (Ad^-1)^* with the
    coadjoint factors assembled in closed form from the map Jacobians.
    Means introduced by interpolation are projected away where a zero-mean
    operand is required.
    """
    times = traj.times
    n_ck = len(times)
    weights = _simpson_weights(n_ck) * (times[-1] - times[0]) / (n_ck - 1)
    grid = traj.grid
    incompressible = config.family in INCOMPRESSIBLE_FAMILIES
    inertia = config.inertia
    if inverses is None:
        inverses = compute_inverses(traj)
    total = None
    for k in range(n_ck):
        gamma = traj.maps[k]
        inv = inverses[k]
        if ops is not None:
            op = ops[k]
        else:
            op = build_deformation_operator(gamma, shift, inverse=inv)
        if incompressible:
            w = _zero_mean(pullback(v, inv))
            w = VectorField([fractional_laplacian(c, -0.5) for c in w.components])
            w = op.apply(w)
            w = _zero_mean(w)
            w = VectorField([fractional_laplacian(c, -0.5) for c in w.components])
            w = pullback(w, gamma)
        else:
            w = coadjoint_pullback(inv, v, inertia)
            w = VectorField([apply_inertia_scalar(c, inertia, 0.5) for c in w.components])
            w = op.apply(w)
            w = VectorField([apply_inertia_scalar(c, inertia, -0.5) for c in w.components])
            pulled = pullback(w, gamma).values()
            w = VectorField.from_arrays(grid, list(_solve_jacobian(gamma.jacobian, pulled)))
        contrib = w * float(weights[k])
        total = contrib if total is None else total + contrib
    return total


def transfer_coercivity(traj, config, shift, samples=8, seed=0, max_mode=None,
                        inverses=None):
    """Minimum coercivity quotient of the transfer operator over random fields.

    Incompressible families: <Mv, v> / |v|_L2^2 on divergence-free zero-mean
    samples.  Compressible: the metric pairing <A^r Mv, v> / |v|_{H^(r+1)}^2,
    matching the bilinear form whose ellipticity the theory requires.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    grid = traj.grid
    max_mode = max_mode or max(2, grid.n // 8)
    incompressible = config.family in INCOMPRESSIBLE_FAMILIES
    if inverses is None:
        inverses = compute_inverses(traj)
    ops = [build_deformation_operator(g, shift, inverse=i)
           for g, i in zip(traj.maps, inverses)]
    quotients = []
    for i in range(samples):
        rng = np.random.default_rng([int(seed), i])
        if incompressible:
            v = random_divergence_free(grid, rng, max_mode)
            v = _zero_mean(v)
        else:
            v = random_vector(grid, rng, max_mode)
        mv = apply_transfer_operator(v, traj, config, shift, inverses, ops)
        if incompressible:
            quotients.append(l2_inner(mv, v) / v.l2() ** 2)
        else:
            num = l2_inner(apply_inertia(mv, config.inertia), v)
            den = sobolev_norm(v, config.inertia.order + 1.0) ** 2
            quotients.append(num / den)
    return float(min(quotients)), quotients


# ---------------------------------------------------------------------------
# conservation-law residual tables
# ---------------------------------------------------------------------------


@dataclass
class ResidualSeries:
    """One conservation law checked at every sampled checkpoint."""

    law: str
    description: str
    times: np.ndarray
    values: np.ndarray

    def worst(self):
        return float(np.max(self.values))


def conservation_residuals(traj, stride=1, inverses=None):
    """Relative residual tables for every law applicable to the trajectory family."""
    config = traj.config
    family = config.family
    idx = list(range(0, len(traj.times), stride))
    if idx[-1] != len(traj.times) - 1:
        idx.append(len(traj.times) - 1)
    times = traj.times[idx]
    series = []

    def add(law, description, fn):
        values = np.array([fn(i) for i in idx])
        series.append(ResidualSeries(law, description, times, values))

    u0 = traj.initial_velocity
    energy0 = metric_energy(u0, config.inertia)
    add("energy_drift", "relative drift of the geodesic energy",
        lambda i: abs(metric_energy(traj.velocities[i], config.inertia) - energy0)
        / max(energy0, 1e-300))
    add("mean_velocity_drift", "max drift of the harmonic (mean) part",
        lambda i: float(np.max(np.abs(traj.velocities[i].mean() - u0.mean()))))

    if family in ("l2_incompressible_2d", "axisym_swirlfree_3d", "symplectic_2k") \
            and traj.grid.dim == 2:
        w0 = rot(u0)
        add("vorticity_transport", "scalar curl constant along particle paths",
            lambda i: transport_residual(w0, rot(traj.velocities[i]), traj.maps[i]))
    if family == "hr_incompressible_2d":
        q0 = rot(apply_inertia(u0, config.inertia))
        add("filtered_vorticity_transport",
            "curl of the inertia-filtered velocity constant along paths",
            lambda i: transport_residual(
                q0, rot(apply_inertia(traj.velocities[i], config.inertia)), traj.maps[i]))
    if family == "hr_compressible":
        add("coadjoint_momentum", "coadjoint transport returns the initial velocity",
            lambda i: (coadjoint_pullback(traj.maps[i], traj.velocities[i], config.inertia)
                       - u0).l2() / max(u0.l2(), 1e-300))
    if family in ("l2_incompressible_2d", "axisym_swirlfree_3d", "symplectic_2k"):
        lap0 = VectorField([laplacian(c) for c in u0.components])

        def lap_residual(i):
            inv = inverses[i] if inverses is not None else None
            lap_t = VectorField([laplacian(c) for c in traj.velocities[i].components])
            transported = adjoint_action(traj.maps[i], lap0, inverse=inv)
            return (lap_t - transported).l2() / max(lap0.l2(), 1e-300)

        add("laplacian_conjugation",
            "componentwise Laplacian advected by the group adjoint",
            lap_residual)
    if family == "symplectic_2k" and traj.grid.dim >= 2:
        from .geodesics import symplectic_vorticity
        rho0 = symplectic_vorticity(u0)
        add("symplectic_vorticity_transport",
            "codifferential of the symplectic one-form constant along paths",
            lambda i: transport_residual(rho0, symplectic_vorticity(traj.velocities[i]),
                                         traj.maps[i]))
    if family in INCOMPRESSIBLE_FAMILIES:
        add("volume_defect", "max deviation of det(Dg) from 1",
            lambda i: float(np.abs(traj.maps[i].det_jacobian() - 1.0).max()))
    return series


# ---------------------------------------------------------------------------
# spectral regularity reports
# ---------------------------------------------------------------------------


@dataclass
class RegularityReport:
    """Sobolev norms, spectral shell energies, and a fitted decay slope."""

    sobolev_table: list
    shell_energies: np.ndarray
    shell_counts: np.ndarray
    decay_slope: float
    slope_defined: bool
    energy_floor: float = 1e-24

    def norm(self, s):
        for sv, nv in self.sobolev_table:
            if sv == s:
                return nv
        raise KeyError(s)


def regularity_report(u, s_values=(0.0, 1.0, 2.0), energy_floor=1e-24):
    """Shell-energy table and weighted least-squares decay slope for a field."""
    components = u.components if isinstance(u, VectorField) else (u,)
    grid = components[0].grid
    if all(float(np.abs(c.values).max()) == 0.0 for c in components):
        raise ZeroField("regularity report of the zero field")
    shells = np.rint(np.sqrt(grid.k_squared)).astype(int)
    n_shell = int(shells.max()) + 1
    energies = np.zeros(n_shell)
    counts = np.bincount(shells.reshape(-1), minlength=n_shell).astype(float)
    for c in components:
        power = np.abs(c.spectral) ** 2
        energies += TWO_PI ** grid.dim * np.bincount(
            shells.reshape(-1), weights=power.reshape(-1), minlength=n_shell)
    table = [(float(s), sobolev_norm(VectorField(components) if len(components) > 1
                                     else components[0], s)) for s in s_values]
    m = np.arange(n_shell)
    usable = (m >= 1) & (energies > energy_floor)
    if usable.sum() >= 2:
        x = np.log(m[usable].astype(float))
        y = np.log(energies[usable] / counts[usable])
        w = counts[usable]
        xbar = np.average(x, weights=w)
        ybar = np.average(y, weights=w)
        denom = np.average((x - xbar) ** 2, weights=w)
        slope = float(np.average((x - xbar) * (y - ybar), weights=w) / denom) \
            if denom > 0 else np.nan
        defined = np.isfinite(slope)
    else:
        slope, defined = float("nan"), False
    return RegularityReport(table, energies, counts, slope, defined, energy_floor)
