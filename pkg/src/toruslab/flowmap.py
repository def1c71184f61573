"""Lagrangian flow maps on the torus: advection, Jacobian transport, inversion.

Maps are stored as identity plus a periodic displacement, so spectral
differentiation of the map is valid and composition/inversion reduce to
periodic interpolation of displacement fields.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CflViolation, NoConvergence, NonInvertible
from .spectral import (
    TWO_PI,
    ScalarField,
    VectorField,
    evaluate_at,
    spectral_derivative,
)


@dataclass(frozen=True)
class FlowIntegratorConfig:
    """Time-stepping controls for flow-map advection."""

    dt: float
    scheme: str = "rk4"
    jacobian_mode: str = "spectral_diff"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.scheme != "rk4":
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.jacobian_mode not in ("spectral_diff", "transport_ode"):
            raise ValueError(f"unknown jacobian_mode {self.jacobian_mode!r}")


def check_cfl(u_max, dt, grid):
    """Guard dt * max|u| < 0.5 * cell size."""
    if dt * u_max >= 0.5 * grid.cell:
        raise CflViolation(
            f"dt*|u|max = {dt * u_max:.3e} exceeds half the cell size {0.5 * grid.cell:.3e}")


class DiffeoMap:
    """Torus diffeomorphism gamma(x) = x + displacement(x), displacement periodic."""

    __slots__ = ("grid", "displacement", "_jacobian", "_points")

    def __init__(self, displacement, jacobian=None):
        self.grid = displacement.grid
        if displacement.dim != self.grid.dim:
            raise ValueError("displacement must have one component per axis")
        self.displacement = displacement
        self._jacobian = jacobian
        self._points = None

    @classmethod
    def identity(cls, grid):
        return cls(VectorField.zeros(grid))

    @classmethod
    def from_arrays(cls, grid, arrays):
        return cls(VectorField.from_arrays(grid, arrays))

    @property
    def jacobian(self):
        """(dim, dim, grid...) array, identity plus spectral gradient of the displacement."""
        if self._jacobian is None:
            self._jacobian = _spectral_jacobian(self.displacement)
        return self._jacobian

    def jacobian_fields(self):
        return [[ScalarField(self.grid, values=self.jacobian[i, j])
                 for j in range(self.grid.dim)] for i in range(self.grid.dim)]

    def det_jacobian(self):
        return _det(self.jacobian)

    def points(self):
        """gamma evaluated at the grid nodes, as an (n**dim, dim) array."""
        if self._points is None:
            nodes = np.stack([a.reshape(-1) for a in self.grid.nodes], axis=1)
            disp = np.stack([c.values.reshape(-1) for c in self.displacement.components],
                            axis=1)
            self._points = nodes + disp
        return self._points

    def max_displacement(self):
        return self.displacement.max_norm()


def _spectral_jacobian(displacement):
    grid = displacement.grid
    d = grid.dim
    jac = np.empty((d, d) + grid.shape)
    for i, comp in enumerate(displacement.components):
        for j in range(d):
            jac[i, j] = spectral_derivative(comp, j).values
            if i == j:
                jac[i, j] += 1.0
    return jac


def _det(jac):
    d = jac.shape[0]
    if d == 1:
        return jac[0, 0].copy()
    if d == 2:
        return jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    stacked = np.moveaxis(jac, (0, 1), (-2, -1))
    return np.linalg.det(stacked)


def _interp_vector(u, pts):
    return np.stack([evaluate_at(c, pts) for c in u.components], axis=1)


def identity_map(grid):
    return DiffeoMap.identity(grid)


def pullback(u, gamma):
    """Composition u o gamma by periodic interpolation at the mapped nodes.

    The identity map (zero displacement) short-circuits, keeping identity
    conjugations bit-exact.
    """
    if u.grid != gamma.grid:
        raise ValueError("field and map live on different grids")
    if gamma.max_displacement() == 0.0:
        return u
    pts = gamma.points()
    vals = _interp_vector(u, pts)
    arrays = [vals[:, i].reshape(gamma.grid.shape) for i in range(u.dim)]
    return VectorField.from_arrays(gamma.grid, arrays)


def pullback_scalar(f, gamma):
    if gamma.max_displacement() == 0.0:
        return f
    vals = evaluate_at(f, gamma.points())
    return ScalarField(gamma.grid, values=vals.reshape(gamma.grid.shape))


def compose(outer, inner):
    """Map composition (outer o inner)(x) = outer(inner(x))."""
    if outer.grid != inner.grid:
        raise ValueError("maps live on different grids")
    pts = inner.points()
    outer_disp = _interp_vector(outer.displacement, pts)
    disp = [inner.displacement.components[i].values +
            outer_disp[:, i].reshape(inner.grid.shape)
            for i in range(inner.grid.dim)]
    return DiffeoMap.from_arrays(inner.grid, disp)


def _flow_rhs(u, nodes_flat, disp_flat):
    """Velocity sampled along the deformed nodes: u(x + disp)."""
    return _interp_vector(u, nodes_flat + disp_flat)


def advance_flow(gamma, u_of_t, t, dt):
    """One RK4 step of d(gamma)/dt = u(t) o gamma acting on the displacement."""
    grid = gamma.grid
    nodes = np.stack([a.reshape(-1) for a in grid.nodes], axis=1)
    disp = np.stack([c.values.reshape(-1) for c in gamma.displacement.components], axis=1)
    u0 = u_of_t(t)
    check_cfl(u0.max_norm(), dt, grid)
    k1 = _flow_rhs(u0, nodes, disp)
    uh = u_of_t(t + 0.5 * dt)
    k2 = _flow_rhs(uh, nodes, disp + 0.5 * dt * k1)
    k3 = _flow_rhs(uh, nodes, disp + 0.5 * dt * k2)
    k4 = _flow_rhs(u_of_t(t + dt), nodes, disp + dt * k3)
    new = disp + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    arrays = [new[:, i].reshape(grid.shape) for i in range(grid.dim)]
    return DiffeoMap.from_arrays(grid, arrays)


def _gradient_fields(u):
    """Spectral velocity gradient as a (dim, dim, nodes) array ready for pullback."""
    grid = u.grid
    d = grid.dim
    grads = np.empty((d, d) + grid.shape)
    for i, comp in enumerate(u.components):
        for j in range(d):
            grads[i, j] = spectral_derivative(comp, j).values
    return grads


def _interp_matrix(fields, grid, pts):
    d = grid.dim
    out = np.empty((d, d, pts.shape[0]))
    for i in range(d):
        for j in range(d):
            out[i, j] = evaluate_at(ScalarField(grid, values=fields[i, j]), pts)
    return out


def advance_flow_with_jacobian(gamma, jac, u_of_t, t, dt):
    """Joint RK4 step of the flow and the Jacobian transport d(Dg)/dt = (Du o g) Dg."""
    grid = gamma.grid
    d = grid.dim
    nodes = np.stack([a.reshape(-1) for a in grid.nodes], axis=1)
    disp = np.stack([c.values.reshape(-1) for c in gamma.displacement.components], axis=1)
    jflat = jac.reshape(d, d, -1)

    def rhs(state_disp, state_j, time):
        u = u_of_t(time)
        pts = nodes + state_disp
        kd = _interp_vector(u, pts)
        grad = _interp_matrix(_gradient_fields(u), grid, pts)
        kj = np.einsum("ik...,kj...->ij...", grad, state_j)
        return kd, kj

    check_cfl(u_of_t(t).max_norm(), dt, grid)
    kd1, kj1 = rhs(disp, jflat, t)
    kd2, kj2 = rhs(disp + 0.5 * dt * kd1, jflat + 0.5 * dt * kj1, t + 0.5 * dt)
    kd3, kj3 = rhs(disp + 0.5 * dt * kd2, jflat + 0.5 * dt * kj2, t + 0.5 * dt)
    kd4, kj4 = rhs(disp + dt * kd3, jflat + dt * kj3, t + dt)
    new_disp = disp + (dt / 6.0) * (kd1 + 2 * kd2 + 2 * kd3 + kd4)
    new_j = (jflat + (dt / 6.0) * (kj1 + 2 * kj2 + 2 * kj3 + kj4)).reshape((d, d) + grid.shape)
    arrays = [new_disp[:, i].reshape(grid.shape) for i in range(d)]
    return DiffeoMap.from_arrays(grid, arrays), new_j


def transport_jacobian_step(jac, u_of_t, gamma, t, dt):
    """RK4 step of the Jacobian transport ODE along the flow of u starting at gamma."""
    _, new_j = advance_flow_with_jacobian(gamma, jac, u_of_t, t, dt)
    return new_j


def invert_map(gamma, tol=1e-9, max_iter=200, damping=0.8):
    """Damped fixed-point inversion: solve gamma(y) = x for each node x."""
    det = gamma.det_jacobian()
    if det.min() <= 0.1:
        raise NonInvertible(f"Jacobian determinant reaches {det.min():.3f} <= 0.1")
    grid = gamma.grid
    if gamma.max_displacement() == 0.0:
        return DiffeoMap.identity(grid)
    nodes = np.stack([a.reshape(-1) for a in grid.nodes], axis=1)
    y = nodes.copy()
    disp = gamma.displacement
    for _ in range(max_iter):
        gamma_y = y + _interp_vector(disp, y)
        residual = gamma_y - nodes
        if np.abs(residual).max() < tol:
            inv_disp = y - nodes
            arrays = [inv_disp[:, i].reshape(grid.shape) for i in range(grid.dim)]
            return DiffeoMap.from_arrays(grid, arrays)
        y = y - damping * residual
    raise NoConvergence(
        f"map inversion still at residual {np.abs(residual).max():.3e} after {max_iter} iterations")


def volume_defect(gamma):
    """Max node deviation of det(Dgamma) from 1."""
    return float(np.abs(gamma.det_jacobian() - 1.0).max())


def map_distance(a, b):
    """Max-norm distance between two maps' displacements."""
    diff = a.displacement - b.displacement
    return diff.max_norm()


def wrap_displacement(values):
    """Wrap displacement samples into (-pi, pi] (used when comparing maps)."""
    return (values + np.pi) % TWO_PI - np.pi
