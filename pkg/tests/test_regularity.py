"""Regularity-lab tests: elliptic operator, endpoint identity, transfer operator."""

import numpy as np
import pytest

from toruslab.errors import TooFewCheckpoints, ZeroField
from toruslab.flowmap import DiffeoMap, identity_map
from toruslab.geodesics import (
    GeodesicTrajectory,
    MetricConfig,
)
from toruslab.regularity import (
    apply_transfer_operator,
    build_deformation_operator,
    coercivity_scan,
    compute_inverses,
    conservation_residuals,
    regularity_report,
    shift_search,
    transfer_coercivity,
    verify_integral_identity,
)
from toruslab.sampling import (
    power_law_divergence_free,
    random_divergence_free,
    random_vector,
)
from toruslab.spectral import (
    InertiaSpec,
    ScalarField,
    TorusGrid,
    VectorField,
    l2_inner,
    perp_gradient,
    spectral_derivative,
)


@pytest.fixture
def grid():
    return TorusGrid(2, 32)


def sin_e1(grid):
    return VectorField.from_arrays(grid, [np.sin(grid.nodes[0]),
                                          np.zeros(grid.shape)])


def shear_trajectory(grid, a=1.0, n_ck=51, family="l2_incompressible_2d"):
    """Analytic steady-shear geodesic: maps (x + a t sin y, y), velocity (a sin y, 0)."""
    times = np.linspace(0.0, 1.0, n_ck)
    y = grid.nodes[1]
    maps = [DiffeoMap.from_arrays(grid, [a * t * np.sin(y), np.zeros(grid.shape)])
            for t in times]
    u = VectorField.from_arrays(grid, [a * np.sin(y), np.zeros(grid.shape)])
    velocities = [u] * n_ck
    return GeodesicTrajectory(times, maps, velocities, MetricConfig(family),
                              times[1] - times[0], {})


def translation_trajectory(grid, c=(0.3, 0.0), n_ck=51):
    times = np.linspace(0.0, 1.0, n_ck)
    maps = [DiffeoMap.from_arrays(
        grid, [np.full(grid.shape, c[0] * t), np.full(grid.shape, c[1] * t)])
        for t in times]
    u = VectorField.constant(grid, c)
    velocities = [u] * n_ck
    return GeodesicTrajectory(times, maps, velocities,
                              MetricConfig("l2_incompressible_2d"),
                              times[1] - times[0], {})


def identity_trajectory(grid, n_ck=11, family="l2_incompressible_2d", order=0):
    times = np.linspace(0.0, 1.0, n_ck)
    maps = [identity_map(grid)] * n_ck
    velocities = [VectorField.zeros(grid)] * n_ck
    inertia = InertiaSpec(order=order)
    return GeodesicTrajectory(times, maps, velocities, MetricConfig(family, inertia),
                              times[1] - times[0], {})


# ---------------------------------------------------------------------------
# deformation-coefficient elliptic operator
# ---------------------------------------------------------------------------


def test_operator_at_identity_is_exact(grid):
    op = build_deformation_operator(identity_map(grid), 1.0)
    assert np.array_equal(op.coeffs[0, 0], np.ones(grid.shape))
    assert np.array_equal(op.coeffs[1, 1], np.ones(grid.shape))
    assert np.array_equal(op.coeffs[0, 1], np.zeros(grid.shape))
    v = sin_e1(grid)
    out = op.apply(v)
    assert np.abs(out.components[0].values - 2.0 * np.sin(grid.nodes[0])).max() < 1e-12
    assert np.abs(out.components[1].values).max() < 1e-13


def test_operator_on_constant_field(grid):
    op = build_deformation_operator(identity_map(grid), 2.5)
    v = VectorField.constant(grid, [1.0, -2.0])
    out = op.apply(v)
    assert np.abs(out.components[0].values - 2.5).max() < 1e-13
    assert np.abs(out.components[1].values + 5.0).max() < 1e-13


def test_operator_at_translation(grid):
    trans = DiffeoMap.from_arrays(grid, [np.full(grid.shape, 0.4),
                                         np.zeros(grid.shape)])
    op = build_deformation_operator(trans, 1.0)
    assert np.abs(op.coeffs[0, 0] - 1.0).max() < 1e-13
    assert np.abs(op.coeffs[0, 1]).max() < 1e-13


def test_operator_shear_coefficients_analytic(grid):
    a = 0.3
    y = grid.nodes[1]
    gamma = DiffeoMap.from_arrays(grid, [a * np.sin(y), np.zeros(grid.shape)])
    op = build_deformation_operator(gamma, 1.0)
    assert np.abs(op.coeffs[0, 0] - (1.0 + a ** 2 * np.cos(y) ** 2)).max() < 1e-7
    assert np.abs(op.coeffs[0, 1] - a * np.cos(y)).max() < 1e-7
    assert np.abs(op.coeffs[1, 1] - 1.0).max() < 1e-7
    assert op.min_eigenvalue() > 0


def stencil_matrix_1d(n, h, order_coeffs):
    """Circulant matrix from centered stencil coefficients (offset, weight)."""
    mat = np.zeros((n, n))
    for off, w in order_coeffs:
        mat += np.roll(np.eye(n), off, axis=1) * w
    return mat / h


def test_operator_matches_fd_stencil_oracle():
    """Dense 8th-order finite-difference assembly of the same operator."""
    grid = TorusGrid(2, 32)
    a = 0.3
    y = grid.nodes[1]
    gamma = DiffeoMap.from_arrays(grid, [a * np.sin(y), np.zeros(grid.shape)])
    shift = 1.0
    op = build_deformation_operator(gamma, shift)
    rng = np.random.default_rng(0)
    v = random_vector(grid, rng, 2, zero_mean=False)

    n, h = grid.n, grid.cell
    d1 = [(-4, 1 / 280), (-3, -4 / 105), (-2, 1 / 5), (-1, -4 / 5),
          (1, 4 / 5), (2, -1 / 5), (3, 4 / 105), (4, -1 / 280)]
    d2 = [(-4, -1 / 560), (-3, 8 / 315), (-2, -1 / 5), (-1, 8 / 5),
          (0, -205 / 72), (1, 8 / 5), (2, -1 / 5), (3, 8 / 315), (4, -1 / 560)]
    # note: np.roll(eye, off, axis=1) realizes f(x + off*h) on periodic grids
    D1 = stencil_matrix_1d(n, h, d1)
    D2 = stencil_matrix_1d(n, h * h, d2)

    def second(vals, i, j):
        # rows act along axis 0; right-multiplying by the transpose applies
        # the same stencil along axis 1
        if i == 0 and j == 0:
            return D2 @ vals
        if i == 1 and j == 1:
            return vals @ D2.T
        return (D1 @ vals) @ D1.T

    for comp, out_comp in zip(v.components, op.apply(v).components):
        vals = comp.values
        dense = shift * vals.copy()
        for i in range(2):
            for j in range(2):
                dense -= op.coeffs[i, j] * second(vals, i, j)
        assert np.abs(dense - out_comp.values).max() < 1e-4


def test_operator_near_self_adjoint(grid):
    a = 0.3
    y = grid.nodes[1]
    gamma = DiffeoMap.from_arrays(grid, [a * np.sin(y), np.zeros(grid.shape)])
    op = build_deformation_operator(gamma, 1.0)
    rng = np.random.default_rng(1)
    kcut = 4
    dp_max = 0.0
    ddp_max = 0.0
    for i in range(2):
        for j in range(2):
            p = ScalarField(grid, values=op.coeffs[i, j])
            for ax in range(2):
                dp = spectral_derivative(p, ax)
                dp_max = max(dp_max, np.abs(dp.values).max())
                for ax2 in range(2):
                    ddp_max = max(ddp_max,
                                  np.abs(spectral_derivative(dp, ax2).values).max())
    bound_coeff = 4 * (ddp_max + 2 * kcut * dp_max)
    for _ in range(5):
        v = random_vector(grid, rng, kcut)
        w = random_vector(grid, rng, kcut)
        gap = abs(l2_inner(op.apply(v), w) - l2_inner(v, op.apply(w)))
        assert gap <= bound_coeff * v.l2() * w.l2() + 1e-12


def test_coercivity_scan_identity_values(grid):
    op = build_deformation_operator(identity_map(grid), 1.0)
    v = sin_e1(grid)
    num = l2_inner(op.apply(v), v)
    from toruslab.spectral import sobolev_norm
    quotient = num / sobolev_norm(v, 1.0) ** 2
    assert abs(quotient - 1.0) < 1e-12
    lo, hi = coercivity_scan(op, samples=20, seed=5)
    assert lo > 0.999999
    assert hi < 1.000001
    op4 = op.with_shift(4.0)
    lo4, hi4 = coercivity_scan(op4, samples=20, seed=5)
    assert 1.0 - 1e-9 < lo4 and hi4 < 4.0 + 1e-9


def test_coercivity_scan_needs_samples(grid):
    op = build_deformation_operator(identity_map(grid), 1.0)
    with pytest.raises(ValueError):
        coercivity_scan(op, samples=0, seed=0)


def test_shift_search_on_shear(grid):
    traj = shear_trajectory(grid, a=1.0, n_ck=11)
    result = shift_search(traj, samples=20, seed=3)
    assert result.converged
    assert result.min_quotient >= 0.1
    assert result.max_quotient / result.min_quotient < 100.0
    assert result.shift == 2.0 ** round(np.log2(result.shift))


# ---------------------------------------------------------------------------
# endpoint identity
# ---------------------------------------------------------------------------


def test_integral_identity_constant_velocity(grid):
    traj = translation_trajectory(grid, n_ck=51)
    res = verify_integral_identity(traj, shift=1.0, min_checkpoints=51)
    assert res < 1e-10


def test_integral_identity_identity_path(grid):
    traj = identity_trajectory(grid, n_ck=51)
    res = verify_integral_identity(traj, shift=1.0, min_checkpoints=51)
    assert res == 0.0


def test_integral_identity_shear(grid):
    traj = shear_trajectory(grid, a=1.0, n_ck=101)
    inverses = compute_inverses(traj)
    res = verify_integral_identity(traj, shift=1.0, inverses=inverses,
                                   min_checkpoints=101)
    assert res < 1e-3


def test_integral_identity_checkpoint_guard(grid):
    traj = shear_trajectory(grid, n_ck=11)
    with pytest.raises(TooFewCheckpoints):
        verify_integral_identity(traj, shift=1.0)


def oscillating_curve(grid, n_ck, a=0.4, freq=6.0):
    """Analytic non-geodesic curve (x + a sin(freq t) sin y, y).

    The endpoint identity holds for any smooth curve; the fast time
    dependence makes the Simpson quadrature error visible far above the
    interpolation floor.
    """
    times = np.linspace(0.0, 1.0, n_ck)
    y = grid.nodes[1]
    maps = [DiffeoMap.from_arrays(grid, [a * np.sin(freq * t) * np.sin(y),
                                         np.zeros(grid.shape)]) for t in times]
    velocities = [VectorField.from_arrays(
        grid, [a * freq * np.cos(freq * t) * np.sin(y), np.zeros(grid.shape)])
        for t in times]
    return GeodesicTrajectory(times, maps, velocities,
                              MetricConfig("l2_incompressible_2d"),
                              times[1] - times[0], {})


def test_integral_identity_simpson_refinement():
    """Quadrature error drops at 4th order until the interpolation floor."""
    grid = TorusGrid(2, 32)
    res = {}
    for n_ck in (9, 17, 33):
        traj = oscillating_curve(grid, n_ck)
        res[n_ck] = verify_integral_identity(traj, shift=1.0, min_checkpoints=n_ck)
    slope1 = np.log(res[9] / res[17]) / np.log(2.0)
    slope2 = np.log(res[17] / res[33]) / np.log(2.0)
    assert 3.5 < slope1 < 4.5
    assert 3.5 < slope2 < 4.5


# ---------------------------------------------------------------------------
# transfer operator
# ---------------------------------------------------------------------------


def test_transfer_identity_path_incompressible(grid):
    traj = identity_trajectory(grid, n_ck=11)
    v = perp_gradient(ScalarField.from_function(grid, lambda x, y: np.sin(x)))
    out = apply_transfer_operator(v, traj, traj.config, shift=1.0)
    assert (out - 2.0 * v).l2() < 1e-10 * v.l2()


def test_transfer_identity_path_compressible(grid):
    traj = identity_trajectory(grid, n_ck=11, family="hr_compressible", order=1)
    v = sin_e1(grid)
    out = apply_transfer_operator(v, traj, traj.config, shift=1.0)
    assert (out - 2.0 * v).l2() < 1e-10 * v.l2()


def test_transfer_translation_path_preserves_spectrum():
    # translation invariance of every factor; N = 64 keeps the interpolation
    # noise of the translated pullbacks below the 1e-10 bar
    grid = TorusGrid(2, 64)
    traj = translation_trajectory(grid, n_ck=11)
    v = perp_gradient(ScalarField.from_function(grid, lambda x, y: np.sin(x)))
    out = apply_transfer_operator(v, traj, traj.config, shift=1.0)
    assert (out - 2.0 * v).l2() < 1e-10 * v.l2()


def test_transfer_linearity(grid):
    traj = shear_trajectory(grid, a=0.5, n_ck=11)
    inverses = compute_inverses(traj)
    rng = np.random.default_rng(6)
    v = random_divergence_free(grid, rng, 3)
    w = random_divergence_free(grid, rng, 3)
    cfg = traj.config
    mv = apply_transfer_operator(v, traj, cfg, 1.0, inverses)
    mw = apply_transfer_operator(w, traj, cfg, 1.0, inverses)
    mvw = apply_transfer_operator(v * 0.7 + w * -1.3, traj, cfg, 1.0, inverses)
    gap = (mvw - (mv * 0.7 + mw * -1.3)).l2()
    assert gap < 1e-11 * max(mv.l2(), mw.l2())


def test_transfer_coercivity_identity_symbols(grid):
    traj = identity_trajectory(grid, n_ck=11)
    tmin, _ = transfer_coercivity(traj, traj.config, shift=1.0, samples=5, seed=9)
    assert tmin > 0.99   # incompressible symbol (1+|k|^2)/|k|^2 >= 1
    traj_c = identity_trajectory(grid, n_ck=11, family="hr_compressible", order=1)
    tmin_c, _ = transfer_coercivity(traj_c, traj_c.config, shift=1.0, samples=5,
                                    seed=9)
    assert tmin_c >= min(1.0, 1.0) - 1e-9


def test_transfer_coercivity_positive_on_shear(grid):
    traj = shear_trajectory(grid, a=1.0, n_ck=21)
    inverses = compute_inverses(traj)
    tmin, _ = transfer_coercivity(traj, traj.config, shift=2.0, samples=4, seed=11,
                                  inverses=inverses)
    assert tmin > 0.0


# ---------------------------------------------------------------------------
# conservation residual tables
# ---------------------------------------------------------------------------


def test_conservation_residuals_identity_path(grid):
    traj = identity_trajectory(grid, n_ck=11)
    u = perp_gradient(ScalarField.from_function(grid, lambda x, y: np.sin(x)))
    traj.velocities = [u] * 11
    series = conservation_residuals(traj)
    for s in series:
        assert s.worst() < 1e-12, s.law


def test_conservation_residuals_translation(grid):
    traj = translation_trajectory(grid, n_ck=11)
    series = {s.law: s for s in conservation_residuals(traj)}
    assert series["energy_drift"].worst() < 1e-12
    assert series["mean_velocity_drift"].worst() < 1e-12
    assert series["volume_defect"].worst() < 1e-12


def test_conservation_residuals_shear_euler(grid):
    traj = shear_trajectory(grid, a=1.0, n_ck=21)
    inverses = compute_inverses(traj)
    series = {s.law: s for s in conservation_residuals(traj, inverses=inverses)}
    assert series["vorticity_transport"].worst() < 1e-3
    assert series["laplacian_conjugation"].worst() < 1e-3
    assert series["volume_defect"].worst() < 1e-12


# ---------------------------------------------------------------------------
# spectral regularity reports
# ---------------------------------------------------------------------------


def test_regularity_report_single_mode(grid):
    u = VectorField.from_arrays(grid, [np.sin(3 * grid.nodes[0]),
                                       np.zeros(grid.shape)])
    rep = regularity_report(u)
    assert not rep.slope_defined
    shell = rep.shell_energies
    assert shell[3] > 0
    assert np.delete(shell, 3).max() < 1e-20 * shell[3]


def test_regularity_report_power_law_slope():
    grid = TorusGrid(2, 64)
    rng = np.random.default_rng(12)
    u = power_law_divergence_free(grid, rng, slope=-4.0)
    rep = regularity_report(u)
    assert rep.slope_defined
    assert abs(rep.decay_slope + 8.0) < 0.2


def test_regularity_report_zero_field(grid):
    with pytest.raises(ZeroField):
        regularity_report(VectorField.zeros(grid))


def test_regularity_report_sobolev_table(grid):
    u = sin_e1(grid)
    rep = regularity_report(u, s_values=(0.0, 1.0))
    assert abs(rep.norm(0.0) - np.sqrt(2 * np.pi ** 2)) < 1e-12
    assert abs(rep.norm(1.0) - np.sqrt(2) * np.sqrt(2 * np.pi ** 2)) < 1e-12
    total = rep.shell_energies.sum()
    assert abs(total - rep.norm(0.0) ** 2) < 1e-10 * total
