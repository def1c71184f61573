"""Shooting-solver tests: linearization actions, projections, round trips."""

import numpy as np
import pytest

from toruslab.errors import NotConverged
from toruslab.flowmap import DiffeoMap
from toruslab.geodesics import MetricConfig, exp_map, symplectic_form_defect
from toruslab.sampling import random_divergence_free, random_vector
from toruslab.shooting import (
    ShootingProblem,
    ShootingReport,
    admissible_basis,
    dexp_action,
    dexp_condition_estimate,
    project_admissible,
    regularity_experiment,
    shoot,
)
from toruslab.spectral import TorusGrid, VectorField, divergence, l2_inner


@pytest.fixture
def grid():
    return TorusGrid(2, 16)


CFG = MetricConfig("l2_incompressible_2d")


# ---------------------------------------------------------------------------
# admissible-space projections
# ---------------------------------------------------------------------------


def test_project_divfree_keeps_mean_kills_divergence(grid):
    rng = np.random.default_rng(0)
    u = random_vector(grid, rng, 5, zero_mean=False)
    u = u + VectorField.constant(grid, [0.3, -0.1])
    p = project_admissible(u, CFG)
    assert divergence(p).l2() < 1e-12 * max(p.l2(), 1.0)
    assert np.abs(p.mean() - u.mean()).max() < 1e-13
    # idempotent
    pp = project_admissible(p, CFG)
    assert (pp - p).l2() < 1e-13


def test_project_band_limit(grid):
    rng = np.random.default_rng(1)
    u = random_vector(grid, rng, 7)
    p = project_admissible(u, CFG, cutoff=2)
    for c in p.components:
        spec = c.spectral
        k = np.abs(grid.wavenumber(0)) > 2
        assert np.abs(spec[np.broadcast_to(k, grid.shape)]).max() == 0.0


def test_project_symplectic_k2():
    grid = TorusGrid(4, 8)
    rng = np.random.default_rng(2)
    cfg = MetricConfig("symplectic_2k")
    u = random_vector(grid, rng, 2)
    p = project_admissible(u, cfg)
    assert symplectic_form_defect(p) < 1e-12
    pp = project_admissible(p, cfg)
    assert (pp - p).l2() < 1e-12


def test_project_axisym():
    grid = TorusGrid(3, 8)
    rng = np.random.default_rng(3)
    cfg = MetricConfig("axisym_swirlfree_3d", killing_axis=2)
    u = random_vector(grid, rng, 3)
    p = project_admissible(u, cfg)
    assert np.abs(p.components[2].values).max() < 1e-14
    varies = np.broadcast_to(np.abs(grid.wavenumber(2)) > 0, grid.shape)
    assert np.abs(p.components[0].spectral[varies]).max() < 1e-14
    assert divergence(p).l2() < 1e-12


def test_project_compressible_is_band_limit_only():
    from toruslab.spectral import InertiaSpec

    grid = TorusGrid(1, 32)
    cfg = MetricConfig("hr_compressible", InertiaSpec(order=1))
    rng = np.random.default_rng(4)
    u = random_vector(grid, rng, 5, zero_mean=False)
    p = project_admissible(u, cfg)
    assert (p - u).l2() < 1e-13


# ---------------------------------------------------------------------------
# finite-difference linearization of the time-1 flow
# ---------------------------------------------------------------------------


def test_dexp_translation_family_is_identity(grid):
    w = VectorField.constant(grid, [0.5, -0.25])
    action = dexp_action(VectorField.zeros(grid), w, CFG, dt=1e-2)
    assert np.abs(action.components[0].values - 0.5).max() < 1e-8
    assert np.abs(action.components[1].values + 0.25).max() < 1e-8


def test_dexp_stencil_antisymmetry(grid):
    rng = np.random.default_rng(5)
    w = random_divergence_free(grid, rng, 2, amplitude=0.2)
    u0 = random_divergence_free(grid, rng, 2, amplitude=0.1)
    plus = dexp_action(u0, w, CFG, dt=1e-2, h=1e-3)
    minus = dexp_action(u0, w * -1.0, CFG, dt=1e-2, h=1e-3)
    for a, b in zip(plus.components, minus.components):
        assert np.array_equal(a.values, -b.values)


def test_dexp_h_refinement_second_order(grid):
    rng = np.random.default_rng(6)
    u0 = random_divergence_free(grid, rng, 2, amplitude=0.2)
    w = random_divergence_free(grid, rng, 2, amplitude=1.0)
    ref = dexp_action(u0, w, CFG, dt=1e-2, h=1e-5)
    errs = []
    for h in (0.2, 0.1, 0.05):
        d = dexp_action(u0, w, CFG, dt=1e-2, h=h)
        errs.append((d - ref).l2())
    slope1 = np.log(errs[0] / errs[1]) / np.log(2.0)
    slope2 = np.log(errs[1] / errs[2]) / np.log(2.0)
    assert 1.6 < slope1 < 2.4
    assert 1.6 < slope2 < 2.4


def test_dexp_richardson_estimate(grid):
    rng = np.random.default_rng(7)
    u0 = random_divergence_free(grid, rng, 2, amplitude=0.2)
    w = random_divergence_free(grid, rng, 2, amplitude=1.0)
    action, est = dexp_action(u0, w, CFG, dt=1e-2, h=0.05, richardson=True)
    ref = dexp_action(u0, w, CFG, dt=1e-2, h=1e-5)
    true_err = (action - ref).l2()
    assert est > 0
    assert true_err < 10 * est


def test_dexp_linearity_in_magnitude(grid):
    rng = np.random.default_rng(8)
    w = random_divergence_free(grid, rng, 2, amplitude=1.0)
    u0 = VectorField.zeros(grid)
    one = dexp_action(u0, w, CFG, dt=1e-2)
    three = dexp_action(u0, w * 3.0, CFG, dt=1e-2)
    assert (three - one * 3.0).l2() < 1e-12 * one.l2()


# ---------------------------------------------------------------------------
# the solver itself
# ---------------------------------------------------------------------------


def test_shoot_identity_target(grid):
    problem = ShootingProblem(target=DiffeoMap.identity(grid), config=CFG,
                              dt=5e-3, tol=1e-6)
    report = shoot(problem)
    assert report.converged
    assert report.iterations == 0
    assert report.u0.l2() == 0.0
    assert report.residual_history[0] == 0.0


def test_shoot_translation_target(grid):
    target = DiffeoMap.from_arrays(grid, [np.full(grid.shape, 0.3),
                                          np.zeros(grid.shape)])
    problem = ShootingProblem(target=target, config=CFG, dt=5e-3, tol=1e-8,
                              coarse_to_fine=(2, "full"))
    report = shoot(problem)
    assert report.converged
    assert np.abs(report.u0.components[0].values - 0.3).max() < 1e-8
    assert np.abs(report.u0.components[1].values).max() < 1e-8


def test_shoot_roundtrip_small(grid):
    rng = np.random.default_rng(9)
    u_star = random_divergence_free(grid, rng, 2, amplitude=0.15)
    target = exp_map(u_star, CFG, dt=5e-3)
    problem = ShootingProblem(target=target, config=CFG, dt=5e-3, tol=1e-6,
                              coarse_to_fine=(2, "full"), max_iter=20)
    report = shoot(problem)
    assert report.converged
    assert (report.u0 - u_star).l2() / u_star.l2() < 1e-3
    hist = report.residual_history
    assert all(b <= a for a, b in zip(hist, hist[1:]))
    assert divergence(report.u0).l2() < 1e-10


def test_shoot_refuses_basin_violation(grid):
    target = DiffeoMap.from_arrays(grid, [np.full(grid.shape, 0.9),
                                          np.zeros(grid.shape)])
    problem = ShootingProblem(target=target, config=CFG)
    with pytest.raises(ValueError, match="basin"):
        shoot(problem)


def test_shoot_refuses_orientation_reversal(grid):
    x, _ = grid.nodes
    bad = DiffeoMap.from_arrays(grid, [-1.2 * np.sin(x) * 0.4 - 0.0 * x,
                                       np.zeros(grid.shape)])
    # make det cross zero: displacement derivative below -1
    bad = DiffeoMap.from_arrays(grid, [-0.45 * np.sin(x) * 2.4,
                                       np.zeros(grid.shape)])
    assert bad.det_jacobian().min() <= 0
    problem = ShootingProblem(target=bad, config=CFG, basin_guard=2.0)
    with pytest.raises(ValueError, match="orientation"):
        shoot(problem)


def test_admissible_basis_orthonormal(grid):
    basis = admissible_basis(grid, CFG, band=1)
    for i, e in enumerate(basis):
        for j, f in enumerate(basis):
            ip = l2_inner(e, f)
            assert abs(ip - (1.0 if i == j else 0.0)) < 1e-10
    # two means plus cos/sin divfree directions per conjugate mode pair
    assert len(basis) == 2 + 2 * 4


def test_dexp_condition_near_identity(grid):
    cond = dexp_condition_estimate(VectorField.zeros(grid), CFG, dt=1e-2, band=1)
    assert cond < 10.0


def test_regularity_experiment_requires_convergence(grid):
    problem = ShootingProblem(target=DiffeoMap.identity(grid), config=CFG)
    report = ShootingReport(VectorField.zeros(grid), [1.0], False, 1.0, 3, {})
    with pytest.raises(NotConverged):
        regularity_experiment(problem, report)
