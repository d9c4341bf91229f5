import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ksjko import poisson
from ksjko.grid import DensityField, ScalarField, build_grid, interval, rectangle


def test_dirichlet_uniform_parabola():
    grid = build_grid(interval(), 64)
    x = grid.centers[0]
    res = poisson.solve_potential(DensityField.uniform(grid))
    np.testing.assert_allclose(res.u.values, x * (1 - x) / 2, atol=1e-4)
    assert res.residual < 1e-10


@pytest.mark.parametrize("coupling", ["dirichlet", "neumann_shifted", "neumann_helmholtz", "periodic"])
def test_residual_small(coupling):
    grid = build_grid(rectangle(coupling=coupling), 12)
    rho = DensityField.from_function(grid, lambda x, y: 1 + np.sin(3 * x) * np.cos(2 * y))
    res = poisson.solve_potential(rho)
    assert res.variant == coupling
    assert res.residual < 1e-8


def test_shifted_neumann_mean_zero():
    grid = build_grid(interval(coupling="neumann_shifted"), 40)
    rho = DensityField.from_function(grid, lambda x: 1 + x)
    assert abs(poisson.solve_potential(rho).u.values.mean()) < 1e-12


def test_periodic_eigenmode():
    n = 64
    grid = build_grid(interval(coupling="periodic"), n)
    x = grid.centers[0]
    u = poisson.solve_potential(DensityField(grid, 1 + np.cos(2 * np.pi * x))).u.values
    # discrete eigenvalue of the 3-point Laplacian
    lam = (2 * np.sin(np.pi / n) * n) ** 2
    np.testing.assert_allclose(u, np.cos(2 * np.pi * x) / lam, atol=1e-12)


def test_green_matrix_matches_solve():
    grid = build_grid(rectangle(), 5)
    rho = DensityField.from_function(grid, lambda x, y: 1 + x * y)
    G = poisson.green_matrix(grid)
    np.testing.assert_allclose(G @ rho.values.ravel(), poisson.solve_potential(rho).u.values.ravel(), atol=1e-10)
    np.testing.assert_allclose(G, G.T)


def test_freespace_symmetric_and_radial():
    grid = build_grid(rectangle((-1, 1), (-1, 1), coupling="freespace"), 16)
    rho = DensityField.from_function(grid, lambda x, y: np.exp(-8 * (x * x + y * y)))
    u = poisson.solve_potential(rho).u.values
    np.testing.assert_allclose(u, u.T, atol=1e-13)
    np.testing.assert_allclose(u, u[::-1, ::-1], atol=1e-13)
    assert u[8, 8] > u[0, 0]


def test_dirichlet_energy_of_linear_field():
    grid = build_grid(interval(coupling="neumann_shifted"), 10)
    u = ScalarField(grid, grid.centers[0] * 3.0)
    assert poisson.dirichlet_energy(u) == pytest.approx(9.0 * 0.9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=8, max_size=8).filter(lambda v: sum(v) > 1e-3))
def test_maximum_principle(vals):
    grid = build_grid(interval(), 8)
    u = poisson.solve_potential(DensityField(grid, vals)).u.values
    assert u.min() >= -1e-12
