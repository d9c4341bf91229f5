import numpy as np
import pytest

from ksjko.energy import ENTROPY
from ksjko.exceptions import BlowUpDomainError, CFLError, GridMismatchError, ParameterError, SizeError
from ksjko.flow import JkoConfig
from ksjko.grid import DensityField, build_grid, interval, total_mass
from ksjko.reference import (
    FvConfig, brute_force_jko, compare_l1, fv_explicit_step, fv_solve, w2_quadrature_1d, zero_diffusion_linf,
)
from ksjko.transport import w2_quantile_1d


def test_zero_diffusion_envelope():
    assert zero_diffusion_linf(1.0, 1.0, 0.5) == pytest.approx(2.0)
    assert zero_diffusion_linf(3.0, 2.0, 0.0) == 3.0
    with pytest.raises(BlowUpDomainError):
        zero_diffusion_linf(1.0, 1.0, 1.0)
    with pytest.raises(ParameterError):
        zero_diffusion_linf(1.0, 1.0, -0.1)


def test_compare_l1():
    grid = build_grid(interval(), 4)
    a = DensityField(grid, [1, 1, 1, 1])
    b = DensityField(grid, [2, 0, 1, 1])
    assert compare_l1(a, b) == pytest.approx(0.5)
    with pytest.raises(GridMismatchError):
        compare_l1(a, DensityField.uniform(build_grid(interval(), 5)))


def test_fv_heat_eigenmode_decay():
    n = 200
    grid = build_grid(interval(), n)
    x = grid.centers[0]
    rho0 = DensityField(grid, 1 + 0.5 * np.cos(np.pi * x))
    t = 0.02
    out = fv_solve(rho0, t, 0.0, ENTROPY)
    ratio = (out.values - 1) / (rho0.values - 1)
    assert np.median(ratio) / np.exp(-np.pi**2 * t) == pytest.approx(1.0, abs=1e-3)
    assert total_mass(out) == pytest.approx(total_mass(rho0), abs=1e-12)


def test_fv_cfl_guard():
    grid = build_grid(interval(), 50)
    rho = DensityField.uniform(grid)
    with pytest.raises(CFLError):
        fv_explicit_step(rho, FvConfig(dt=1.0), 0.0, ENTROPY)
    with pytest.raises(ParameterError):
        FvConfig(dt=0.0)


def test_quadrature_matches_quantile():
    grid = build_grid(interval(), 12)
    a = DensityField.from_function(grid, lambda x: 1 + x)
    b = DensityField.from_function(grid, lambda x: 2 - x)
    assert w2_quadrature_1d(a, b) == pytest.approx(w2_quantile_1d(a, b).w2_squared, rel=1e-10)


def test_brute_force_limits():
    cfg = JkoConfig(chi=0.0, tau=0.01, t0=0.1)
    with pytest.raises(SizeError):
        brute_force_jko(DensityField.uniform(build_grid(interval(), 17)), cfg, ENTROPY)


def test_brute_force_uniform_fixed_point():
    g = DensityField.uniform(build_grid(interval(), 5))
    rho, J = brute_force_jko(g, JkoConfig(chi=0.0, tau=0.05, t0=0.1), ENTROPY, starts=2)
    np.testing.assert_allclose(rho.values, 1.0, atol=1e-5)
    assert J == pytest.approx(0.0, abs=1e-9)
