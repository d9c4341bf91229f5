"""Fixture builders shared by the unit and acceptance tests."""
import numpy as np

from ksjko.energy import ENTROPY, Nonlinearity, regularized
from ksjko.flow import JkoConfig
from ksjko.grid import DensityField, build_grid, interval

ZERO = Nonlinearity("zero")


def oracle_fixtures(count=10, cells=6, tau=0.05, seed=1):
    """Random positive 6-cell densities, alternating chi in {0, 1}."""
    rng = np.random.default_rng(seed)
    grid = build_grid(interval(), cells)
    out = []
    for i in range(count):
        v = rng.uniform(0.2, 2.0, cells)
        g = DensityField(grid, v / (v.sum() * grid.h))
        out.append((g, JkoConfig(chi=float(i % 2), tau=tau, t0=2 * tau)))
    return out, ENTROPY


def peak_fixture(n=200):
    """max 2 on [0,1]: rho0 = 1 - cos(2 pi x), near-zero diffusion, chi = 10."""
    grid = build_grid(interval(), n)
    rho0 = DensityField.from_function(grid, lambda x: 1 - np.cos(2 * np.pi * x))
    return rho0, regularized(ZERO, 1e-2)


def peak_config(tau, lam=1.1):
    # horizon 0.8 / (chi * |rho0|_inf) = 0.04
    return JkoConfig(chi=10.0, tau=tau, t0=0.04, lambda_monitor=lam, eps0=0.05)


def blowup_fixture(n=200):
    """Unit-height raised cosine on [0, 2]."""
    grid = build_grid(interval(0.0, 2.0), n)
    rho0 = DensityField.from_function(grid, lambda x: (1 - np.cos(np.pi * x)) / 2)
    return rho0, regularized(ZERO, 1e-3), JkoConfig(chi=1.0, tau=1e-3, t0=0.5, eps0=0.2)


def consistency_fixture(n=100):
    grid = build_grid(interval(), n)
    rho0 = DensityField.from_function(grid, lambda x: 1 + 0.5 * np.cos(np.pi * x) + 0.2 * np.cos(2 * np.pi * x))
    return rho0, ENTROPY


def cap_fixture():
    """Narrow bump on 12 cells with the cap overridden to 0.8 of its peak."""
    grid = build_grid(interval(), 12)
    g = DensityField.from_function(grid, lambda x: np.exp(-(((x - 0.5) / 0.08) ** 2)))
    cfg = JkoConfig(chi=0.0, tau=1e-3, t0=1e-2, cap_M=0.8 * float(g.values.max()))
    return g, cfg, ENTROPY


def smooth_step(n):
    grid = build_grid(interval(), n)
    return DensityField.from_function(grid, lambda x: 1 + 0.5 * np.tanh((x - 0.5) / 0.1))


SMOOTH_STEP_CONFIG = JkoConfig(chi=1.0, tau=0.01, t0=0.1)
