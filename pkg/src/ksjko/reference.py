"""Independent oracles: explicit finite volumes, the zero-diffusion envelope,
a brute-force step minimiser and the L1 distance."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import poisson
from .energy import total_energy
from .exceptions import BlowUpDomainError, CFLError, ParameterError, SizeError
from .grid import DensityField, same_grid

BRUTE_FORCE_MAX_CELLS = 16
BRUTE_FORCE_STARTS = 20


@dataclass(frozen=True)
class FvConfig:
    dt: float
    cfl_safety: float = 0.5

    def __post_init__(self):
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise ParameterError("cfl_safety must lie in (0, 1]")


def _face_fluxes(rho, u, chi, nl, periodic):
    """Per-axis face fluxes (upwind drift, centred diffusion); walls carry zero flux."""
    grid = rho.grid
    r = rho.values
    psi = nl.psi(r)
    fluxes, speeds = [], []
    for ax, h in enumerate(grid.spacing):
        if periodic:
            r_hi = np.roll(r, -1, axis=ax)
            du = (np.roll(u, -1, axis=ax) - u) / h
            dpsi = (np.roll(psi, -1, axis=ax) - psi) / h
            r_lo = r
        else:
            sl_lo = [slice(None)] * grid.dimension
            sl_hi = [slice(None)] * grid.dimension
            sl_lo[ax] = slice(0, -1)
            sl_hi[ax] = slice(1, None)
            r_lo, r_hi = r[tuple(sl_lo)], r[tuple(sl_hi)]
            du = (u[tuple(sl_hi)] - u[tuple(sl_lo)]) / h
            dpsi = (psi[tuple(sl_hi)] - psi[tuple(sl_lo)]) / h
        a = chi * du
        drift = np.where(a > 0, a * r_lo, a * r_hi)
        fluxes.append(drift - dpsi)
        speeds.append(float(np.max(np.abs(a))) if a.size else 0.0)
    return fluxes, speeds


def _divergence(fluxes, grid, periodic):
    out = np.zeros(grid.shape)
    for ax, (F, h) in enumerate(zip(fluxes, grid.spacing)):
        if periodic:
            out += (F - np.roll(F, 1, axis=ax)) / h
        else:
            pad = [(0, 0)] * grid.dimension
            pad[ax] = (1, 1)
            Fp = np.pad(F, pad)
            out += np.diff(Fp, axis=ax) / h
    return out


def cfl_limit(rho, chi, nl, speed, safety=1.0):
    grid = rho.grid
    h = min(grid.spacing)
    d = grid.dimension
    D = float(np.max(nl.diffusivity(rho.values)))
    lims = []
    if D > 0:
        lims.append(h * h / (2 * d * D))
    if speed > 0:
        lims.append(h / (2 * speed))
    return safety * min(lims) if lims else math.inf


def fv_explicit_step(rho, cfg, chi, nl, domain=None):
    """One conservative explicit step of ``rho_t + chi div(rho grad u) = Lap Psi(rho)``."""
    grid = rho.grid
    domain = grid.domain if domain is None else domain
    periodic = domain.coupling == "periodic"
    u = poisson.solve_potential(rho, domain).u.values if chi != 0 else np.zeros(grid.shape)
    fluxes, speeds = _face_fluxes(rho, u, chi, nl, periodic)
    lim = cfl_limit(rho, chi, nl, max(speeds), cfg.cfl_safety)
    if cfg.dt > lim * (1 + 1e-12):
        raise CFLError(f"dt = {cfg.dt:.3e} exceeds CFL limit {lim:.3e}", cfg.dt / lim)
    new = rho.values - cfg.dt * _divergence(fluxes, grid, periodic)
    if np.any(new < 0):
        raise CFLError("explicit step produced negative density", float(new.min()))
    return DensityField(grid, new)


def fv_solve(rho0, horizon, chi, nl, domain=None, cfl_safety=0.5, max_steps=10_000_000):
    """Integrate to ``horizon`` with the largest admissible step each time."""
    domain = rho0.grid.domain if domain is None else domain
    periodic = domain.coupling == "periodic"
    rho, t = rho0, 0.0
    for _ in range(max_steps):
        if t >= horizon * (1 - 1e-14):
            return rho
        u = poisson.solve_potential(rho, domain).u.values if chi != 0 else np.zeros(rho.grid.shape)
        _, speeds = _face_fluxes(rho, u, chi, nl, periodic)
        dt = min(cfl_limit(rho, chi, nl, max(speeds), cfl_safety), horizon - t)
        rho = fv_explicit_step(rho, FvConfig(dt, cfl_safety), chi, nl, domain)
        t += dt
    raise CFLError("too many explicit steps", t)


def zero_diffusion_linf(m0, chi, t):
    """``m0 / (1 - chi m0 t)``: solution of ``m' = chi m^2`` from ``m0``."""
    if t < 0:
        raise ParameterError("t must be nonnegative")
    if chi * m0 * t >= 1:
        raise BlowUpDomainError(f"t = {t} is at or beyond the blow-up time {1.0 / (chi * m0)}")
    return m0 / (1.0 - chi * m0 * t)


def compare_l1(a, b):
    same_grid(a, b)
    return float(np.sum(np.abs(a.values - b.values)) * a.grid.cell_volume)


# --------------------------------------------------------------------------
# brute-force step oracle
# --------------------------------------------------------------------------
_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(3)


def _quantile_fn(rho):
    """Knots of the quantile function: both faces of every cell with mass (jumps across empty cells)."""
    faces = rho.grid.faces[0]
    cdf = np.concatenate([[0.0], np.cumsum(rho.values * rho.grid.h)])
    cdf /= cdf[-1]
    keep = np.flatnonzero(rho.values > 0)
    m = np.stack([cdf[keep], cdf[keep + 1]], axis=1).ravel()
    x = np.stack([faces[keep], faces[keep + 1]], axis=1).ravel()
    return m, x


def w2_quadrature_1d(rho, g):
    """``int_0^1 |Q_rho - Q_g|^2`` by Gauss quadrature between merged mass breakpoints."""
    ca, xa = _quantile_fn(rho)
    cb, xb = _quantile_fn(g)
    knots = np.unique(np.concatenate([ca, cb]))
    lo, hi = knots[:-1], knots[1:]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    m = mid[:, None] + half[:, None] * _GAUSS_X[None, :]
    diff = np.interp(m, ca, xa) - np.interp(m, cb, xb)
    return float(np.sum(half[:, None] * _GAUSS_W[None, :] * diff**2))


def step_objective(vals, g, chi, nl, tau, domain):
    rho = DensityField(g.grid, vals)
    return total_energy(rho, nl, chi, domain).total + w2_quadrature_1d(rho, g) / (2.0 * tau)


def brute_force_jko(g, cfg, nl, domain=None, starts=BRUTE_FORCE_STARTS, seed=0):
    """Multi-start SLSQP over ``{sum rho h = 1, 0 <= rho <= M}`` (1D, at most 16 cells)."""
    grid = g.grid
    if grid.dimension != 1:
        raise ParameterError("brute-force oracle is 1D")
    if grid.size > BRUTE_FORCE_MAX_CELLS:
        raise SizeError(f"brute-force oracle limited to {BRUTE_FORCE_MAX_CELLS} cells, got {grid.size}")
    domain = grid.domain if domain is None else domain
    h = grid.h
    M = cfg.cap
    mass = float(g.values.sum() * h)
    lo = 1e-13 if nl.has_log_barrier else 0.0
    upper = M if math.isfinite(M) else None
    bounds = [(lo, upper)] * grid.size

    def obj(v):
        return step_objective(np.maximum(v, lo), g, cfg.chi, nl, cfg.tau, domain)

    cons = {"type": "eq", "fun": lambda v: np.sum(v) * h - mass, "jac": lambda v: np.full(v.size, h)}
    rng = np.random.default_rng(seed)
    candidates = [np.clip(g.values, lo, upper)]
    for _ in range(starts):
        w = rng.dirichlet(np.ones(grid.size)) * mass / h
        candidates.append(np.clip(w, lo, upper))
    best_v, best_f = None, math.inf
    for x0 in candidates:
        with warnings.catch_warnings():
            # SLSQP probes slightly outside the box; obj clips, so the notice is noise
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(obj, x0, method="SLSQP", bounds=bounds, constraints=[cons],
                           options={"ftol": 1e-15, "maxiter": 1000})
        v = np.clip(res.x, lo, upper)
        v *= mass / (v.sum() * h)
        if upper is not None:
            v = np.minimum(v, upper)
        f = obj(v)
        if f < best_f:
            best_v, best_f = v, f
    return DensityField(grid, best_v), float(best_f)
