"""Internal-energy laws, the pressure-like flux Psi, total energy and the KL prox."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConvergenceError, DomainError, ParameterError

KL_PROX_TOL = 1e-12


@dataclass(frozen=True)
class Nonlinearity:
    """Convex internal-energy density ``f`` on ``t >= 0``.

    ``kind`` is one of ``entropy`` (t log t), ``power`` (t**m / (m - 1)),
    ``zero`` (f = 0, only usable through regularisation) or ``regularized``
    (``base`` plus ``delta * t log t``).
    """

    kind: str
    m: float | None = None
    base: "Nonlinearity | None" = None
    delta: float | None = None

    def __post_init__(self):
        if self.kind == "power":
            if self.m is None or not self.m > 1:
                raise ParameterError("power nonlinearity needs m > 1")
        elif self.kind == "regularized":
            if self.base is None or self.delta is None or not self.delta > 0:
                raise ParameterError("regularized nonlinearity needs a base and delta > 0")
        elif self.kind not in ("entropy", "zero"):
            raise ParameterError(f"unknown nonlinearity kind {self.kind!r}")

    # -- evaluation (vectorised; ``t`` must be >= 0) -------------------------
    def f(self, t):
        t = _check_nonneg(t)
        if self.kind == "entropy":
            return _xlogx(t)
        if self.kind == "power":
            return t**self.m / (self.m - 1.0)
        if self.kind == "zero":
            return np.zeros_like(t)
        return self.base.f(t) + self.delta * _xlogx(t)

    def df(self, t):
        t = _check_nonneg(t)
        if self.kind == "entropy":
            with np.errstate(divide="ignore"):
                return np.log(t) + 1.0
        if self.kind == "power":
            return self.m * t ** (self.m - 1.0) / (self.m - 1.0)
        if self.kind == "zero":
            return np.zeros_like(t)
        with np.errstate(divide="ignore"):
            return self.base.df(t) + self.delta * (np.log(t) + 1.0)

    def d2f(self, t):
        t = _check_nonneg(t)
        with np.errstate(divide="ignore"):
            if self.kind == "entropy":
                return 1.0 / t
            if self.kind == "power":
                return self.m * t ** (self.m - 2.0)
            if self.kind == "zero":
                return np.zeros_like(t)
            return self.base.d2f(t) + self.delta / t

    def psi(self, t):
        """``t f'(t) - f(t)``, extended by 0 at ``t = 0``."""
        t = _check_nonneg(t)
        if self.kind == "entropy":
            return t.copy()
        if self.kind == "power":
            return t**self.m
        if self.kind == "zero":
            return np.zeros_like(t)
        return self.base.psi(t) + self.delta * t

    def diffusivity(self, t):
        """``Psi'(t) = t f''(t)``."""
        t = _check_nonneg(t)
        if self.kind == "entropy":
            return np.ones_like(t)
        if self.kind == "power":
            return self.m * t ** (self.m - 1.0)
        if self.kind == "zero":
            return np.zeros_like(t)
        return self.base.diffusivity(t) + self.delta

    @property
    def has_log_barrier(self):
        """True when ``f'(0) = -inf`` so minimisers stay strictly positive."""
        return self.kind == "entropy" or self.kind == "regularized"

    def spec(self):
        if self.kind == "entropy":
            return "entropy"
        if self.kind == "zero":
            return "zero"
        if self.kind == "power":
            return f"power:m={self.m!r}"
        return f"regularized:base={self.base.spec()},delta={self.delta!r}"


ENTROPY = Nonlinearity("entropy")


def power(m):
    return Nonlinearity("power", m=float(m))


def regularized(base, delta):
    return Nonlinearity("regularized", base=base, delta=float(delta))


def parse_nonlinearity(text):
    """Parse ``entropy``, ``zero``, ``power:m=<v>`` or ``regularized:base=<spec>,delta=<v>``."""
    text = text.strip()
    if text in ("entropy", "zero"):
        return Nonlinearity(text)
    head, _, rest = text.partition(":")
    if head == "power":
        key, _, val = rest.partition("=")
        if key.strip() != "m":
            raise ParameterError(f"bad power spec {text!r}")
        return power(float(val))
    if head == "regularized":
        # base spec may itself contain ':' and '=', so split on the last ',delta='
        base_part, sep, delta_part = rest.rpartition(",delta=")
        if not sep or not base_part.startswith("base="):
            raise ParameterError(f"bad regularized spec {text!r}")
        return regularized(parse_nonlinearity(base_part[len("base="):]), float(delta_part))
    raise ParameterError(f"unknown nonlinearity spec {text!r}")


def _check_nonneg(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("internal energy evaluated at negative density")
    return t


def _xlogx(t):
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = t[pos] * np.log(t[pos])
    return out


def f_derivatives(nl, t):
    """``(f(t), f'(t), f''(t))`` at a scalar ``t >= 0``; ``f'(0)`` may be ``-inf``."""
    if t < 0:
        raise DomainError(f"t = {t} < 0")
    arr = np.array([float(t)])
    return float(nl.f(arr)[0]), float(nl.df(arr)[0]), float(nl.d2f(arr)[0])


def psi_eval(nl, t):
    if t < 0:
        raise DomainError(f"t = {t} < 0")
    return float(nl.psi(np.array([float(t)]))[0])


# --------------------------------------------------------------------------
# cell-wise KL proximal map
# --------------------------------------------------------------------------
def kl_prox(q, gamma, nl, M=np.inf, tol=KL_PROX_TOL, max_iter=200):
    """Vectorised ``argmin_{0<=s<=M} gamma*f(s) + s*log(s/q) - s + q``.

    Solved in ``y = log s`` on the increasing map
    ``G(y) = gamma*f'(e^y) + y - log q`` by safeguarded Newton, then clamped
    at ``M``.  ``q`` may be passed as ``log q`` through :func:`kl_prox_log`.
    """
    q = np.asarray(q, dtype=float)
    if np.any(q < 0) or not np.all(np.isfinite(q)):
        raise DomainError("prox target must be finite and nonnegative")
    logq = np.full(q.shape, -np.inf)
    pos = q > 0
    logq[pos] = np.log(q[pos])
    return kl_prox_log(logq, gamma, nl, M, tol, max_iter)


def kl_prox_log(logq, gamma, nl, M=np.inf, tol=KL_PROX_TOL, max_iter=200):
    logq = np.asarray(logq, dtype=float)
    out = np.zeros(logq.shape)
    live = np.isfinite(logq)
    if gamma == 0:
        out[live] = np.exp(logq[live])
        return np.minimum(out, M)
    if not np.any(live):
        return out
    b = logq[live]
    y = _solve_log_stationarity(b, float(gamma), nl, tol, max_iter)
    out[live] = np.exp(np.minimum(y, math.log(M) if np.isfinite(M) else np.inf))
    return out


def _stationarity(y, b, gamma, nl):
    s = np.exp(y)
    return gamma * nl.df(s) + y - b, gamma * s * nl.d2f(s) + 1.0


def _solve_log_stationarity(b, gamma, nl, tol, max_iter):
    if nl.kind == "entropy":
        return (b - gamma) / (1.0 + gamma)
    # G' >= 1, so the root lies between b and b - G(b)
    g0, _ = _stationarity(b, b, gamma, nl)
    lo = np.minimum(b, b - g0)
    hi = np.maximum(b, b - g0)
    y = np.clip(b, lo, hi)
    for _ in range(max_iter):
        g, dg = _stationarity(y, b, gamma, nl)
        if np.all(np.abs(g) <= tol):
            return y
        lo = np.where(g < 0, y, lo)
        hi = np.where(g > 0, y, hi)
        ynew = y - g / dg
        bad = ~((ynew > lo) & (ynew < hi))
        y = np.where(bad, 0.5 * (lo + hi), ynew)
    g, _ = _stationarity(y, b, gamma, nl)
    res = float(np.max(np.abs(g)))
    if res > 1e3 * tol:
        raise ConvergenceError(f"kl_prox root-find did not converge (residual {res:.3e})", res)
    return y


def kl_prox_cell(q, gamma, nl, M):
    if not M > 0:
        raise ParameterError("cap M must be positive")
    return float(kl_prox(np.array([float(q)]), gamma, nl, M)[0])


# --------------------------------------------------------------------------
# total energy
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class EnergyReport:
    internal: float
    interaction: float

    @property
    def total(self):
        return self.internal + self.interaction


def internal_energy(rho, nl):
    return float(np.sum(nl.f(rho.values)) * rho.grid.cell_volume)


def total_energy(rho, nl, chi, domain=None, potential=None):
    """Internal energy plus chemotactic interaction.

    Bounded domains use the discrete Dirichlet energy of ``u`` (plus the
    zeroth-order term for the Helmholtz variant); free space uses
    ``(chi/2) H(rho)`` with ``H = -int u rho``.
    """
    from . import poisson

    domain = rho.grid.domain if domain is None else domain
    internal = internal_energy(rho, nl)
    if chi == 0:
        return EnergyReport(internal, 0.0)
    if potential is None:
        potential = poisson.solve_potential(rho, domain).u
    if domain.coupling == "freespace":
        H = -float(np.sum(potential.values * rho.values) * rho.grid.cell_volume)
        return EnergyReport(internal, 0.5 * chi * H)
    dirichlet = poisson.dirichlet_energy(potential, domain)
    if domain.coupling == "neumann_helmholtz":
        dirichlet += float(np.sum(potential.values**2) * rho.grid.cell_volume)
    return EnergyReport(internal, -0.5 * chi * dirichlet)
