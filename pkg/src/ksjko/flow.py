"""Density-capped JKO steps for Keller-Segel type energies and their monitors.

One step solves

    min  J(rho) + W2^2(rho, g) / (2 tau)   over probability densities rho <= M,

with ``J(rho) = int f(rho) - (chi/2) int rho u`` and ``M = 1 / (chi tau)``.
The ``1/(2 tau)`` normalisation is the one under which the first variation
of the transport term is ``phi / tau`` (``phi`` the Kantorovich potential for
cost ``|x-y|^2/2``), so that the optimality system reads
``f'(rho) + p - chi u + phi/tau = c`` and ``rho_k`` approximates the PDE at
time ``k tau``.

Two step solvers are provided:

* ``exact`` (1D): Newton's method with an active set for the cap, using the
  exact gradient and Hessian of the 1D transport cost.  For
  ``tau * chi * |g|_inf < 1`` the step problem is strictly convex.
* ``entropic`` (1D/2D): entropic proximal splitting (alternating Sinkhorn
  row scalings and cell-wise KL proximal maps of the energy with the cap),
  wrapped in a damped fixed point on the potential ``u``.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import poisson
from .energy import EnergyReport, kl_prox_log, total_energy
from .exceptions import ConfigurationError, ConvergenceError, ParameterError, SolverError
from .grid import DensityField, ScalarField, linf_norm, total_mass
from .transport import (
    Monotone1D,
    TransportResult,
    _cost_matrix,
    displacement_interpolate,
    entropic_self_cost,
    sinkhorn_entropic,
    w2_quantile_1d,
)

log = logging.getLogger(__name__)

NORMALIZATION_FAIL = 1e-6


@dataclass(frozen=True)
class JkoConfig:
    chi: float
    tau: float
    t0: float
    lambda_monitor: float = 1.5
    eps0: float = 0.05
    cap_M: float | None = None
    entropic_eps: float | None = None
    inner_tol: float = 1e-11
    fixed_point_tol: float = 1e-9
    max_inner_iters: int = 200
    c0_empirical: float = 0.5
    slack_tol_rel: float = 1e-3
    damping: float = 0.5
    method: str = "auto"

    def __post_init__(self):
        if not self.chi >= 0:
            raise ConfigurationError("chi must be nonnegative", "chi")
        if not self.tau > 0:
            raise ConfigurationError("tau must be positive", "tau")
        if not self.t0 >= 0:
            raise ConfigurationError("t0 must be nonnegative", "t0")
        if not self.lambda_monitor > 1:
            raise ConfigurationError("lambda must exceed 1", "lambda")
        if not self.eps0 > 0:
            raise ConfigurationError("eps0 must be positive", "eps0")
        if self.cap_M is not None and not self.cap_M > 0:
            raise ConfigurationError("cap must be positive", "cap")
        if self.method not in ("auto", "exact", "entropic"):
            raise ConfigurationError(f"unknown step method {self.method!r}", "method")

    @property
    def cap(self):
        if self.cap_M is not None:
            return float(self.cap_M)
        return math.inf if self.chi == 0 else 1.0 / (self.chi * self.tau)

    @property
    def n_steps(self):
        return int(math.floor(self.t0 / self.tau + 1e-9))


@dataclass
class StepReport:
    linf: float
    prev_linf: float
    linf_bound_required: float
    monitor_X: float
    monitor_Y: float
    argmax_cell: int
    argmax_interior: bool
    energy: EnergyReport
    prev_energy: float
    w2_squared: float
    kkt_residual: float
    kkt_constant_c: float
    pressure_max: float
    complementarity_defect: float
    active_fraction: float
    dissipation_slack: float
    monitor_pass: bool
    xy_pass: bool
    normalization_defect: float = 0.0
    iterations: int = 0
    method: str = "exact"
    kkt_degenerate: bool = False
    cumulative_bound: float = math.inf
    cumulative_pass: bool = True
    transport: TransportResult | None = field(default=None, repr=False)
    potential: ScalarField | None = field(default=None, repr=False)


@dataclass
class Trajectory:
    tau: float
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    velocities: list = field(default_factory=list)
    transports: list = field(default_factory=list)
    potentials: list = field(default_factory=list)
    status: str = "completed"
    failed_step: int | None = None
    message: str = ""

    @property
    def linf(self):
        return np.array([linf_norm(r)[0] for r in self.states])

    @property
    def energies(self):
        return np.array([self.reports[0].prev_energy] + [r.energy.total for r in self.reports]) if self.reports else np.array([])


# --------------------------------------------------------------------------
# monitors
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class MonitorVerdict:
    passed: bool
    xy_passed: bool
    required_linf: float
    X: float
    Y: float


def required_linf(prev_linf, chi, tau, lam):
    """Largest L-infinity norm allowed by ``1/|rho| >= 1/|g| - lam tau chi``."""
    inv = 1.0 / prev_linf - lam * tau * chi
    return math.inf if inv <= 0 else 1.0 / inv


def linf_monitor(prev_linf, new_linf, cfg, slack_tol=0.0, dimension=1):
    if not prev_linf > 0:
        raise ParameterError("previous L-infinity norm must be positive")
    req = required_linf(prev_linf, cfg.chi, cfg.tau, cfg.lambda_monitor)
    passed = new_linf <= req + slack_tol
    d = dimension
    X = cfg.tau * cfg.chi * new_linf / d
    Y = cfg.tau * cfg.chi * prev_linf / d
    X_eff = cfg.tau * cfg.chi * max(new_linf - slack_tol, 0.0) / d
    xy = Y >= X_eff / (1.0 + X_eff) ** d
    return MonitorVerdict(bool(passed), bool(xy), req, X, Y)


def cumulative_linf_bound(linf0, k, cfg):
    """``1/|rho_k| >= 1/|rho_0| - lam k tau chi`` (chi included) as a bound on ``|rho_k|``."""
    return required_linf(linf0, cfg.chi, k * cfg.tau, cfg.lambda_monitor)


def energy_dissipation_check(J_prev, J_new, w2_squared, tau):
    """Slack of the one-step dissipation inequality implied by minimality.

    Comparing the minimiser with the competitor ``rho = g`` gives
    ``J(g) - J(rho) >= W2^2 / (2 tau)`` for the step objective used here.
    """
    return J_prev - J_new - w2_squared / (2.0 * tau)


def kkt_residual(rho, g, u, phi, cfg, nl):
    """Residual of ``f'(rho) + p - chi u + phi/tau = c`` with ``p = (c - h)_+`` on capped cells.

    Returns ``(residual, c, p_field, extras)``; ``extras`` holds the
    complementarity defect and a degeneracy flag.
    """
    M = cfg.cap
    vals = rho.values
    floor = 1e-12 * (M if math.isfinite(M) else max(float(vals.max()), 1.0))
    pos = vals > floor
    capped = pos & (vals >= M * (1 - 1e-12)) if math.isfinite(M) else np.zeros_like(pos)
    free = pos & ~capped
    uu = u.values if u is not None else np.zeros_like(vals)
    hval = np.full(vals.shape, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        hval[pos] = nl.df(vals[pos]) - cfg.chi * uu[pos] + phi.values[pos] / cfg.tau
    p = np.zeros(vals.shape)
    if not free.any():
        return math.nan, math.nan, ScalarField(rho.grid, p), {"complementarity": 0.0, "degenerate": True}
    c = float(np.median(hval[free]))
    # h is constant at a minimiser, so normalise by the spread of the balancing terms
    with np.errstate(divide="ignore", invalid="ignore"):
        energy_term = nl.df(vals[pos]) - cfg.chi * uu[pos]
    scale = _term_range(energy_term, phi.values[pos] / cfg.tau)
    resid = float(np.max(np.abs(hval[free] - c))) / scale
    p[capped] = np.maximum(c - hval[capped], 0.0)
    comp = float(np.max(p * (M - vals))) if capped.any() else 0.0
    return resid, c, ScalarField(rho.grid, p), {"complementarity": comp, "degenerate": False}


def monge_ampere_residual_1d(rho, g, res):
    """``max |rho - g(T) T'|`` over interior cells.

    ``T'`` is the centred difference of ``T`` at cell centres and ``g(T)``
    uses the piecewise-linear reconstruction of ``g`` through its centres.
    """
    grid = rho.grid
    x = grid.centers[0]
    T = res.map_T if res.map_T is not None else res.monotone.map_at(x)
    h = grid.h
    dT = (T[2:] - T[:-2]) / (2 * h)
    gT = np.interp(T[1:-1], g.grid.centers[0], g.values)
    r = rho.values
    inner = (r[1:-1] > 0) & (r[:-2] > 0) & (r[2:] > 0)
    if not inner.any():
        return 0.0
    return float(np.max(np.abs(r[1:-1] - gT * dT)[inner]))


def velocity_field(res, tau):
    """``v = (x - T(x)) / tau`` at cell centres, one array per axis."""
    grid = res.source.grid
    if res.map_T is not None and grid.dimension == 1:
        return ((grid.centers[0] - res.map_T) / tau,)
    if res.plan is None:
        raise ParameterError("velocity needs a map or a plan")
    a = res.plan.sum(axis=1)
    Y = res.target.grid.points
    bary = np.where(a[:, None] > 0, res.plan @ Y / np.where(a > 0, a, 1.0)[:, None], grid.points)
    v = (grid.points - bary) / tau
    return tuple(v[:, ax].reshape(grid.shape) for ax in range(grid.dimension))


def velocity_optimality_gap(rho, velocity, u, nl, chi, floor=1e-12):
    """``max |v - (-grad f'(rho) + chi grad u)|`` on interior cells (1D)."""
    grid = rho.grid
    if grid.dimension != 1:
        raise ParameterError("velocity cross-check implemented in 1D")
    r = rho.values
    h = grid.h
    ok = np.all(np.stack([r[:-2], r[1:-1], r[2:]]) > floor, axis=0)
    fp = nl.df(np.maximum(r, floor))
    uu = u.values if u is not None else np.zeros_like(r)
    pred = -(fp[2:] - fp[:-2]) / (2 * h) + chi * (uu[2:] - uu[:-2]) / (2 * h)
    v = velocity[0][1:-1]
    return float(np.max(np.abs(v - pred)[ok])) if ok.any() else 0.0


# --------------------------------------------------------------------------
# step solvers
# --------------------------------------------------------------------------
def _initial_point(g, M, nl):
    vals = g.values.astype(float).copy()
    mass = vals.sum()
    if nl.has_log_barrier and np.any(vals <= 0):
        vals = (1 - 1e-3) * vals + 1e-3 * mass / vals.size
    return _cap_project(vals, M)


def _cap_project(vals, M):
    """Clip at ``M`` and spread the excess proportionally over the uncapped cells."""
    if not math.isfinite(M):
        return vals
    total = vals.sum()
    if M * vals.size < total * (1 - 1e-12):
        raise SolverError("cap too small to hold the mass")
    v = vals.copy()
    for _ in range(vals.size + 1):
        over = v > M
        if not over.any():
            break
        v[over] = M
        free = v < M
        excess = total - v.sum()
        w = v[free]
        if w.sum() > 0:
            v[free] = w * (1 + excess / w.sum())
        else:
            v[free] = excess / free.sum()
    return np.minimum(v, M)


class _ExactStep1D:
    """Newton / active-set solver for the 1D step with exact transport."""

    def __init__(self, g, cfg, nl):
        self.g, self.cfg, self.nl = g, cfg, nl
        self.grid = g.grid
        self.h = g.grid.h
        self.M = cfg.cap
        self.G = poisson.green_matrix(self.grid) if cfg.chi > 0 else None

    def evaluate(self, vals, need_hessian=True):
        rho = DensityField(self.grid, vals)
        mono = Monotone1D(rho, self.g)
        h, tau, chi = self.h, self.cfg.tau, self.cfg.chi
        w2 = mono.w2_squared()
        phi = mono.phi_cell_average()
        u = self.G @ vals if chi > 0 else np.zeros_like(vals)
        obj = h * np.sum(self.nl.f(vals)) - 0.5 * chi * h * vals @ u + w2 / (2 * tau)
        with np.errstate(divide="ignore"):
            hval = self.nl.df(vals) - chi * u + phi / tau
        out = {"rho": rho, "mono": mono, "w2": w2, "phi": phi, "u": u, "obj": obj, "h": hval}
        if need_hessian:
            with np.errstate(divide="ignore"):
                H = h * np.diag(self.nl.d2f(vals)) + mono.hessian() / tau
            if chi > 0:
                H = H - chi * h * self.G
            out["H"] = H
        return out

    def objective(self, vals):
        if np.any(vals < 0):
            return math.inf
        if self.nl.has_log_barrier and np.any(vals <= 0):
            return math.inf
        return self.evaluate(vals, need_hessian=False)["obj"]

    def _advance(self, vals, d, alpha, state):
        """Move along ``d``; returns the trial point and the cells newly pinned at a bound.

        With a log barrier, decreases are applied multiplicatively
        (``rho * exp(alpha d / rho)``, same first-order step) so tiny cells
        are never clipped by a fraction-to-boundary rule; the small mass
        change this causes is removed by rescaling the free cells.
        """
        M = self.M
        free = state == 0
        trial = vals.copy()
        dv, v = d[free], vals[free]
        if self.nl.has_log_barrier:
            with np.errstate(over="ignore", under="ignore"):
                trial[free] = np.where(dv >= 0, v + alpha * dv, v * np.exp(alpha * np.minimum(dv, 0.0) / v))
        else:
            trial[free] = v + alpha * dv
        pinned = np.zeros(vals.shape, dtype=np.int8)
        if not self.nl.has_log_barrier:
            low = free & (trial <= 0)
            trial[low] = 0.0
            pinned[low] = -1
        for _ in range(vals.size + 1):
            if math.isfinite(M):
                high = (state == 0) & (pinned == 0) & (trial >= M)
                trial[high] = M
                pinned[high] = 1
            movable = (state == 0) & (pinned == 0)
            excess = self.mass - trial.sum()
            if abs(excess) <= 1e-15 * self.mass or not movable.any():
                break
            if not self.nl.has_log_barrier:
                break
            trial[movable] *= 1.0 + excess / trial[movable].sum()
            if not (math.isfinite(M) and np.any(trial[movable] > M)):
                break
        return trial, pinned

    def _max_step(self, vals, d, state):
        """Largest step before a free cell reaches a bound (linear part of the update)."""
        free = state == 0
        alpha = 1.0
        if math.isfinite(self.M):
            up = free & (d > 0)
            if up.any():
                alpha = min(alpha, float(np.min((self.M - vals[up]) / d[up])))
        if not self.nl.has_log_barrier:
            down = free & (d < 0)
            if down.any():
                alpha = min(alpha, float(np.min(vals[down] / -d[down])))
        return max(alpha, 0.0)

    def solve(self):
        cfg, M, h = self.cfg, self.M, self.h
        vals = _initial_point(self.g, M, self.nl)
        self.mass = float(vals.sum())
        state = np.zeros(vals.shape, dtype=np.int8)  # 0 free, 1 at the cap, -1 at zero
        if math.isfinite(M):
            state[vals >= M] = 1
        if not self.nl.has_log_barrier:
            state[vals <= 0] = -1
        tol = cfg.inner_tol
        it = 0
        best, stalls = math.inf, 0
        resid = math.inf
        ev = self.evaluate(vals)
        for it in range(1, cfg.max_inner_iters + 1):
            free = state == 0
            hv = ev["h"]
            obj_scale = max(1.0, abs(ev["obj"]))
            if free.any():
                d = self._newton_direction(ev["H"], h * hv, free)
                slope = h * hv @ d
                w = vals[free]
                c = float(w @ hv[free] / w.sum()) if w.sum() > 0 else float(np.mean(hv[free]))
                resid = float(np.max(np.abs(hv[free] - c)))
                with np.errstate(divide="ignore", invalid="ignore"):
                    scale = _term_range(self.nl.df(vals[free]) - cfg.chi * ev["u"][free], ev["phi"][free] / cfg.tau)
            else:
                d, slope, c, resid, scale = np.zeros_like(vals), 0.0, float(np.max(hv)), 0.0, 1.0
            flat = -slope <= 1e-13 * obj_scale
            if flat:
                stalls = stalls + 1 if resid > 0.5 * best else 0
            best = min(best, resid)
            if resid <= tol * scale or stalls >= 3:
                # release pinned cells whose multiplier has the wrong sign
                p = c - hv
                wrong = np.where(state == 1, -p, np.where(state == -1, p, -np.inf))
                worst = int(np.argmax(wrong))
                if wrong[worst] > 1e-8 * scale:
                    state[worst] = 0
                    best, stalls = math.inf, 0
                    continue
                break
            if not self.nl.has_log_barrier:
                blocked = free & (vals <= 0) & (d < 0)
                if blocked.any():
                    state[blocked] = -1
                    continue
            alpha = self._max_step(vals, d, state)
            f0 = ev["obj"]
            accepted = False
            for _ in range(60):
                trial, pinned = self._advance(vals, d, alpha, state)
                ft = self.objective(trial)
                # below roundoff the objective cannot rank trial points; take the Newton step
                if flat or ft <= f0 + 1e-4 * alpha * slope:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                if -slope <= 1e-10 * obj_scale:
                    break
                raise ConvergenceError(f"line search failed in JKO step (stationarity {resid:.3e})", resid)
            vals = trial
            state[pinned != 0] = pinned[pinned != 0]
            ev = self.evaluate(vals)
        else:
            raise ConvergenceError(f"JKO step did not converge in {cfg.max_inner_iters} iterations", resid)
        return vals, state == 1, ev, it

    @staticmethod
    def _newton_direction(H, grad, free):
        """Newton step on the free cells subject to ``sum d = 0`` (Jacobi-scaled bordered system).

        ``H`` need only be positive definite on the constraint subspace.
        """
        idx = np.flatnonzero(free)
        k = len(idx)
        Hf = H[np.ix_(idx, idx)]
        gf = grad[idx]
        dg = np.abs(np.diag(Hf))
        D = 1.0 / np.sqrt(np.where(dg > 0, dg, 1.0))
        S = D[:, None] * Hf * D[None, :]
        beta = 1.0 / np.sqrt(np.sum(D * D))
        shift = 0.0
        for _ in range(30):
            K = np.empty((k + 1, k + 1))
            K[:k, :k] = S + shift * np.eye(k) if shift else S
            K[:k, k] = K[k, :k] = beta * D
            K[k, k] = 0.0
            try:
                sol = np.linalg.solve(K, np.concatenate([-D * gf, [0.0]]))
            except np.linalg.LinAlgError:
                sol = None
            if sol is not None and np.all(np.isfinite(sol)):
                d = D * sol[:k]
                if gf @ d < 0 or not np.any(d):
                    out = np.zeros(len(grad))
                    out[idx] = d
                    return out
            shift = max(2 * shift, 1e-10)
        # projected steepest descent as last resort
        out = np.zeros(len(grad))
        out[idx] = -(gf - gf.mean())
        return out


def _term_range(*terms):
    return max(max(float(np.ptp(t)) for t in terms), 1e-12)


def _step_exact_1d(g, cfg, nl):
    solver = _ExactStep1D(g, cfg, nl)
    vals, active, ev, iters = solver.solve()
    return vals, ev["u"], ev["phi"], iters


def default_entropic_eps(grid, tau):
    """``min(h^2, tau/20)``: keeps the entropic blur ``eps/(2 tau)`` at or below 2.5%."""
    return min(min(grid.spacing) ** 2, 0.05 * tau)


def _step_entropic(g, cfg, nl):
    """Entropic proximal splitting with a damped fixed point on ``u``.

    Returns the density, the potential, the plan (rows: cells of ``g``),
    the column dual potential and the iteration count.
    """
    grid = g.grid
    M = cfg.cap
    vol = grid.cell_volume
    eps = cfg.entropic_eps if cfg.entropic_eps is not None else default_entropic_eps(grid, cfg.tau)
    a = g.values.ravel() * vol
    sa = a > 0
    loga = np.log(a[sa])
    C = _cost_matrix(grid, grid)[sa, :]
    sigma = 2.0 * cfg.tau / eps
    G = poisson.green_matrix(grid) if cfg.chi > 0 else None
    rho = g.values.ravel().copy()
    u = G @ rho if G is not None else np.zeros(grid.size)
    gpot = np.zeros(grid.size)
    total_it = 0
    du = math.inf
    for _ in range(cfg.max_inner_iters):
        for _ in range(50 * cfg.max_inner_iters):
            total_it += 1
            f = eps * loga - eps * logsumexp((gpot[None, :] - C) / eps, axis=1)
            logq = logsumexp((f[:, None] - C) / eps, axis=0) - math.log(vol)
            rho_new = kl_prox_log(logq + sigma * cfg.chi * u, sigma, nl, M)
            with np.errstate(divide="ignore"):
                gpot = eps * (np.log(np.maximum(rho_new, 1e-300)) - logq)
            change = float(np.max(np.abs(rho_new - rho)))
            rho = rho_new
            # inexact inner solves while the potential is still moving
            if change <= max(cfg.inner_tol * 1e2, 1e-3 * du) * max(1.0, float(rho.max())):
                break
        else:
            raise ConvergenceError(f"entropic splitting stalled (last change {change:.3e})", change)
        if G is None:
            break
        u_new = G @ rho
        du = float(np.max(np.abs(u_new - u)))
        u = (1 - cfg.damping) * u + cfg.damping * u_new
        if du <= cfg.fixed_point_tol:
            u = u_new
            break
    else:
        raise ConvergenceError(f"potential fixed point did not converge (|du| = {du:.3e})", du)
    f = eps * loga - eps * logsumexp((gpot[None, :] - C) / eps, axis=1)
    plan = np.zeros((grid.size, grid.size))
    plan[sa, :] = np.exp((f[:, None] + gpot[None, :] - C) / eps)
    return rho, u, plan, f, gpot, eps, total_it


def _entropic_transport(rho, g, plan, f_row, gpot, eps, iters):
    """Transport record of an entropic step, oriented from ``rho`` to ``g``."""
    grid = rho.grid
    vol = grid.cell_volume
    plan = plan.T
    b = rho.values.ravel() * vol
    a = g.values.ravel() * vol
    sa, sb = a > 0, b > 0
    # dual potentials relative to the product reference a x b
    g_kl = np.where(sb, gpot - eps * np.log(np.where(sb, b, 1.0)), 0.0)
    f_kl = np.zeros(a.shape)
    f_kl[sa] = f_row - eps * np.log(a[sa])
    ot = float(f_kl @ a + g_kl @ b)
    debiased = ot - entropic_self_cost(rho, eps) - entropic_self_cost(g, eps)
    # with this convention phi/tau omits the entropic term of the step's optimality system
    phi = 0.5 * g_kl
    phi = phi - phi.mean()
    return TransportResult(
        w2_squared=max(debiased, 0.0),
        method="entropic_step",
        source=rho,
        target=g,
        plan=plan,
        phi=ScalarField(grid, phi.reshape(grid.shape)),
        eps=eps,
        marginal_defect=float(np.max(np.abs(plan.sum(axis=1) - b))),
        iterations=iters,
    )


def jko_step(g, cfg, nl, domain=None, method=None):
    """One capped JKO step from ``g``; returns ``(rho, StepReport)``."""
    grid = g.grid
    method = method or cfg.method
    if method == "auto":
        method = "exact" if grid.dimension == 1 else "entropic"
    if method == "exact" and grid.dimension != 1:
        raise ParameterError("exact step solver is 1D only")
    g_linf = linf_norm(g)[0]
    if cfg.tau * cfg.chi * g_linf > cfg.c0_empirical:
        log.warning("tau*chi*|g|_inf = %.3g exceeds c0_empirical = %.3g", cfg.tau * cfg.chi * g_linf, cfg.c0_empirical)
    mass_g = total_mass(g)
    if method == "exact":
        vals, _, _, iters = _step_exact_1d(g, cfg, nl)
        vals, defect = _renormalize(vals, mass_g, grid.cell_volume, cfg.cap)
        rho = DensityField(grid, vals)
        transport = None
    else:
        vals, _, plan, f_row, gpot, eps, iters = _step_entropic(g, cfg, nl)
        vals, defect = _renormalize(vals.reshape(grid.shape), mass_g, grid.cell_volume, cfg.cap)
        rho = DensityField(grid, vals)
        transport = _entropic_transport(rho, g, plan, f_row, gpot, eps, iters)
    report = step_report(rho, g, cfg, nl, method=method, iterations=iters, normalization_defect=defect,
                         transport=transport, domain=domain)
    return rho, report


def _renormalize(vals, mass, vol, M):
    vals = np.asarray(vals, dtype=float).copy()
    current = vals.sum() * vol
    defect = abs(current - mass)
    if defect > NORMALIZATION_FAIL * max(mass, 1.0):
        raise SolverError(f"normalisation defect {defect:.3e} after JKO step", defect)
    capped = vals >= M if math.isfinite(M) else np.zeros(vals.shape, bool)
    if math.isfinite(M):
        vals[capped] = M
    free_mass = vals[~capped].sum() * vol
    target = mass - vals[capped].sum() * vol
    if free_mass > 0:
        vals[~capped] *= target / free_mass
    if defect > 1e-9:
        log.info("normalisation defect %.3e corrected", defect)
    return (np.minimum(vals, M) if math.isfinite(M) else vals), defect


def step_transport(rho, g, cfg):
    """Exact 1D transport, or debiased Sinkhorn in 2D, between a step's output and input."""
    if rho.grid.dimension == 1:
        return w2_quantile_1d(rho, g)
    eps = cfg.entropic_eps if cfg.entropic_eps is not None else default_entropic_eps(rho.grid, cfg.tau)
    return sinkhorn_entropic(rho, g, eps)


def step_report(rho, g, cfg, nl, method="exact", iterations=0, normalization_defect=0.0, transport=None,
                prev_energy=None, domain=None):
    grid = rho.grid
    domain = grid.domain if domain is None else domain
    res = transport if transport is not None else step_transport(rho, g, cfg)
    u = poisson.solve_potential(rho, domain).u if cfg.chi > 0 else None
    energy = total_energy(rho, nl, cfg.chi, domain, potential=u)
    if prev_energy is None:
        prev_energy = total_energy(g, nl, cfg.chi, domain).total
    linf, arg = linf_norm(rho)
    g_linf = linf_norm(g)[0]
    slack_tol = cfg.slack_tol_rel * linf
    verdict = linf_monitor(g_linf, linf, cfg, slack_tol, grid.dimension)
    idx = np.unravel_index(arg, grid.shape)
    interior = all(0 < i < n - 1 for i, n in zip(idx, grid.shape))
    phi = res.phi
    kres, c, p, extra = kkt_residual(rho, g, u, phi, cfg, nl)
    M = cfg.cap
    active = float(np.mean(rho.values >= M)) if math.isfinite(M) else 0.0
    rep = StepReport(
        linf=linf,
        prev_linf=g_linf,
        linf_bound_required=verdict.required_linf,
        monitor_X=verdict.X,
        monitor_Y=verdict.Y,
        argmax_cell=arg,
        argmax_interior=interior,
        energy=energy,
        prev_energy=prev_energy,
        w2_squared=res.w2_squared,
        kkt_residual=kres,
        kkt_constant_c=c,
        pressure_max=float(p.values.max()),
        complementarity_defect=extra["complementarity"],
        active_fraction=active,
        dissipation_slack=energy_dissipation_check(prev_energy, energy.total, res.w2_squared, cfg.tau),
        monitor_pass=verdict.passed,
        xy_pass=verdict.xy_passed,
        normalization_defect=normalization_defect,
        iterations=iterations,
        method=method,
        kkt_degenerate=extra["degenerate"],
        transport=res,
        potential=u,
    )
    return rep


# --------------------------------------------------------------------------
# time loop
# --------------------------------------------------------------------------
def check_hypothesis(rho0, cfg):
    """Raise unless ``chi * lambda * t0 < 1/|rho0|_inf - eps0``."""
    m0 = linf_norm(rho0)[0]
    lhs = cfg.chi * cfg.lambda_monitor * cfg.t0
    rhs = 1.0 / m0 - cfg.eps0
    if not lhs < rhs:
        raise ConfigurationError(
            f"hypothesis chi*lambda*t0 < 1/|rho0|_inf - eps0 violated: {lhs:.6g} >= {rhs:.6g}", "t0"
        )


def run_flow(rho0, cfg, nl, domain=None, check=True, callback=None):
    """Iterate :func:`jko_step` for ``floor(t0/tau)`` steps, halting on a failed monitor."""
    if check:
        check_hypothesis(rho0, cfg)
    if cfg.tau >= cfg.eps0 * cfg.c0_empirical:
        warnings.warn(
            f"tau = {cfg.tau:g} is not below eps0*c0_empirical = {cfg.eps0 * cfg.c0_empirical:g}",
            RuntimeWarning,
            stacklevel=2,
        )
    domain = rho0.grid.domain if domain is None else domain
    traj = Trajectory(tau=cfg.tau)
    traj.times.append(0.0)
    traj.states.append(rho0)
    u0 = poisson.solve_potential(rho0, domain).u if cfg.chi > 0 else None
    traj.potentials.append(u0)
    J_prev = total_energy(rho0, nl, cfg.chi, domain, potential=u0).total
    m0 = linf_norm(rho0)[0]
    prev = rho0
    for k in range(1, cfg.n_steps + 1):
        try:
            rho, rep = jko_step(prev, cfg, nl, domain)
        except SolverError as exc:
            traj.status = "solver_error"
            traj.failed_step = k
            traj.message = str(exc)
            break
        rep.prev_energy = J_prev
        rep.dissipation_slack = energy_dissipation_check(J_prev, rep.energy.total, rep.w2_squared, cfg.tau)
        rep.cumulative_bound = cumulative_linf_bound(m0, k, cfg)
        rep.cumulative_pass = rep.linf <= rep.cumulative_bound + cfg.slack_tol_rel * rep.linf
        traj.times.append(k * cfg.tau)
        traj.states.append(rho)
        traj.reports.append(rep)
        traj.transports.append(rep.transport)
        traj.potentials.append(rep.potential)
        traj.velocities.append(velocity_field(rep.transport, cfg.tau))
        if callback is not None:
            callback(k, rho, rep)
        J_prev = rep.energy.total
        prev = rho
        if not (rep.monitor_pass and rep.xy_pass):
            traj.status = "monitor_failed"
            traj.failed_step = k
            traj.message = f"L-infinity monitor failed at step {k}: {rep.linf:.6g} > {rep.linf_bound_required:.6g}"
            break
    return traj


def metric_action(traj):
    """``sum_k W2^2(rho_k, rho_{k-1}) / tau``, the kinetic action of the geodesic interpolant."""
    return float(sum(r.w2_squared for r in traj.reports) / traj.tau)


def trajectory_interpolate(traj, t):
    """Piecewise-constant and geodesic interpolants at time ``t``."""
    tau = traj.tau
    t_last = traj.times[-1]
    if t < -1e-12 or t > t_last + 1e-12:
        raise ParameterError(f"t = {t} outside [0, {t_last}]")
    k = int(math.ceil(t / tau - 1e-9))
    if k == 0 or abs(t - k * tau) <= 1e-12 * max(1.0, tau):
        return traj.states[k], traj.states[k]
    s = (k * tau - t) / tau
    geo = displacement_interpolate(traj.transports[k - 1], traj.states[k], s)
    return traj.states[k], geo
