"""Quadratic optimal transport between cell densities.

In 1D, densities are piecewise constant, so both quantile functions are
piecewise linear in the mass variable and everything (cost, map, potential,
Hessian of the cost, displacement interpolants) is computed exactly on the
merged mass breakpoints.  Cell-centre (atomic) transport is available through
the monotone north-west-corner rule and through a linear program, which act
as mutual oracles.  In 2D the coupling is entropic (log-domain Sinkhorn).

Potentials use the cost ``|x - y|^2 / 2``, so the optimal map is
``T(x) = x - grad phi(x)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from .exceptions import ConvergenceError, MarginalError, ParameterError, SizeError
from .grid import DensityField, ScalarField, total_mass

MASS_TOL = 1e-8
LP_MAX_CELLS = 64


@dataclass
class TransportResult:
    w2_squared: float
    method: str
    source: DensityField
    target: DensityField
    map_T: np.ndarray | None = None
    plan: np.ndarray | None = None
    phi: ScalarField | None = None
    eps: float | None = None
    marginal_defect: float = 0.0
    iterations: int = 0
    monotone: "Monotone1D | None" = field(default=None, repr=False)


def _check_masses(rho, g, tol=MASS_TOL):
    ma, mb = total_mass(rho), total_mass(g)
    if abs(ma - mb) > tol * max(1.0, ma, mb):
        raise MarginalError(f"mass mismatch: {ma!r} vs {mb!r}")
    if ma <= 0:
        raise MarginalError("cannot transport zero mass")
    return ma, mb


# --------------------------------------------------------------------------
# exact 1D transport of piecewise-constant densities
# --------------------------------------------------------------------------
def _segments(vals, faces):
    """Positive-mass cells as (mass_lo, mass_hi, x_lo, x_hi), cumulative mass normalised to 1."""
    total = math.fsum(vals)
    cum = np.concatenate([[0.0], np.cumsum(vals)]) / total
    keep = vals > 0
    return cum[:-1][keep], cum[1:][keep], faces[:-1][keep], faces[1:][keep]


def _quantile_on(seg, m, mid):
    """Evaluate the quantile function at ``m`` using the segment that contains ``mid``."""
    lo, hi, xlo, xhi = seg
    k = np.minimum(np.searchsorted(hi, mid), len(hi) - 1)
    return xlo[k] + (m - lo[k]) / (hi[k] - lo[k]) * (xhi[k] - xlo[k])


def _half_rearrangement(r, g, faces):
    """Merged mass intervals with ``m <= 1/2``, masses counted from the left end."""
    sr, sg = _segments(r, faces), _segments(g, faces)
    m = np.unique(np.concatenate([sr[0], sr[1], sg[0], sg[1], [0.5]]))
    m = m[(m >= 0.0) & (m <= 0.5)]
    ma, mb = m[:-1], m[1:]
    mid = 0.5 * (ma + mb)
    return (ma, mb, _quantile_on(sr, ma, mid), _quantile_on(sr, mb, mid),
            _quantile_on(sg, ma, mid), _quantile_on(sg, mb, mid))


class Monotone1D:
    """Monotone rearrangement between two piecewise-constant 1D densities.

    Stores the merged mass intervals ``[ma, mb]`` (widths ``dm``) on which
    the source position runs linearly from ``xa`` to ``xb`` and the target
    position from ``ta`` to ``tb``.  Masses above one half are counted from
    the right end (the mirrored problem), so both tails keep full relative
    precision and mirror-symmetric inputs give mirror-symmetric output.
    """

    def __init__(self, rho, g):
        self.rho = rho
        self.g = g
        faces = rho.grid.faces[0]
        r = rho.values * rho.grid.cell_volume
        gv = g.values * g.grid.cell_volume
        self.mass = math.fsum(r)
        left = _half_rearrangement(r, gv, faces)
        right = _half_rearrangement(r[::-1], gv[::-1], -faces[::-1])
        rma, rmb, rxa, rxb, rta, rtb = (v[::-1] for v in right)
        self.dm = np.concatenate([left[1] - left[0], rmb - rma])
        self.ma = np.concatenate([left[0], 1.0 - rmb])
        self.mb = np.concatenate([left[1], 1.0 - rma])
        self.xa = np.concatenate([left[2], -rxb])
        self.xb = np.concatenate([left[3], -rxa])
        self.ta = np.concatenate([left[4], -rtb])
        self.tb = np.concatenate([left[5], -rta])
        j = len(left[0])
        if 0 < j < len(self.xa):
            # the two halves meet at the median; reconcile rounding there
            self.xa[j] = self.xb[j - 1] = 0.5 * (self.xa[j] + self.xb[j - 1])
            self.ta[j] = self.tb[j - 1] = 0.5 * (self.ta[j] + self.tb[j - 1])
        self._split_x = self.xb[j - 1] if j > 0 else faces[0]

    # -- cost -----------------------------------------------------------------
    def w2_squared(self):
        da, db = self.xa - self.ta, self.xb - self.tb
        return float(self.mass * np.sum(self.dm * (da * da + da * db + db * db)) / 3.0)

    # -- map ------------------------------------------------------------------
    def map_at(self, x):
        """``T(x)``: linear on each merged interval, constant across gaps of the source."""
        x = np.asarray(x, dtype=float)
        k = np.clip(np.searchsorted(self.xb, x, side="left"), 0, len(self.xb) - 1)
        span = self.xb[k] - self.xa[k]
        frac = np.where(span > 0, np.clip((x - self.xa[k]) / np.where(span > 0, span, 1.0), 0.0, 1.0), 0.0)
        return self.ta[k] + frac * (self.tb[k] - self.ta[k])

    # -- x-partition used by the potential and the Hessian --------------------
    def _x_pieces(self):
        faces = self.rho.grid.faces[0]
        knots = np.unique(np.concatenate([faces, self.xa, self.xb]))
        knots = knots[(knots >= faces[0]) & (knots <= faces[-1])]
        L, R = knots[:-1], knots[1:]
        keep = R > L
        L, R = L[keep], R[keep]
        xm = 0.5 * (L + R)
        k = np.searchsorted(self.xb, xm)
        kc = np.minimum(k, len(self.xb) - 1)
        inside = (k < len(self.xb)) & (self.xa[kc] <= xm)
        span = np.where(inside, self.xb[kc] - self.xa[kc], 1.0)
        slope = np.where(inside, (self.tb[kc] - self.ta[kc]) / span, 0.0)
        gap_val = np.where(k > 0, self.tb[np.maximum(k - 1, 0)], self.ta[0])
        TL = np.where(inside, self.ta[kc] + (L - self.xa[kc]) * slope, gap_val)
        TR = np.where(inside, self.ta[kc] + (R - self.xa[kc]) * slope, gap_val)
        # 1/g(T) = dT/dm on each merged interval; no curvature across gaps
        dm = self.dm[kc]
        w = np.where(inside, (self.tb[kc] - self.ta[kc]) / np.where(dm > 0, dm, 1.0), 0.0) / self.mass
        cell = np.clip(np.searchsorted(faces, xm) - 1, 0, len(faces) - 2)
        return L, R, TL, TR, w, cell

    def phi_cell_average(self):
        """Cell averages of ``phi`` with ``phi' = x - T`` and ``phi(left) = 0``."""
        L, R, TL, TR, _, cell = self._x_pieces()
        d = R - L
        qL, qR = L - TL, R - TR
        phi_knots = np.concatenate([[0.0], np.cumsum(0.5 * (qL + qR) * d)])
        integral = d * phi_knots[:-1] + d * d * (2.0 * qL + qR) / 6.0
        grid = self.rho.grid
        out = np.bincount(cell, weights=integral, minlength=grid.shape[0]) / grid.h
        return out

    def hessian(self):
        """Hessian of ``W2^2 / 2`` with respect to the source cell values.

        The second variation is ``int dF(x)^2 / g(T(x)) dx`` with ``dF`` the
        perturbed CDF, assembled exactly on the partition.
        """
        grid = self.rho.grid
        n, h = grid.shape[0], grid.h
        faces = grid.faces[0]
        L, R, _, _, w, cell = self._x_pieces()
        s0 = (L - faces[cell]) / h
        s1 = (R - faces[cell]) / h
        a = w * h * ((1 - s0) ** 3 - (1 - s1) ** 3) / 3.0
        c = w * h * (s1**3 - s0**3) / 3.0
        b = w * h * ((s1**2 - s0**2) / 2.0 - (s1**3 - s0**3) / 3.0)
        A = np.bincount(cell, weights=a, minlength=n)
        B = np.bincount(cell, weights=b, minlength=n)
        C = np.bincount(cell, weights=c, minlength=n)
        # face form on dF_0..dF_n (dF_0 = 0)
        Hf = np.zeros((n + 1, n + 1))
        idx = np.arange(n)
        Hf[idx, idx] += A
        Hf[idx + 1, idx + 1] += C
        Hf[idx, idx + 1] += B
        Hf[idx + 1, idx] += B
        # dF_j = h sum_{i<j} drho_i left of the median and -h sum_{i>=j} drho_i right of it;
        # the two agree on mass-preserving perturbations, and neither tail's weights reach the other
        Lmat = h * np.tril(np.ones((n + 1, n)), -1)
        right = faces > self._split_x
        Lmat[right] = -h * np.triu(np.ones((n + 1, n)))[right]
        return Lmat.T @ Hf @ Lmat

    # -- displacement interpolation -------------------------------------------
    def interpolate(self, s):
        grid = self.rho.grid
        faces = grid.faces[0]
        za = (1 - s) * self.xa + s * self.ta
        zb = (1 - s) * self.xb + s * self.tb
        dm = self.dm
        span = zb - za
        flat = span <= 0
        frac = np.where(
            flat[:, None],
            (faces[None, :] >= za[:, None]).astype(float),
            np.clip((faces[None, :] - za[:, None]) / np.where(flat, 1.0, span)[:, None], 0.0, 1.0),
        )
        cdf = dm @ frac
        cdf[-1] = 1.0
        cdf[0] = 0.0
        cell_mass = np.diff(cdf) * self.mass
        return DensityField(grid, np.maximum(cell_mass, 0.0) / grid.cell_volume)


def w2_quantile_1d(rho, g, atomic=False):
    """Exact 1D quadratic transport.

    With ``atomic=False`` (default) the densities are the piecewise-constant
    functions they represent.  With ``atomic=True`` each cell is a point mass
    at its centre, matching :func:`lp_transport_oracle`.
    """
    if rho.grid.dimension != 1 or g.grid.dimension != 1:
        raise ParameterError("w2_quantile_1d needs 1D densities")
    _check_masses(rho, g)
    if atomic:
        return _w2_atomic_1d(rho, g)
    mono = Monotone1D(rho, g)
    T = mono.map_at(rho.grid.centers[0])
    phi = ScalarField(rho.grid, mono.phi_cell_average())
    return TransportResult(mono.w2_squared(), "quantile", rho, g, map_T=T, phi=phi, monotone=mono)


def _w2_atomic_1d(rho, g):
    a = rho.values * rho.grid.cell_volume
    b = g.values * g.grid.cell_volume
    x, y = rho.grid.centers[0], g.grid.centers[0]
    b = b * (a.sum() / b.sum())
    plan = np.zeros((len(a), len(b)))
    i = j = 0
    ra, rb = a.copy(), b.copy()
    cost = 0.0
    while i < len(a) and j < len(b):
        if ra[i] <= 0:
            i += 1
            continue
        if rb[j] <= 0:
            j += 1
            continue
        mvd = min(ra[i], rb[j])
        plan[i, j] += mvd
        cost += mvd * (x[i] - y[j]) ** 2
        ra[i] -= mvd
        rb[j] -= mvd
        if ra[i] <= rb[j]:
            i += 1
        else:
            j += 1
    T = np.where(a > 0, plan @ y / np.where(a > 0, a, 1.0), x)
    return TransportResult(float(cost), "quantile_atomic", rho, g, map_T=T, plan=plan)


def kantorovich_potential_1d(res):
    if res.phi is None:
        raise ParameterError("transport result carries no potential")
    return res.phi


# --------------------------------------------------------------------------
# exact LP on cell centres
# --------------------------------------------------------------------------
def _cost_matrix(ga, gb):
    X, Y = ga.points, gb.points
    return np.sum((X[:, None, :] - Y[None, :, :]) ** 2, axis=-1)


def lp_transport_oracle(rho, g):
    """Exact optimal coupling of the cell-centre point masses by linear programming."""
    if rho.grid.size > LP_MAX_CELLS or g.grid.size > LP_MAX_CELLS:
        raise SizeError(f"LP oracle limited to {LP_MAX_CELLS} cells per marginal")
    _check_masses(rho, g)
    a = rho.values.ravel() * rho.grid.cell_volume
    b = g.values.ravel() * g.grid.cell_volume
    b = b * (a.sum() / b.sum())
    C = _cost_matrix(rho.grid, g.grid)
    na, nb = len(a), len(b)
    A_eq = np.zeros((na + nb, na * nb))
    for i in range(na):
        A_eq[i, i * nb:(i + 1) * nb] = 1.0
    for j in range(nb):
        A_eq[na + j, j::nb] = 1.0
    res = linprog(
        C.ravel(), A_eq=A_eq[:-1], b_eq=np.concatenate([a, b])[:-1], bounds=(0, None), method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise ConvergenceError(f"LP solve failed: {res.message}")
    plan = res.x.reshape(na, nb)
    w2 = float(np.sum(plan * C))
    duals = np.asarray(res.eqlin.marginals)
    f = duals[:na]
    phi = 0.5 * (f - f.mean())
    T = None
    if rho.grid.dimension == 1:
        T = np.where(a > 0, plan @ g.grid.centers[0] / np.where(a > 0, a, 1.0), rho.grid.centers[0])
    return TransportResult(w2, "lp", rho, g, map_T=T, plan=plan, phi=ScalarField(rho.grid, phi))


# --------------------------------------------------------------------------
# entropic transport (log-domain Sinkhorn)
# --------------------------------------------------------------------------
def _sinkhorn_log(loga, logb, C, eps, tol, max_iter, f=None, g=None):
    """Return potentials (f, g) for cost ``C`` and regularisation ``eps``."""
    f = np.zeros(len(loga)) if f is None else f
    g = np.zeros(len(logb)) if g is None else g
    a = np.exp(loga)
    for it in range(1, max_iter + 1):
        f = -eps * logsumexp(logb[None, :] + (g[None, :] - C) / eps, axis=1)
        g = -eps * logsumexp(loga[:, None] + (f[:, None] - C) / eps, axis=0)
        if it % 10 == 0 or it == max_iter:
            logpi = loga[:, None] + logb[None, :] + (f[:, None] + g[None, :] - C) / eps
            err = np.abs(np.exp(logsumexp(logpi, axis=1)) - a).sum()
            if err <= tol:
                return f, g, it, err
    return f, g, max_iter, err


def _sinkhorn_symmetric(loga, C, eps, tol, max_iter):
    f = np.zeros(len(loga))
    a = np.exp(loga)
    for it in range(1, max_iter + 1):
        f = 0.5 * (f - eps * logsumexp(loga[None, :] + (f[None, :] - C) / eps, axis=1))
        if it % 10 == 0:
            logpi = loga[:, None] + loga[None, :] + (f[:, None] + f[None, :] - C) / eps
            if np.abs(np.exp(logsumexp(logpi, axis=1)) - a).sum() <= tol:
                break
    return f


def entropic_self_cost(rho, eps, tol=1e-10, max_iter=20000):
    """Half of ``OT_eps(rho, rho)``; subtracting it from both sides debiases an entropic cost."""
    a = rho.values.ravel() * rho.grid.cell_volume
    sa = a > 0
    C = _cost_matrix(rho.grid, rho.grid)[np.ix_(sa, sa)]
    f = _sinkhorn_symmetric(np.log(a[sa]), C, eps, tol, max_iter)
    return float(f @ a[sa])


def _eps_schedule(C, eps):
    start = max(eps, float(C.max()))
    sched = []
    e = start
    while e > eps:
        sched.append(e)
        e *= 0.5
    sched.append(eps)
    return sched


def sinkhorn_entropic(rho, g, eps, tol=1e-10, max_iter=20000, debias=True):
    """Entropic coupling with the debiased (Sinkhorn divergence) cost.

    ``eps`` is in units of the squared-distance cost.  ``phi`` is the source
    dual potential for cost ``|x-y|^2/2``, recentred to mean zero.
    """
    if not eps > 0:
        raise ParameterError("eps must be positive")
    _check_masses(rho, g)
    a = rho.values.ravel() * rho.grid.cell_volume
    b = g.values.ravel() * g.grid.cell_volume
    b = b * (a.sum() / b.sum())
    sa, sb = a > 0, b > 0
    C_full = _cost_matrix(rho.grid, g.grid)
    C = C_full[np.ix_(sa, sb)]
    loga, logb = np.log(a[sa]), np.log(b[sb])
    f = gg = None
    total_it = 0
    for e in _eps_schedule(C, eps):
        last = e == eps
        f, gg, it, err = _sinkhorn_log(loga, logb, C, e, tol if last else 1e-3, max_iter if last else 2000, f, gg)
        total_it += it
    if err > tol:
        raise ConvergenceError(f"Sinkhorn did not reach marginal tolerance (gap {err:.3e})", err)
    logpi = loga[:, None] + logb[None, :] + (f[:, None] + gg[None, :] - C) / eps
    pi = np.exp(logpi)
    pi *= (a[sa] / pi.sum(axis=1))[:, None]  # final projection on the source marginal
    plan = np.zeros((len(a), len(b)))
    plan[np.ix_(sa, sb)] = pi
    defect = max(np.abs(plan.sum(axis=1) - a).sum(), np.abs(plan.sum(axis=0) - b).sum())
    ot_ab = float(f @ a[sa] + gg @ b[sb])
    cost = ot_ab
    if debias:
        faa = _sinkhorn_symmetric(loga, C_full[np.ix_(sa, sa)], eps, tol, max_iter)
        fbb = _sinkhorn_symmetric(logb, C_full[np.ix_(sb, sb)], eps, tol, max_iter)
        cost = ot_ab - float(faa @ a[sa]) - float(fbb @ b[sb])
    phi_full = np.zeros(len(a))
    phi_full[sa] = 0.5 * f
    phi_full[~sa] = 0.5 * f.min() if sa.any() else 0.0
    phi_full -= phi_full.mean()
    return TransportResult(
        float(cost), f"entropic({eps:g})", rho, g, plan=plan, phi=ScalarField(rho.grid, phi_full),
        eps=eps, marginal_defect=float(defect), iterations=total_it,
    )


# --------------------------------------------------------------------------
# displacement interpolation
# --------------------------------------------------------------------------
def _deposit_cic(grid, pos, mass):
    """Cloud-in-cell deposit of point masses onto cell centres (mass conservative)."""
    out = np.zeros(grid.shape)
    idx_parts, w_parts = [], []
    for ax in range(grid.dimension):
        lo = grid.domain.extent[ax][0]
        h = grid.spacing[ax]
        n = grid.shape[ax]
        u = (pos[:, ax] - lo) / h - 0.5
        u = np.clip(u, 0.0, n - 1.0)
        i0 = np.minimum(np.floor(u).astype(int), n - 2)
        t = u - i0
        idx_parts.append((i0, i0 + 1))
        w_parts.append((1.0 - t, t))
    if grid.dimension == 1:
        for k in range(2):
            np.add.at(out, idx_parts[0][k], mass * w_parts[0][k])
    else:
        for kx in range(2):
            for ky in range(2):
                np.add.at(out, (idx_parts[0][kx], idx_parts[1][ky]), mass * w_parts[0][kx] * w_parts[1][ky])
    return out / grid.cell_volume


def displacement_interpolate(res, rho_source, s):
    """Push ``rho_source`` along ``x -> (1-s) x + s T(x)`` and re-bin on its grid."""
    if not 0.0 <= s <= 1.0:
        raise ParameterError(f"s = {s} outside [0, 1]")
    if res.monotone is not None:
        return res.monotone.interpolate(s)
    if res.plan is None:
        raise ParameterError("transport result has neither a monotone map nor a plan")
    grid = rho_source.grid
    X, Y = grid.points, res.target.grid.points
    ii, jj = np.nonzero(res.plan > 0)
    pos = (1 - s) * X[ii] + s * Y[jj]
    return DensityField(grid, _deposit_cic(grid, pos, res.plan[ii, jj]))
