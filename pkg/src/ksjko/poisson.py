"""Chemoattractant potential ``u`` from ``rho`` for each coupling variant.

All bounded-domain variants use the cell-centred finite-volume Laplacian.
Dirichlet walls sit half a cell from the outer centres (ghost value ``-u``);
Neumann walls carry zero flux; periodic axes wrap.  With this stencil the
discrete Green identity ``sum_faces |grad u|^2 = sum rho u`` holds exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.signal import fftconvolve

from .exceptions import SolverError
from .grid import Grid, ScalarField

CG_RTOL = 1e-10
MAX_PRINCIPLE_TOL = 1e-12


@dataclass(frozen=True)
class PotentialSolve:
    u: ScalarField
    residual: float
    variant: str


def _axis_matrix(n, h, coupling):
    main = np.full(n, 2.0)
    off = -np.ones(n - 1)
    A = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    if coupling == "dirichlet":
        A[0, 0] = A[n - 1, n - 1] = 3.0
    elif coupling == "periodic":
        A[0, n - 1] += -1.0
        A[n - 1, 0] += -1.0
    else:  # zero-flux walls
        A[0, 0] = A[n - 1, n - 1] = 1.0
    return (A.tocsr() / h**2)


@lru_cache(maxsize=32)
def _operator(key):
    dim, extent, coupling, shape = key
    grid = _grid_from_key(key)
    axis_coupling = coupling if coupling in ("dirichlet", "periodic") else "neumann"
    mats = [_axis_matrix(n, h, axis_coupling) for n, h in zip(shape, grid.spacing)]
    if dim == 1:
        A = mats[0]
    else:
        A = sp.kron(mats[0], sp.identity(shape[1])) + sp.kron(sp.identity(shape[0]), mats[1])
    if coupling == "neumann_helmholtz":
        A = A + sp.identity(grid.size)
    return sp.csr_matrix(A)


def _grid_from_key(key):
    from .grid import DomainSpec

    dim, extent, coupling, shape = key
    return Grid(DomainSpec(dim, extent, coupling), shape)


def laplacian_matrix(grid, coupling=None):
    """Sparse discrete ``-Delta`` (``-Delta + I`` for Helmholtz) acting on flattened fields."""
    coupling = grid.domain.coupling if coupling is None else coupling
    if coupling == "freespace":
        raise ValueError("freespace potential has no bounded-domain stencil")
    dim, extent, _, shape = grid.key()
    return _operator((dim, extent, coupling, shape))


def _rhs(rho, coupling):
    vals = rho.values.ravel()
    if coupling in ("neumann_shifted", "periodic"):
        return vals - 1.0 / rho.grid.domain.volume
    return vals.copy()


def laplacian_apply(u, domain=None):
    coupling = (u.grid.domain if domain is None else domain).coupling
    A = laplacian_matrix(u.grid, coupling)
    return ScalarField(u.grid, A @ u.values.ravel())


def _banded_1d(A):
    n = A.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = A.diagonal(1)
    ab[1] = A.diagonal()
    ab[2, :-1] = A.diagonal(-1)
    return ab


def _solve_1d(A, b, singular):
    if singular:
        # consistent singular system: pin u[0] = 0, solve the rest, recentre
        ab = _banded_1d(A[1:, 1:])
        u = np.zeros_like(b)
        u[1:] = sla.solve_banded((1, 1), ab, b[1:])
        return u - u.mean()
    return sla.solve_banded((1, 1), _banded_1d(A), b)


def _solve_periodic(grid, b):
    shape = grid.shape
    bh = np.fft.fftn(b.reshape(shape))
    lam = np.zeros(shape)
    for ax, (n, h) in enumerate(zip(shape, grid.spacing)):
        k = np.arange(n)
        lam_ax = (2.0 - 2.0 * np.cos(2.0 * np.pi * k / n)) / h**2
        lam = lam + lam_ax.reshape([-1 if a == ax else 1 for a in range(grid.dimension)])
    lam.flat[0] = 1.0
    uh = bh / lam
    uh.flat[0] = 0.0
    return np.real(np.fft.ifftn(uh)).ravel()


def freespace_kernel(r):
    """Fundamental solution ``(1/2pi) log r`` of the Laplacian in 2D."""
    return np.log(r) / (2.0 * np.pi)


def _self_interaction(grid):
    # kernel averaged over the disk with the cell's area
    a = np.sqrt(grid.cell_volume / np.pi)
    return (np.log(a) - 0.5) / (2.0 * np.pi)


@lru_cache(maxsize=8)
def _freespace_stencil(key):
    grid = _grid_from_key(key)
    nx, ny = grid.shape
    hx, hy = grid.spacing
    dx = hx * np.arange(-(nx - 1), nx)
    dy = hy * np.arange(-(ny - 1), ny)
    X, Y = np.meshgrid(dx, dy, indexing="ij")
    r = np.hypot(X, Y)
    r[nx - 1, ny - 1] = 1.0
    K = freespace_kernel(r)
    K[nx - 1, ny - 1] = _self_interaction(grid)
    return K


def freespace_potential(rho):
    """``u = -sum_y U(x - y) rho(y) h^d`` on the simulation window."""
    K = _freespace_stencil(rho.grid.key())
    conv = fftconvolve(rho.values, K, mode="full")
    nx, ny = rho.grid.shape
    conv = conv[nx - 1: 2 * nx - 1, ny - 1: 2 * ny - 1]
    return -conv * rho.grid.cell_volume


def solve_potential(rho, domain=None):
    grid = rho.grid
    domain = grid.domain if domain is None else domain
    coupling = domain.coupling
    if coupling == "freespace":
        return PotentialSolve(ScalarField(grid, freespace_potential(rho)), 0.0, coupling)
    A = laplacian_matrix(grid, coupling)
    b = _rhs(rho, coupling)
    singular = coupling == "neumann_shifted"
    if coupling == "periodic":
        u = _solve_periodic(grid, b)
    elif grid.dimension == 1:
        u = _solve_1d(A, b, singular)
    else:
        diag = A.diagonal()
        prec = spla.LinearOperator(A.shape, matvec=lambda x: x / diag)
        u, info = spla.cg(A, b, rtol=CG_RTOL, atol=0.0, M=prec, maxiter=20 * grid.size)
        if singular:
            u = u - u.mean()
        if info != 0:
            res = float(np.max(np.abs(A @ u - b)))
            raise SolverError(f"conjugate gradient failed to converge (info={info})", res)
    residual = float(np.max(np.abs(A @ u - b)))
    scale = max(1.0, float(np.max(np.abs(b))))
    if residual > 1e-8 * scale:
        raise SolverError(f"potential residual {residual:.3e} above tolerance", residual)
    if coupling == "dirichlet" and u.min() < -MAX_PRINCIPLE_TOL * max(1.0, abs(u).max()):
        raise SolverError("maximum principle violated by Dirichlet solve", residual)
    return PotentialSolve(ScalarField(grid, u), residual, coupling)


@lru_cache(maxsize=16)
def _green_matrix(key):
    grid = _grid_from_key(key)
    n = grid.size
    coupling = grid.domain.coupling
    if coupling == "freespace":
        K = _freespace_stencil(key)
        nx, ny = grid.shape
        i = np.arange(nx)
        j = np.arange(ny)
        di = (i[:, None] - i[None, :]) + nx - 1
        dj = (j[:, None] - j[None, :]) + ny - 1
        G = -K[di[:, None, :, None], dj[None, :, None, :]].reshape(n, n) * grid.cell_volume
    else:
        A = laplacian_matrix(grid, coupling).toarray()
        if coupling in ("neumann_shifted", "periodic"):
            G = np.linalg.pinv(A, hermitian=True)
        else:
            G = np.linalg.inv(A)
    G = 0.5 * (G + G.T)
    G.setflags(write=False)
    return G


def green_matrix(grid):
    """Dense matrix ``G`` with ``u = G rho (+ const)`` for the grid's coupling.

    For the shifted-Neumann and periodic variants ``G`` already includes the
    removal of the mean; desk-scale grids only.
    """
    return _green_matrix(grid.key())


def dirichlet_energy(u, domain=None):
    """Face-based ``int |grad u|^2`` honouring the boundary variant."""
    grid = u.grid
    coupling = (grid.domain if domain is None else domain).coupling
    vals = u.values
    total = 0.0
    for ax, h in enumerate(grid.spacing):
        face_area = grid.cell_volume / h
        d = np.diff(vals, axis=ax)
        total += np.sum(d**2) / h * face_area
        if coupling == "periodic":
            wrap = np.take(vals, [0], axis=ax) - np.take(vals, [-1], axis=ax)
            total += np.sum(wrap**2) / h * face_area
        elif coupling == "dirichlet":
            edge = np.take(vals, [0], axis=ax) ** 2 + np.take(vals, [-1], axis=ax) ** 2
            total += np.sum(edge) / (0.5 * h) * face_area
    return float(total)
