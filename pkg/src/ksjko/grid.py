"""Uniform cell-centred grids on intervals and rectangles, and density fields.

Densities are stored as cell averages (mass per unit volume), so the mass of a
field is ``sum(values) * cell_volume``.  Two-dimensional arrays use ``ij``
indexing: ``values[i, j]`` is the cell at ``(x_i, y_j)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import DomainError, GridMismatchError, InvalidResolutionError

COUPLINGS = ("dirichlet", "neumann_shifted", "neumann_helmholtz", "periodic", "freespace")


@dataclass(frozen=True)
class DomainSpec:
    dimension: int
    extent: tuple
    coupling: str = "dirichlet"

    def __post_init__(self):
        extent = tuple(tuple(float(v) for v in ax) for ax in self.extent)
        object.__setattr__(self, "extent", extent)
        if self.dimension not in (1, 2):
            raise DomainError(f"dimension must be 1 or 2, got {self.dimension}")
        if len(extent) != self.dimension:
            raise DomainError("extent must give one (lo, hi) pair per axis")
        for lo, hi in extent:
            if not hi > lo:
                raise DomainError(f"empty extent ({lo}, {hi})")
        if self.coupling not in COUPLINGS:
            raise DomainError(f"unknown coupling {self.coupling!r}; expected one of {COUPLINGS}")
        if self.coupling == "freespace" and self.dimension != 2:
            raise DomainError("freespace coupling is only built for dimension 2")

    @property
    def lengths(self):
        return tuple(hi - lo for lo, hi in self.extent)

    @property
    def volume(self):
        return float(np.prod(self.lengths))

    @property
    def centroid(self):
        return tuple(0.5 * (lo + hi) for lo, hi in self.extent)


def interval(lo=0.0, hi=1.0, coupling="dirichlet"):
    return DomainSpec(1, ((lo, hi),), coupling)


def rectangle(x=(0.0, 1.0), y=(0.0, 1.0), coupling="dirichlet"):
    return DomainSpec(2, (tuple(x), tuple(y)), coupling)


@dataclass(frozen=True)
class Grid:
    domain: DomainSpec
    shape: tuple

    @property
    def dimension(self):
        return self.domain.dimension

    @cached_property
    def spacing(self):
        return tuple(L / n for L, n in zip(self.domain.lengths, self.shape))

    @property
    def h(self):
        """Spacing along the first axis (all axes in the common square case)."""
        return self.spacing[0]

    @cached_property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def size(self):
        return int(np.prod(self.shape))

    @cached_property
    def faces(self):
        return tuple(
            lo + h * np.arange(n + 1) for (lo, _), h, n in zip(self.domain.extent, self.spacing, self.shape)
        )

    @cached_property
    def centers(self):
        """Per-axis cell-centre coordinates."""
        return tuple(lo + h * (np.arange(n) + 0.5) for (lo, _), h, n in zip(self.domain.extent, self.spacing, self.shape))

    @cached_property
    def mesh(self):
        """Cell-centre coordinates broadcast to the grid shape, one array per axis."""
        return np.meshgrid(*self.centers, indexing="ij")

    @cached_property
    def points(self):
        """Cell centres as an ``(size, dimension)`` array in C order."""
        return np.stack([m.ravel() for m in self.mesh], axis=1)

    def key(self):
        return (self.domain.dimension, self.domain.extent, self.domain.coupling, self.shape)


def build_grid(domain, n):
    """Uniform grid with ``n`` cells per axis (or a per-axis tuple)."""
    ns = tuple(int(v) for v in np.broadcast_to(np.asarray(n), (domain.dimension,)))
    if any(v < 2 for v in ns):
        raise InvalidResolutionError(f"need at least 2 cells per axis, got {n}")
    return Grid(domain, ns)


def _frozen(values, grid):
    arr = np.array(values, dtype=float).reshape(grid.shape)
    arr.setflags(write=False)
    return arr


class DensityField:
    """Nonnegative cell-averaged density on ``grid``.

    Unit mass is not enforced on construction (intermediate fields such as
    the zero density are legitimate); see :func:`ksjko.validation.check_probability`.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        vals = _frozen(values, grid)
        if not np.all(np.isfinite(vals)):
            raise DomainError("density values must be finite")
        if np.any(vals < 0):
            raise DomainError(f"density values must be nonnegative (min {vals.min():.3e})")
        self.grid = grid
        self.values = vals

    def __repr__(self):
        return f"DensityField(shape={self.grid.shape}, mass={total_mass(self):.6g})"

    def with_values(self, values):
        return DensityField(self.grid, values)

    @classmethod
    def from_function(cls, grid, func, normalize=True):
        vals = np.maximum(np.asarray(func(*grid.mesh), dtype=float), 0.0)
        vals = np.broadcast_to(vals, grid.shape)
        if normalize:
            mass = vals.sum() * grid.cell_volume
            if mass <= 0:
                raise DomainError("profile has zero mass")
            vals = vals / mass
        return cls(grid, vals)

    @classmethod
    def uniform(cls, grid):
        return cls(grid, np.full(grid.shape, 1.0 / grid.domain.volume))


class ScalarField:
    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        vals = _frozen(values, grid)
        if not np.all(np.isfinite(vals)):
            raise DomainError("scalar field values must be finite")
        self.grid = grid
        self.values = vals

    def __repr__(self):
        return f"ScalarField(shape={self.grid.shape})"


def same_grid(a, b):
    if a.grid.shape != b.grid.shape or a.grid.domain.extent != b.grid.domain.extent:
        raise GridMismatchError(f"grids differ: {a.grid.shape} vs {b.grid.shape}")


def total_mass(rho):
    return float(rho.values.sum() * rho.grid.cell_volume)


def linf_norm(rho):
    """Maximum cell value and the flat (C-order) index of the first maximiser."""
    idx = int(np.argmax(rho.values))
    return float(rho.values.flat[idx]), idx


def second_moment(rho):
    """Second moment about the centroid of the domain."""
    grid = rho.grid
    r2 = sum((m - c) ** 2 for m, c in zip(grid.mesh, grid.domain.centroid))
    return float(np.sum(r2 * rho.values) * grid.cell_volume)


def refine(field):
    """Split every cell into ``2**d`` children carrying the parent value."""
    grid = field.grid
    fine = Grid(grid.domain, tuple(2 * n for n in grid.shape))
    vals = field.values
    for ax in range(grid.dimension):
        vals = np.repeat(vals, 2, axis=ax)
    return type(field)(fine, vals)
