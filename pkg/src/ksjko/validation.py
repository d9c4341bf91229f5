"""Argument checks shared by the estimator and the public helpers."""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ParameterError


def check_density_array(X, name="X"):
    """Finite, nonnegative 1D or 2D float array with positive mass."""
    arr = check_array(X, ensure_2d=False, dtype=np.float64, ensure_all_finite=True, input_name=name)
    if arr.ndim not in (1, 2):
        raise ParameterError(f"{name} must be 1D or 2D, got shape {arr.shape}")
    if np.any(arr < 0):
        raise ParameterError(f"{name} has negative entries")
    if not arr.sum() > 0:
        raise ParameterError(f"{name} carries no mass")
    return arr


def check_scalar(value, name, *, lower=None, upper=None, lower_inclusive=True, allow_none=False):
    """Real scalar inside an optional interval; ``None`` passes when allowed."""
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ParameterError(f"{name} must be a real number, got {value!r}")
    v = float(value)
    if not np.isfinite(v):
        raise ParameterError(f"{name} must be finite")
    if lower is not None and (v < lower or (v == lower and not lower_inclusive)):
        op = ">=" if lower_inclusive else ">"
        raise ParameterError(f"{name} must be {op} {lower}, got {v}")
    if upper is not None and v > upper:
        raise ParameterError(f"{name} must be <= {upper}, got {v}")
    return v


def check_extent(extent, ndim):
    """``(lo, hi)`` for 1D or ``((lo, hi), (lo, hi))`` for 2D."""
    ext = np.asarray(extent, dtype=float)
    if ext.ndim == 1:
        ext = ext[None, :]
    if ext.shape == (1, 2) and ndim == 2:
        ext = np.repeat(ext, 2, axis=0)
    if ext.shape != (ndim, 2) or np.any(ext[:, 1] <= ext[:, 0]):
        raise ParameterError(f"extent {extent!r} does not describe a {ndim}D box")
    return tuple((float(a), float(b)) for a, b in ext)


def check_probability(rho, tol=1e-9):
    """Raise unless ``rho`` has unit mass within ``tol``; returns the mass."""
    mass = float(rho.values.sum() * rho.grid.cell_volume)
    if abs(mass - 1.0) > tol:
        raise ParameterError(f"density has mass {mass:.12g}, expected 1")
    return mass
