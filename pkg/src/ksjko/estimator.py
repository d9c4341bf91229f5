"""scikit-learn style wrapper around :func:`ksjko.flow.run_flow`.

``fit`` takes an initial density array and computes the trajectory;
``predict`` evaluates the geodesic interpolant at requested times and
``transform`` maps initial densities to their state at ``t0``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .energy import Nonlinearity, parse_nonlinearity
from .flow import JkoConfig, run_flow, trajectory_interpolate
from .grid import DensityField, DomainSpec, build_grid
from .validation import check_density_array, check_extent, check_scalar


class KellerSegelJKO(TransformerMixin, BaseEstimator):
    """Capped JKO flow for ``rho_t + chi div(rho grad u) = Lap Psi(rho)``.

    Parameters mirror the ``[physics]`` and ``[scheme]`` blocks of a run
    configuration.  ``nonlinearity`` takes a spec string such as
    ``"entropy"``, ``"power:m=2"`` or ``"regularized:base=zero,delta=1e-3"``.
    ``extent`` is ``(lo, hi)``, applied to every axis of a 2D input unless
    given per axis.

    Attributes set by ``fit``: ``trajectory_``, ``times_``, ``states_``
    (array of shape ``(n_states, *grid_shape)``), ``linf_``, ``energies_``,
    ``status_`` and ``grid_``.
    """

    def __init__(self, chi=1.0, tau=1e-3, t0=0.1, nonlinearity="entropy", extent=(0.0, 1.0),
                 coupling="dirichlet", lambda_monitor=1.5, eps0=0.05, cap=None, entropic_eps=None,
                 method="auto", check_hypothesis=True):
        self.chi = chi
        self.tau = tau
        self.t0 = t0
        self.nonlinearity = nonlinearity
        self.extent = extent
        self.coupling = coupling
        self.lambda_monitor = lambda_monitor
        self.eps0 = eps0
        self.cap = cap
        self.entropic_eps = entropic_eps
        self.method = method
        self.check_hypothesis = check_hypothesis

    def _config(self):
        return JkoConfig(
            chi=check_scalar(self.chi, "chi", lower=0.0),
            tau=check_scalar(self.tau, "tau", lower=0.0, lower_inclusive=False),
            t0=check_scalar(self.t0, "t0", lower=0.0),
            lambda_monitor=check_scalar(self.lambda_monitor, "lambda_monitor", lower=1.0, lower_inclusive=False),
            eps0=check_scalar(self.eps0, "eps0", lower=0.0, lower_inclusive=False),
            cap_M=check_scalar(self.cap, "cap", lower=0.0, lower_inclusive=False, allow_none=True),
            entropic_eps=check_scalar(self.entropic_eps, "entropic_eps", lower=0.0, lower_inclusive=False,
                                      allow_none=True),
            method=self.method,
        )

    def _nonlinearity(self):
        if isinstance(self.nonlinearity, Nonlinearity):
            return self.nonlinearity
        return parse_nonlinearity(str(self.nonlinearity))

    def _density(self, X):
        arr = check_density_array(X)
        domain = DomainSpec(arr.ndim, check_extent(self.extent, arr.ndim), self.coupling)
        grid = build_grid(domain, arr.shape)
        return DensityField.from_function(grid, lambda *_: arr)

    def _run(self, X):
        rho0 = self._density(X)
        return run_flow(rho0, self._config(), self._nonlinearity(), check=self.check_hypothesis)

    def fit(self, X, y=None):
        """Run the flow from the density ``X`` (rescaled to unit mass)."""
        traj = self._run(X)
        self.trajectory_ = traj
        self.grid_ = traj.states[0].grid
        self.times_ = np.asarray(traj.times)
        self.states_ = np.stack([s.values for s in traj.states])
        self.linf_ = traj.linf
        self.energies_ = traj.energies
        self.status_ = traj.status
        return self

    def predict(self, T):
        """Geodesic interpolant at times ``T``; shape ``(len(T), *grid_shape)``."""
        check_is_fitted(self, "trajectory_")
        times = np.atleast_1d(np.asarray(T, dtype=float))
        return np.stack([trajectory_interpolate(self.trajectory_, float(t))[1].values for t in times])

    def transform(self, X):
        """Terminal density of the flow started from ``X``.

        ``X`` is one density, or a stack of densities along the first axis
        when it has one more dimension than the fitted grid.
        """
        check_is_fitted(self, "trajectory_")
        arr = np.asarray(X, dtype=float)
        if arr.ndim == self.grid_.dimension + 1:
            return np.stack([self._run(a).states[-1].values for a in arr])
        return self._run(arr).states[-1].values

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y).states_[-1]
