"""Density-capped JKO schemes for Keller-Segel type chemotaxis energies."""
from .config import RunConfig, load_config, parse_config, serialize_config
from .energy import ENTROPY, Nonlinearity, parse_nonlinearity, power, regularized, total_energy
from .estimator import KellerSegelJKO
from .exceptions import ConfigurationError, KsJkoError, SolverError
from .flow import JkoConfig, StepReport, Trajectory, jko_step, run_flow
from .grid import DensityField, DomainSpec, build_grid, interval, linf_norm, rectangle, total_mass
from .poisson import solve_potential
from .transport import lp_transport_oracle, sinkhorn_entropic, w2_quantile_1d

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "DensityField", "DomainSpec", "ENTROPY", "JkoConfig", "KellerSegelJKO",
    "KsJkoError", "Nonlinearity", "RunConfig", "SolverError", "StepReport", "Trajectory", "build_grid",
    "interval", "jko_step", "linf_norm", "load_config", "lp_transport_oracle", "parse_config",
    "parse_nonlinearity", "power", "rectangle", "regularized", "run_flow", "serialize_config",
    "sinkhorn_entropic", "solve_potential", "total_energy", "total_mass", "w2_quantile_1d",
]
