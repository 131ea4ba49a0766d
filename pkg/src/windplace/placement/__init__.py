"""MILP embedding of the quantile surrogate and the placement problem."""

from .bounds import NeuronBounds, propagate_bounds
from .encode import Fixings, MilpInstance, encode
from .geometry import distance_km, polyhedral_distance_km
from .lpfile import parse_solution, write_lp
from .risk import EconSpec, RiskSpec, covered_mass, cvar_from_quantiles, cvar_weights
from .solve import PlacementSolution, default_solver_cmd, find_cbc, solve, verify_solution

__all__ = [
    "EconSpec", "Fixings", "MilpInstance", "NeuronBounds", "PlacementSolution", "RiskSpec",
    "covered_mass", "cvar_from_quantiles", "cvar_weights", "default_solver_cmd",
    "distance_km", "encode", "find_cbc", "parse_solution", "polyhedral_distance_km",
    "propagate_bounds", "solve", "verify_solution", "write_lp",
]
