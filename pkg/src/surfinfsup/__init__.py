"""Discrete inf-sup constants and stabilized mixed solves for inextensible surface flow."""

from .assembly import FeOperators, assemble
from .errors import (AssemblyError, BoundViolation, CapacityError, ConfigurationError,
                     GeometryError, ParameterError, RankDeficiencyError, SolverError,
                     SurfInfSupError)
from .geometry import GeometryData, compute_geometry
from .infsup import InfSupProblem, SpectrumResult, h_sweep, infsup_constant, stabilized_infsup
from .mesh import TriMesh, generate_surface, refine
from .meshio import load_mesh, save_mesh
from .mixed import MixedProblem, MixedSolution, solve_mixed, surface_tension_force
from .oracle import check_bounds, construct_proof_field, proof_constants

__version__ = "0.1.0"

__all__ = [
    "AssemblyError", "BoundViolation", "CapacityError", "ConfigurationError", "FeOperators",
    "GeometryData", "GeometryError", "InfSupProblem", "MixedProblem", "MixedSolution",
    "ParameterError", "RankDeficiencyError", "SolverError", "SpectrumResult", "SurfInfSupError",
    "TriMesh", "assemble", "check_bounds", "compute_geometry", "construct_proof_field",
    "generate_surface", "h_sweep", "infsup_constant", "load_mesh", "proof_constants", "refine",
    "save_mesh", "solve_mixed", "stabilized_infsup", "surface_tension_force", "__version__",
]
