"""Mixed finite element benchmarks for stress symmetry and material robustness.

The package assembles Hellinger-Reissner saddle-point systems for strongly
(Johnson-Mercier) and weakly (PEERS, Arnold-Falk-Winther) symmetric stress
elements, solves manufactured benchmark cases with a direct solver, and
provides probes of the structural properties that decide whether a scheme's
stress is insensitive to stress-free data.
"""

from .assembly import SaddlePointSystem, SchemeConfig, assemble_stokes, assemble_system
from .cases import ErrorReport, ManufacturedCase, MaterialParams, compute_errors, get_case
from .linsolve import Solution, solve_direct
from .mesh import Mesh, generate_unit_square, refine_barycentric, refine_uniform

__version__ = "0.1.0"

__all__ = [
    "Mesh",
    "generate_unit_square",
    "refine_uniform",
    "refine_barycentric",
    "MaterialParams",
    "ManufacturedCase",
    "ErrorReport",
    "get_case",
    "compute_errors",
    "SchemeConfig",
    "SaddlePointSystem",
    "assemble_system",
    "assemble_stokes",
    "Solution",
    "solve_direct",
]
