"""Numerical laboratory for generalized reflected BSDEs with two rcll barriers,
jump reflection and quadratic growth."""

__version__ = "0.1.0"

from .core import (AdmissibilityError, BrownianEnsemble, CoefficientSet, FiniteVariationPath, GridError,
                   RcllPath, Solution, TimeGrid, build_grid, simulate_ensemble)
from .reflection import jump_reflect, skorokhod_project
from .solver import (BackendSpec, SolveReport, dynkin_value_bruteforce, rescale_to_box, solve,
                     solve_concatenated, solve_general, solve_lipschitz_picard, solve_zero_generator)

__all__ = [
    "__version__",
    "AdmissibilityError",
    "BackendSpec",
    "BrownianEnsemble",
    "CoefficientSet",
    "FiniteVariationPath",
    "GridError",
    "RcllPath",
    "Solution",
    "SolveReport",
    "TimeGrid",
    "build_grid",
    "dynkin_value_bruteforce",
    "jump_reflect",
    "rescale_to_box",
    "simulate_ensemble",
    "skorokhod_project",
    "solve",
    "solve_concatenated",
    "solve_general",
    "solve_lipschitz_picard",
    "solve_zero_generator",
]
