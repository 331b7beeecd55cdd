"""Time-dependent radiative transport in isotropic media on the unit square.

A retarded-time volume integral formulation is discretized with hat functions
in time and piecewise-constant collocation in space, then marched either by
direct summation or by a Chebyshev-interpolation treecode.
"""

from .analysis import (ErrorReport, convergence_study, directional_solution, modulus,
                       relative_l2, restrict_to_coarse)
from .discretization import (CollocationGrid, TimeGrid, build_time_grid, build_uniform_grid,
                             grid_from_points, ray_exit_distance)
from .kernel import CellWeightTable, cell_weight, f_aux, geometric_cell_integral, hat
from .medium import (AssumptionError, MediumModel, SourceModel, attenuation, benchmark_source,
                     source_eval, validate_assumptions)
from .solver import ContractionError, SolutionHistory, active_lags, solve
from .treecode import build_tree, chebyshev_nodes, interp_weight, solve_treecode, upward_pass

__version__ = "0.1.0"

__all__ = [
    "AssumptionError", "CellWeightTable", "CollocationGrid", "ContractionError", "ErrorReport",
    "MediumModel", "SolutionHistory", "SourceModel", "TimeGrid", "active_lags", "attenuation",
    "benchmark_source", "build_time_grid", "build_tree", "build_uniform_grid", "cell_weight",
    "chebyshev_nodes", "convergence_study", "directional_solution", "f_aux",
    "geometric_cell_integral", "grid_from_points", "hat", "interp_weight", "modulus",
    "ray_exit_distance", "relative_l2", "restrict_to_coarse", "solve", "solve_treecode",
    "source_eval", "upward_pass", "validate_assumptions",
]
