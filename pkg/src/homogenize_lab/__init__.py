"""Numerical homogenization of optimal control problems in stationary random media."""

__version__ = "0.1.0"

from .cell import (CellProblemSpec, EffectiveLagrangianTable, F_ab, build_table, cell_cost,  # noqa: E402
                   estimate_effective_lagrangian, point_to_point_cost, subadditive_series)
from .env import EnvironmentSpec, create_environment, evaluate_potential, shift_environment  # noqa: E402
from .errors import (CFLError, ConfigError, DomainError, ExtrapolationError,  # noqa: E402
                     HomogenizationError, InfeasibleError, RadiusTooSmallError, ThresholdError)
from .model import (DynamicsSpec, LagrangianSpec, ModelSpec, PowerCost,  # noqa: E402
                    check_assumptions, truncation_radius)
from .solve import (GridSpec, approximate_by_step_control, repair_control, solve_fine,  # noqa: E402
                    solve_homogenized, solve_macro)
from .xform import build_hamiltonian_table, effective_hamiltonian, hamiltonian, solve_hjb  # noqa: E402

__all__ = [
    "CFLError", "CellProblemSpec", "ConfigError", "DomainError", "DynamicsSpec",
    "EffectiveLagrangianTable", "EnvironmentSpec", "ExtrapolationError", "F_ab", "GridSpec",
    "HomogenizationError", "InfeasibleError", "LagrangianSpec", "ModelSpec", "PowerCost",
    "RadiusTooSmallError", "ThresholdError", "approximate_by_step_control", "build_hamiltonian_table",
    "build_table", "cell_cost", "check_assumptions", "create_environment", "effective_hamiltonian",
    "estimate_effective_lagrangian", "evaluate_potential", "hamiltonian", "point_to_point_cost",
    "repair_control", "shift_environment", "solve_fine", "solve_hjb", "solve_homogenized",
    "solve_macro", "subadditive_series", "truncation_radius",
]
