"""stochflow: stochastic flows of jump SDEs, their Jacobian and
inverse-Jacobian flows, numerical flow inversion, and degenerate parabolic
SPDEs solved by stochastic characteristics, with estimators for weighted
Hölder norms, moment functionals, and strong-limit convergence."""

__version__ = "0.1.0"

from .coeffs import (
    AssumptionReport,
    CoefficientField,
    EMPTY_MEASURE,
    MarkMeasure,
    Regularity,
    build_field,
    check_assumptions,
    compensator_drift,
    eval_jump,
    evaluate,
    hat_drift,
)
from .flow import (
    FlowPath,
    flow_composition_check,
    integrate_flow,
    integrate_inverse_jacobian,
    integrate_jacobian,
)
from .grids import SpatialGrid
from .inverse import (
    InversePath,
    integrate_inverse_sde_stratonovich,
    inverse_gradient,
    invert_flow,
    invert_jump_map,
)
from .limits import ConvergenceReport, coefficient_distance, strong_limit_run
from .noise import NoiseRecord, TimeGrid, generate_noise, jump_adapted_grid
from .norms import (
    GridFunction,
    WeightedHolderReport,
    holder_norm,
    holder_seminorm,
    moment_estimate,
    sobolev_functional,
    weight,
    weighted_holder_report,
)
from .spde import (
    PartitionReport,
    SpdeSolution,
    ito_wentzell_check,
    partition_expansion,
    solve_spde_bar,
    solve_spde_characteristics,
)

__all__ = [
    "AssumptionReport",
    "CoefficientField",
    "ConvergenceReport",
    "EMPTY_MEASURE",
    "FlowPath",
    "GridFunction",
    "InversePath",
    "MarkMeasure",
    "NoiseRecord",
    "PartitionReport",
    "Regularity",
    "SpatialGrid",
    "SpdeSolution",
    "TimeGrid",
    "WeightedHolderReport",
    "build_field",
    "check_assumptions",
    "coefficient_distance",
    "compensator_drift",
    "eval_jump",
    "evaluate",
    "flow_composition_check",
    "generate_noise",
    "hat_drift",
    "holder_norm",
    "holder_seminorm",
    "integrate_flow",
    "integrate_inverse_jacobian",
    "integrate_inverse_sde_stratonovich",
    "integrate_jacobian",
    "inverse_gradient",
    "invert_flow",
    "invert_jump_map",
    "ito_wentzell_check",
    "jump_adapted_grid",
    "moment_estimate",
    "partition_expansion",
    "solve_spde_bar",
    "solve_spde_characteristics",
    "sobolev_functional",
    "strong_limit_run",
    "weight",
    "weighted_holder_report",
]
