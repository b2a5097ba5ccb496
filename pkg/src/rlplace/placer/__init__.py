from .control import (
    W_HI,
    W_LO,
    SpatialAction,
    action_bin_index,
    apply_spatial_scaling,
    heuristic_cof,
    lambda_init,
    objective_grad,
    update_lambda,
)
from .core import (
    STATS_COLUMNS,
    HeuristicController,
    Placer,
    PlacerConfig,
    PlacerState,
    init_placement,
    run_placement,
)
from .density import DensityGrid, DensityModel, density_cost_and_grad, overflow
from .nesterov import Nesterov
from .wirelength import wa_error_bound, wa_wirelength, wl_cost_and_grad

__all__ = [
    "W_HI", "W_LO", "SpatialAction", "action_bin_index", "apply_spatial_scaling",
    "heuristic_cof", "lambda_init", "objective_grad", "update_lambda", "STATS_COLUMNS",
    "HeuristicController", "Placer", "PlacerConfig", "PlacerState", "init_placement",
    "run_placement", "DensityGrid", "DensityModel", "density_cost_and_grad", "overflow",
    "Nesterov", "wa_error_bound", "wa_wirelength", "wl_cost_and_grad",
]
