"""Fragile multi-CPR games: utilities, best responses, dynamics and equilibria."""

from .dynamics import DynamicsConfig, Schedule, Status, Trajectory, run, step
from .equilibrium import (
    CostGuardError,
    GneReport,
    GneSet,
    antichain_check,
    brute_force_gne,
    classify_types,
    count_bound_check,
    find_gne,
    verify_gne,
)
from .model import (
    AssumptionReport,
    ConstantReturn,
    CprSpec,
    ExpReturn,
    GameError,
    GameSpec,
    PlayerParams,
    PowerFailure,
    StrategyProfile,
    build_game,
    effective_rate,
    effective_rate_deriv,
    utility,
    validate_assumptions,
)
from .solver import (
    BestResponse,
    Kind,
    SolverConfig,
    SolverError,
    active_set,
    best_response,
    constraint_bounds,
    g_aux,
    h_aux,
    kkt_residual,
    omega,
    psi,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
