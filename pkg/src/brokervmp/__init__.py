"""Multi-objective VM placement for a cloud broker serving many providers."""
from .market import (
    InstanceTypeSpec,
    MarketError,
    MarketEvent,
    MarketState,
    ProviderOffer,
    TenantRequest,
    Violation,
    apply_event,
    apply_request_event,
    load_market,
    market_from_dict,
    read_market,
    validate_market,
)
from .moea import InfeasibleError, ParetoArchive, SolverParams, solve
from .placement import (
    ObjectiveBounds,
    ObjectiveVector,
    Placement,
    PlacementError,
    Preference,
    check_load_balancing,
    dominates,
    evaluate_objectives,
    preference,
    within_bounds,
)
from .scenario import (
    ExperimentReport,
    Scenario,
    ScenarioError,
    TimelineResult,
    compare_strategies,
    load_scenario,
    run_experiment,
    run_timeline,
)
from .selection import SelectionStrategy, select

__version__ = "0.1.0"

__all__ = [
    "ExperimentReport",
    "InfeasibleError",
    "InstanceTypeSpec",
    "MarketError",
    "MarketEvent",
    "MarketState",
    "ObjectiveBounds",
    "ObjectiveVector",
    "ParetoArchive",
    "Placement",
    "PlacementError",
    "Preference",
    "ProviderOffer",
    "Scenario",
    "ScenarioError",
    "SelectionStrategy",
    "SolverParams",
    "TenantRequest",
    "TimelineResult",
    "Violation",
    "apply_event",
    "apply_request_event",
    "check_load_balancing",
    "compare_strategies",
    "dominates",
    "evaluate_objectives",
    "load_market",
    "load_scenario",
    "market_from_dict",
    "preference",
    "read_market",
    "run_experiment",
    "run_timeline",
    "select",
    "solve",
    "validate_market",
    "within_bounds",
]
