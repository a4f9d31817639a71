"""optclear: two-stage electricity market with a centralized call-option market."""

from .clearing import (
    AllocationError,
    ClearingResult,
    SmoothingConfig,
    aggregate_report,
    allocate_exercise,
    clear_selfish,
    clear_so,
    clear_social,
    default_acceptability,
    smooth_indicator,
    smooth_plus,
    volatility_diagnostic,
)
from .copperplate import (
    CopperplateInstance,
    acceptability_boundary,
    analytic_dispatch,
    analytic_profits,
    bilateral_variance_delta,
    central_optimum,
    loss_region,
    stackelberg_classify,
)
from .market import (
    BIG,
    DispatchModel,
    ForwardResult,
    InfeasibleMarketError,
    MarketOutcome,
    Participant,
    RealtimeResult,
    certainty_surrogate,
    compute_profits,
    multi_period_aggregate,
    solve_forward,
    solve_market,
    solve_realtime,
)
from .network import Line, NetworkModel, injection_feasible, line_flows
from .options import (
    AcceptabilitySet,
    ExerciseAllocation,
    FTRPosition,
    TradeBounds,
    TradeTriple,
    buyer_profit,
    ftr_payoff,
    is_acceptable,
    merchandising_surplus,
    ms_samples,
    option_payoff,
    seller_profit,
)
from .scenario import (
    RandomSample,
    RiskPreference,
    ScenarioSet,
    common_uniform_grid,
    covariance,
    cvar,
    expectation,
    explicit_scenarios,
    make_uniform_grid,
    variance,
)

__version__ = "0.1.0"
