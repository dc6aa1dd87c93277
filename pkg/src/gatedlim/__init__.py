"""Waiting-time analysis and window sizing for gated-limited EPON polling.

The package splits into five parts:

- config: system description types and the unit conventions
- formulas: closed-form stationary moments of the symmetric loop
- chain: self-consistent report-count chain for finite window limits
- sizing: Chernoff-bound provisioning of the window limit
- sim: cycle-driven discrete-event simulator for arbitrary scenarios

plus a command line front end (gatedlim.cli).
"""

from .config import DEFAULT_EPSILON, ServiceTimeDist, SystemConfig
from .errors import (
    ConfigError,
    ConvergenceError,
    GatedLimError,
    ModelError,
    SaturationError,
)
from .formulas import (
    BusyPeriodDist,
    WaitingTime,
    busy_period_variance,
    mean_busy_period,
    mean_cycle,
    mean_inside_gate,
    mean_served_ahead,
    mean_waiting_time,
    mean_window_packets,
    served_in_window_prob,
    vacation_mean,
    vacation_second_moment,
)
from .chain import (
    AnalyticReport,
    ChainSolution,
    GeneratingFunctionParams,
    analytic_report,
    arrival_pgf,
    find_unit_disk_roots,
    solve_boundary_probs,
    solve_chain,
)
from .sizing import (
    QueueLengthModel,
    TwRecommendation,
    chernoff_bound,
    classify_region,
    optimal_z,
    optimize_window,
    queue_moments,
    recommend_window,
    regular_window_second_moment,
    stable_rate,
    window_approx,
    window_bounds,
)
from .sim import (
    SimReport,
    SimScenario,
    capture_effect_scenario,
    capture_scenario,
    empirical_busy_variance,
    run_simulation,
)

__version__ = "0.1.0"
