"""Whittle-index scheduling for query-age-of-information uplinks.

Index computation via steady-state analysis of threshold policies,
dynamic-programming oracles for validation, a Monte-Carlo multi-node
simulator, and a relaxation lower bound.
"""

__version__ = "0.1.0"

from .errors import (
    CapacityError,
    ConfigError,
    ContractError,
    DomainError,
    NumericalError,
    QaoiError,
    StructuralError,
)
from .submdp import (
    ACTIVE,
    PASSIVE,
    Action,
    State,
    StateDistribution,
    SubMdpParams,
    ThresholdPolicy,
    immediate_cost,
    policy_action,
    transition_distribution,
)
from .steady_state import (
    BlockMatrices,
    PolicyAverages,
    build_blocks,
    policy_j_a,
    power_p1,
    power_p2,
    power_p3,
    stationary_distribution,
    stationary_oracle,
    zeta,
)
from .dp import (
    AverageRewardSolution,
    DiscountedPolicyEvaluation,
    JointAverageRewardSolution,
    ValueTable,
    discounted_policy_evaluation,
    discounted_value_iteration,
    extract_thresholds,
    oracle_whittle_index,
    relative_value_iteration,
    solve_joint_mdp,
)
from .whittle import (
    WhittleTable,
    aoi_whittle_table,
    compute_whittle_table,
    compute_whittle_table_error_free,
    discounted_index_table,
    next_threshold,
    whittle_table,
)
from .sim import (
    NetworkConfig,
    NetworkState,
    SimulationReport,
    greedy_rank,
    lower_bound,
    run_experiment,
    step,
    whittle_schedule,
)
