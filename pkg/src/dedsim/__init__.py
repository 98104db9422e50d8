"""Distributed dynamic dispatch with storage: problem data, exact-penalty
reformulation, saddle-point network dynamics, per-agent message passing, and
centralized reference solvers.
"""

from .dynamics import (
    EpsilonUnverifiedWarning,
    GainParameters,
    NetworkState,
    StiffnessWarning,
    TrajectoryRecord,
    box_pattern_state,
    integrate,
    lyapunov_value,
    mismatch,
    mismatch_closed_form,
    step,
    uniform_state,
    validate_gains,
    vector_field,
)
from .graph import (
    Digraph,
    LaplacianData,
    build_digraph,
    is_strongly_connected,
    is_weight_balanced,
    laplacian,
)
from .penalty import (
    PenaltySubgradient,
    PenaltyTerms,
    epsilon_upper_bound,
    penalized_cost,
    penalty_terms,
    slater_candidate,
    subgradient,
)
from .problem import (
    DedsInstance,
    FeasibilityReport,
    KktResidual,
    Schedule,
    check_feasibility,
    evaluate_cost,
    kkt_residual,
    load_placement,
    total_load,
)
from .oracle import (
    OracleResult,
    VerificationReport,
    brute_force_tiny,
    solve_centralized,
    verify_against_dynamics,
)
from .scenarios import builtin_config, builtin_names

__version__ = "0.1.0"

__all__ = [
    "DedsInstance",
    "Digraph",
    "EpsilonUnverifiedWarning",
    "FeasibilityReport",
    "GainParameters",
    "KktResidual",
    "LaplacianData",
    "NetworkState",
    "OracleResult",
    "PenaltySubgradient",
    "PenaltyTerms",
    "Schedule",
    "StiffnessWarning",
    "TrajectoryRecord",
    "VerificationReport",
    "box_pattern_state",
    "brute_force_tiny",
    "build_digraph",
    "builtin_config",
    "builtin_names",
    "check_feasibility",
    "epsilon_upper_bound",
    "evaluate_cost",
    "integrate",
    "is_strongly_connected",
    "is_weight_balanced",
    "kkt_residual",
    "laplacian",
    "load_placement",
    "lyapunov_value",
    "mismatch",
    "mismatch_closed_form",
    "penalized_cost",
    "penalty_terms",
    "slater_candidate",
    "solve_centralized",
    "step",
    "subgradient",
    "total_load",
    "uniform_state",
    "validate_gains",
    "vector_field",
    "verify_against_dynamics",
    "__version__",
]
