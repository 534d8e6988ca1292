"""Decentralized primal-dual proximal gradient methods for constraint-coupled problems."""

from npga.graph import (
    Graph,
    MixingMatrix,
    connected_erdos_renyi,
    erdos_renyi,
    mixing_matrix_laplacian,
    validate_mixing,
)
from npga.problem import (
    AgentSpec,
    Custom,
    IndicatorBall,
    IndicatorPoint,
    Problem,
    SmoothQuadratic,
    build_elastic_net_problem,
    build_logistic_problem,
    build_ridge_problem,
    partition_features,
    synthesize_dataset,
)
from npga.schemes import SCHEMES, NetworkScheme, build_scheme, check_assumptions
from npga.solver import (
    AssumptionError,
    SolverState,
    StepSizes,
    Trace,
    consensus_error,
    init_state,
    run,
    step_four_sequence,
    step_rewritten,
)

__all__ = [
    "AgentSpec", "AssumptionError", "Custom", "Graph", "IndicatorBall", "IndicatorPoint",
    "MixingMatrix", "NetworkScheme", "Problem", "SCHEMES", "SmoothQuadratic", "SolverState",
    "StepSizes", "Trace", "build_elastic_net_problem", "build_logistic_problem",
    "build_ridge_problem", "build_scheme", "check_assumptions", "connected_erdos_renyi",
    "consensus_error", "erdos_renyi", "init_state", "mixing_matrix_laplacian",
    "partition_features", "run", "step_four_sequence", "step_rewritten", "synthesize_dataset",
    "validate_mixing",
]

__version__ = "0.1.0"
