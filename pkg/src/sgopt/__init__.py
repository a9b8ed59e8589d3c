"""Factor-graph optimal control for spring-coupled cart-pole chains.

The package solves finite-horizon LQ problems by encoding dynamics as hard
constraints inside a least-squares factor graph and eliminating variables one
at a time, which runs in time linear in horizon and chain length for
fill-reducing orderings.  A dense Riccati recursion provides the reference
baseline, and a damped outer loop extends the solver to nonlinear swing-up.
"""
from .cartpole import (
    CartPoleParams,
    CostWeights,
    ProblemConfig,
    actuator_layout,
    build_ocp_graph,
    dense_step_matrices,
    hanging_state,
    linearize_about,
    load_config,
    local_linear_dynamics,
    nonlinear_step,
    simulate,
    step_jacobian,
    trajectory_cost,
    unpack_solution,
    upright_state,
)
from .elimination import (
    BayesNet,
    EliminationStats,
    FeedbackGain,
    GaussianConditional,
    Ordering,
    StepStats,
    back_substitute,
    eliminate_graph,
    eliminate_variable,
    extract_feedback_gain,
    min_degree_ordering,
    solve,
    structured_ordering,
)
from .errors import (
    ConfigError,
    DimensionMismatch,
    InfeasibleConstraint,
    NoProgress,
    RankDeficient,
    SgoptError,
    SingularDiagonal,
    SingularInnovation,
    SingularKKT,
    UnconstrainedUnboundedVariable,
    UnknownVariable,
)
from .graph import (
    Factor,
    FactorGraph,
    Solution,
    VariableKey,
    VarKind,
    cart,
    control,
    pend,
)
from .linalg import (
    CONSTRAINT,
    UNIT_WEIGHT,
    EliminationResult,
    RowWeight,
    constrained_eliminate,
    qr_factorize,
    solve_triangular,
)
from .solvers import (
    DenseLTIModel,
    LinearSolveResult,
    LMIteration,
    LMResult,
    RiccatiResult,
    assemble_dense_lti,
    iterative_sgopt,
    kkt_solve_oracle,
    resolve_ordering,
    riccati_lqr,
    rollout_with_gains,
    solve_linear_ocp,
)

__all__ = [
    "CartPoleParams",
    "CostWeights",
    "ProblemConfig",
    "actuator_layout",
    "build_ocp_graph",
    "dense_step_matrices",
    "hanging_state",
    "linearize_about",
    "load_config",
    "local_linear_dynamics",
    "nonlinear_step",
    "simulate",
    "step_jacobian",
    "trajectory_cost",
    "unpack_solution",
    "upright_state",
    "BayesNet",
    "EliminationStats",
    "FeedbackGain",
    "GaussianConditional",
    "Ordering",
    "StepStats",
    "back_substitute",
    "eliminate_graph",
    "eliminate_variable",
    "extract_feedback_gain",
    "min_degree_ordering",
    "solve",
    "structured_ordering",
    "ConfigError",
    "DimensionMismatch",
    "InfeasibleConstraint",
    "NoProgress",
    "RankDeficient",
    "SgoptError",
    "SingularDiagonal",
    "SingularInnovation",
    "SingularKKT",
    "UnconstrainedUnboundedVariable",
    "UnknownVariable",
    "Factor",
    "FactorGraph",
    "Solution",
    "VariableKey",
    "VarKind",
    "cart",
    "control",
    "pend",
    "CONSTRAINT",
    "UNIT_WEIGHT",
    "EliminationResult",
    "RowWeight",
    "constrained_eliminate",
    "qr_factorize",
    "solve_triangular",
    "DenseLTIModel",
    "LinearSolveResult",
    "LMIteration",
    "LMResult",
    "RiccatiResult",
    "assemble_dense_lti",
    "iterative_sgopt",
    "kkt_solve_oracle",
    "resolve_ordering",
    "riccati_lqr",
    "rollout_with_gains",
    "solve_linear_ocp",
]
