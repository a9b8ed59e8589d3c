"""Reference solvers: dense KKT oracle, Riccati baseline, damped outer loop.

The dense routes exist to check the graph solver, so they deliberately share
no code with the elimination kernels: the KKT oracle goes through the normal
equations and the Riccati baseline through the classic backward recursion on
full matrices.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .cartpole import (
    ProblemConfig,
    build_ocp_graph,
    dense_cost_matrices,
    dense_step_matrices,
    linearize_about,
    simulate,
    trajectory_cost,
    unpack_solution,
)
from .elimination import (
    BayesNet,
    EliminationStats,
    Ordering,
    back_substitute,
    eliminate_graph,
    extract_feedback_gain,
    min_degree_ordering,
    structured_ordering,
)
from .errors import InfeasibleConstraint, NoProgress, SingularInnovation, SingularKKT
from .graph import VarKind, cart, pend
from .linalg import FloatArray, RowWeight


def kkt_solve_oracle(
    f: FloatArray, g: FloatArray, weights: Sequence[RowWeight]
) -> FloatArray:
    """Solve min |F y - g|^2_W subject to the hard rows, via the dense KKT system.

    Finite rows enter the weighted normal equations; hard rows become
    Lagrange-multiplier constraints.  This is the slow reference route used to
    validate elimination, so it shares no code with the elimination kernels.

    Raises SingularKKT when the stationarity system is singular and
    InfeasibleConstraint when the returned point violates the hard rows.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    m, n = f.shape
    if g.shape != (m,):
        raise ValueError(f"rhs shape {g.shape} does not match {m} rows")
    if len(weights) != m:
        raise ValueError(f"expected {m} weights, got {len(weights)}")

    soft = [i for i, w in enumerate(weights) if not w.is_constraint]
    hard = [i for i, w in enumerate(weights) if w.is_constraint]
    w_diag = np.array([weights[i].weight for i in soft], dtype=float)
    f_soft = f[soft]
    f_hard = f[hard]
    g_hard = g[hard]

    n_hard = len(hard)
    kkt = np.zeros((n + n_hard, n + n_hard))
    kkt[:n, :n] = f_soft.T @ (w_diag[:, None] * f_soft)
    if n_hard:
        kkt[:n, n:] = f_hard.T
        kkt[n:, :n] = f_hard
    rhs = np.concatenate([f_soft.T @ (w_diag * g[soft]), g_hard])
    try:
        y = np.linalg.solve(kkt, rhs)[:n]
    except np.linalg.LinAlgError as exc:
        raise SingularKKT(str(exc)) from exc
    if n_hard:
        violation = float(np.max(np.abs(f_hard @ y - g_hard), initial=0.0))
        scale = max(1.0, float(np.max(np.abs(f_hard))), float(np.max(np.abs(g_hard), initial=0.0)))
        if violation > 1e-6 * scale:
            raise InfeasibleConstraint(
                f"KKT solution violates hard rows by {violation:.3e}"
            )
    return y


# ---------------------------------------------------------------------------
# Dense baseline
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DenseLTIModel:
    """Dense time-invariant form of one problem: transition ``a``, input
    ``b``, stage costs ``q``/``r``, terminal cost ``qf`` and initial state."""

    a: FloatArray
    b: FloatArray
    q: FloatArray
    r: FloatArray
    qf: FloatArray
    x0: FloatArray
    horizon: int


def assemble_dense_lti(config: ProblemConfig) -> DenseLTIModel:
    """Dense matrices of the upright-linearized problem a graph encodes."""
    a_mat, b_mat = dense_step_matrices(config)
    q, r, qf = dense_cost_matrices(config)
    return DenseLTIModel(
        a=a_mat, b=b_mat, q=q, r=r, qf=qf,
        x0=np.array(config.x0), horizon=config.horizon,
    )


@dataclass
class RiccatiResult:
    gains: List[FloatArray]
    states: FloatArray
    controls: FloatArray
    cost: float


def riccati_lqr(model: DenseLTIModel) -> RiccatiResult:
    """Finite-horizon regulator by backward Riccati recursion plus rollout.

    The value recursion starts from the terminal cost; each backward step
    solves the innovation system for that step's gain.  The forward rollout
    applies ``u_t = -K_t x_t`` and accumulates the same objective the graph
    encodes, so the two routes must agree on both trajectory and cost.
    """
    a_mat, b_mat = model.a, model.b
    t_len = model.horizon
    n_dim = a_mat.shape[0]
    m_dim = b_mat.shape[1]
    value = np.array(model.qf)
    gains: List[FloatArray] = []
    for _ in range(t_len - 1):
        innovation = model.r + b_mat.T @ value @ b_mat
        try:
            gain = np.linalg.solve(innovation, b_mat.T @ value @ a_mat)
        except np.linalg.LinAlgError as exc:
            raise SingularInnovation(str(exc)) from exc
        value = model.q + a_mat.T @ value @ (a_mat - b_mat @ gain)
        gains.append(gain)
    gains.reverse()

    states = np.zeros((t_len, n_dim))
    controls = np.zeros((max(t_len - 1, 0), m_dim))
    states[0] = model.x0
    cost = 0.0
    for t in range(t_len - 1):
        controls[t] = -gains[t] @ states[t]
        cost += float(states[t] @ model.q @ states[t] + controls[t] @ model.r @ controls[t])
        states[t + 1] = a_mat @ states[t] + b_mat @ controls[t]
    cost += float(states[t_len - 1] @ model.qf @ states[t_len - 1])
    return RiccatiResult(gains=gains, states=states, controls=controls, cost=cost)


# ---------------------------------------------------------------------------
# Graph solves and feedback rollout
# ---------------------------------------------------------------------------


def resolve_ordering(
    graph_or_config, ordering: str | Ordering
) -> Ordering:
    """Map an ordering name to a concrete ordering.  ``structured`` needs the
    problem config; ``mindegree`` needs the graph."""
    if isinstance(ordering, Ordering):
        return ordering
    if ordering == "structured":
        return structured_ordering(graph_or_config)
    if ordering == "mindegree":
        return min_degree_ordering(graph_or_config)
    raise ValueError(f"unknown ordering {ordering!r}")


@dataclass
class LinearSolveResult:
    states: FloatArray
    controls: FloatArray
    cost: float
    stats: EliminationStats
    net: BayesNet
    max_violation: float


def solve_linear_ocp(
    config: ProblemConfig, ordering: str | Ordering = "structured"
) -> LinearSolveResult:
    """Build the upright-linearized graph, eliminate it and unpack."""
    graph = build_ocp_graph(config)
    if isinstance(ordering, str) and ordering == "structured":
        order = structured_ordering(config)
    else:
        order = resolve_ordering(graph, ordering)
    net, stats = eliminate_graph(graph, order)
    solution = back_substitute(net, graph)
    states, controls = unpack_solution(solution, config)
    _, violation = graph.residual_cost(solution.values)
    return LinearSolveResult(
        states=states,
        controls=controls,
        cost=solution.total_cost,
        stats=stats,
        net=net,
        max_violation=violation,
    )


def rollout_with_gains(
    net: BayesNet, config: ProblemConfig
) -> Tuple[FloatArray, FloatArray]:
    """Closed-loop rollout using only the control conditionals as policies.

    Control policies of one step are applied in reverse elimination order,
    since an earlier-eliminated control may condition on a later-eliminated
    control of the same step.  Requires an ordering whose control separators
    reach no further back than the control's own step (the structured
    ordering guarantees this); otherwise a policy input is unknown at
    rollout time and this raises ``KeyError``.
    """
    a_mat, b_mat = dense_step_matrices(config)
    by_step: dict[int, list[Tuple[int, object]]] = {}
    for pos, cond in enumerate(net.conditionals):
        if cond.frontal.kind == VarKind.CONTROL:
            by_step.setdefault(cond.frontal.time, []).append((pos, cond))
    t_len = config.horizon
    states = np.zeros((t_len, 4 * config.n))
    controls = np.zeros((max(t_len - 1, 0), config.m))
    states[0] = config.x0
    values: dict = {}
    slot = {b: a for a, b in enumerate(config.actuated)}
    for t in range(t_len - 1):
        for j in range(config.n):
            values[cart(j, t)] = states[t, 4 * j : 4 * j + 2]
            values[pend(j, t)] = states[t, 4 * j + 2 : 4 * j + 4]
        for _, cond in sorted(by_step.get(t, []), reverse=True, key=lambda e: e[0]):
            policy = extract_feedback_gain(cond)
            u = policy.apply([values[k] for k in cond.separator])
            values[cond.frontal] = u
            controls[t, slot[cond.frontal.body]] = u[0]
        states[t + 1] = a_mat @ states[t] + b_mat @ controls[t]
    return states, controls


# ---------------------------------------------------------------------------
# Iterative solver for the nonlinear problem
# ---------------------------------------------------------------------------


@dataclass
class LMIteration:
    iteration: int
    damping: float
    cost: float
    accepted: bool


@dataclass
class LMResult:
    states: FloatArray
    controls: FloatArray
    cost: float
    iterations: int
    converged: bool
    history: List[LMIteration]


def iterative_sgopt(
    config: ProblemConfig,
    *,
    initial_controls: FloatArray | None = None,
    true_dynamics=None,
    ordering: str | Ordering = "structured",
    damping_init: float = 1e-3,
    damping_factor: float = 10.0,
    damping_cap: float = 1e8,
    tol: float = 1e-6,
    max_iterations: int = 200,
) -> LMResult:
    """Damped iterative solve of the nonlinear problem.

    Each iteration linearizes the true dynamics along the current rollout,
    solves the deviation graph with a damping pull toward the reference, and
    scores the candidate controls by rolling out the true dynamics again.
    Better candidates are accepted and relax the damping; worse ones are
    rejected and raise it.  References are always rollouts, so transition
    defects vanish and only the cost rows carry the reference.

    ``initial_controls`` seeds the first rollout (default all zero).  Passing
    block dynamics as ``true_dynamics`` swaps the linear block model in as
    the plant, in which case every linearization is exact.

    Raises ``NoProgress`` once damping exceeds the cap without an accepted
    step.  Converges on a relative cost improvement below ``tol``, or on a
    rejected candidate indistinguishable from the current cost.
    """
    t_len, n, m = config.horizon, config.n, config.m
    if initial_controls is None:
        ref_controls = np.zeros((max(t_len - 1, 0), m))
    else:
        ref_controls = np.asarray(initial_controls, dtype=float).reshape(
            max(t_len - 1, 0), m
        )
    ref_states = simulate(config.x0, ref_controls, config, dynamics=true_dynamics)
    cost = trajectory_cost(ref_states, ref_controls, config)
    history: List[LMIteration] = []
    lam = damping_init
    order: Ordering | None = ordering if isinstance(ordering, Ordering) else None
    zero_prior = np.zeros(4 * n)
    converged = False
    iteration = 0
    while iteration < max_iterations:
        iteration += 1
        if true_dynamics is None:
            blocks = linearize_about(ref_states, ref_controls, config)
        else:
            blocks = true_dynamics
        graph = build_ocp_graph(
            config,
            dynamics=blocks,
            cost_reference=(ref_states, ref_controls),
            damping=lam,
            prior_state=zero_prior,
        )
        if order is None:
            order = (
                structured_ordering(config)
                if ordering == "structured"
                else resolve_ordering(graph, ordering)
            )
        net, _ = eliminate_graph(graph, order)
        deviation = back_substitute(net)
        _, delta_u = unpack_solution(deviation, config)
        cand_controls = ref_controls + delta_u
        # Diverging candidate rollouts overflow; score them as rejectable
        # rather than warn.
        with np.errstate(over="ignore", invalid="ignore"):
            cand_states = simulate(
                config.x0, cand_controls, config, dynamics=true_dynamics
            )
            cand_cost = trajectory_cost(cand_states, cand_controls, config)
        if not np.isfinite(cand_cost):
            cand_cost = np.inf
        if cand_cost < cost:
            history.append(LMIteration(iteration, lam, cand_cost, True))
            improvement = (cost - cand_cost) / max(cost, 1.0)
            ref_states, ref_controls, cost = cand_states, cand_controls, cand_cost
            lam /= damping_factor
            if improvement <= tol:
                converged = True
                break
        else:
            history.append(LMIteration(iteration, lam, cand_cost, False))
            if abs(cand_cost - cost) <= 1e-12 * max(cost, 1.0):
                converged = True
                break
            lam *= damping_factor
            if lam > damping_cap:
                err = NoProgress(
                    f"damping exceeded {damping_cap:.0e} after {iteration} iterations"
                )
                err.history = history
                raise err
    return LMResult(
        states=ref_states,
        controls=ref_controls,
        cost=cost,
        iterations=iteration,
        converged=converged,
        history=history,
    )
