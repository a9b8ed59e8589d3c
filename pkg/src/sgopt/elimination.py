"""Variable elimination on constrained factor graphs.

Eliminating a variable gathers its adjacent factors into a local subproblem,
runs the constrained row elimination, and leaves a marginal factor on the
separator.  A full pass produces a triangular net of conditionals that is
solved by reverse back-substitution.  With a fill-reducing ordering the
separator stays bounded on chain problems, so the sweep runs in time linear
in both horizon and chain length.
"""
from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Set, Tuple

import numpy as np

from .errors import (
    DimensionMismatch,
    InfeasibleConstraint,
    UnconstrainedUnboundedVariable,
    UnknownVariable,
)
from .graph import Factor, FactorGraph, Solution, VariableKey, VarKind, cart, control, pend
from .linalg import (
    CONSTRAINT,
    PIVOT_RTOL,
    UNIT_WEIGHT,
    FloatArray,
    constrained_eliminate,
    echelonize_rows,
    solve_triangular,
    triangularize_rows,
)


@dataclass(frozen=True)
class Ordering:
    """Elimination order: a permutation of the graph's variable keys."""

    keys: Tuple[VariableKey, ...]

    def __len__(self) -> int:
        return len(self.keys)

    def __iter__(self):
        return iter(self.keys)


@dataclass
class GaussianConditional:
    """Triangular conditional ``R x_f + sum_k S_k x_sep_k = d`` for one variable.

    ``is_constrained`` marks conditionals containing hard rows; their frontal
    value is fixed exactly by the separator instead of being a least-squares
    mean.
    """

    frontal: VariableKey
    separator: Tuple[VariableKey, ...]
    r: FloatArray
    s_blocks: Tuple[FloatArray, ...]
    d: FloatArray
    is_constrained: bool


@dataclass
class BayesNet:
    """Conditionals in elimination order; solved back to front."""

    conditionals: Tuple[GaussianConditional, ...]


@dataclass
class StepStats:
    """Per-elimination bookkeeping: factor count p1, separator size p2, and the
    operation-count surrogate p1 * n * (p2 * n)^2 for frontal dim n."""

    frontal: VariableKey
    p1: int
    p2: int
    flops_estimate: float
    constant_cost: float = 0.0


@dataclass
class EliminationStats:
    per_step: List[StepStats] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def max_p1(self) -> int:
        return max((s.p1 for s in self.per_step), default=0)

    @property
    def max_p2(self) -> int:
        return max((s.p2 for s in self.per_step), default=0)

    @property
    def total_flops_estimate(self) -> float:
        return sum(s.flops_estimate for s in self.per_step)


@dataclass
class FeedbackGain:
    """Affine policy of one control conditional: ``u = gain @ sep + offset``.

    ``gain`` equals minus the inverse of the conditional's triangular block
    times its separator blocks, so substituting the policy back into the
    conditional reproduces its mean exactly.
    """

    control_key: VariableKey
    separator: Tuple[VariableKey, ...]
    gain: FloatArray
    offset: FloatArray

    def apply(self, sep_values: Sequence[FloatArray]) -> FloatArray:
        if len(sep_values) != len(self.separator):
            raise DimensionMismatch(
                f"expected {len(self.separator)} separator values, got {len(sep_values)}"
            )
        stacked = (
            np.concatenate([np.atleast_1d(v) for v in sep_values])
            if sep_values
            else np.zeros(0)
        )
        return self.gain @ stacked + self.offset


class _WorkingGraph:
    """Mutable copy of a factor graph that elimination consumes."""

    __slots__ = ("dims", "factors", "adj")

    def __init__(self, graph: FactorGraph) -> None:
        self.dims: Dict[VariableKey, int] = {
            k: info.dim for k, info in graph.variables.items()
        }
        self.factors: List[Factor | None] = list(graph.factors)
        self.adj: Dict[VariableKey, Set[int]] = {
            k: set(graph.factor_ids_of(k)) for k in graph.variables
        }


# ---------------------------------------------------------------------------
# Orderings
# ---------------------------------------------------------------------------


def structured_ordering(config) -> Ordering:
    """Backward-in-time sweep: for each step, carts then pendulums by body
    index, then the controls applied at the previous step.

    ``config`` needs attributes ``n``, ``horizon`` and ``actuated`` (ascending
    cart indices carrying an actuator).
    """
    keys: List[VariableKey] = []
    for t in range(config.horizon - 1, -1, -1):
        keys.extend(cart(j, t) for j in range(config.n))
        keys.extend(pend(j, t) for j in range(config.n))
        if t >= 1:
            keys.extend(control(b, t - 1) for b in config.actuated)
    return Ordering(tuple(keys))


def min_degree_ordering(graph: FactorGraph) -> Ordering:
    """Greedy minimum-degree ordering on the variable adjacency graph.

    Eliminating a variable connects its remaining neighbors into a clique,
    simulating the fill produced by the real elimination.  Ties follow the
    canonical variable order, which prefers later time steps.  The direction
    matters: breaking ties toward early steps makes long-horizon eliminations
    fold open-loop dynamics forward, and on an unstable plant that amplifies
    rounding exponentially in the horizon.  Later-first ties keep the sweep
    aligned with the backward cost-to-go recursion, which stays accurate.
    """
    adj: Dict[VariableKey, Set[VariableKey]] = {k: set() for k in graph.variables}
    for f in graph.factors:
        ks = f.keys
        for i, a in enumerate(ks):
            for b in ks[i + 1 :]:
                adj[a].add(b)
                adj[b].add(a)
    rank = {k: k.order_rank() for k in adj}
    deg = {k: len(adj[k]) for k in adj}
    heap = [(deg[k], rank[k], k) for k in adj]
    heapq.heapify(heap)
    alive = set(adj)
    order: List[VariableKey] = []
    while heap:
        d, _, k = heapq.heappop(heap)
        if k not in alive or d != deg[k]:
            continue
        order.append(k)
        alive.remove(k)
        nbrs = list(adj[k])
        for n in nbrs:
            adj[n].discard(k)
        for i, a in enumerate(nbrs):
            adj_a = adj[a]
            for b in nbrs[i + 1 :]:
                if b not in adj_a:
                    adj_a.add(b)
                    adj[b].add(a)
        for n in nbrs:
            deg[n] = len(adj[n])
            heapq.heappush(heap, (deg[n], rank[n], n))
        adj[k] = set()
    return Ordering(tuple(order))


# ---------------------------------------------------------------------------
# Elimination
# ---------------------------------------------------------------------------


def eliminate_variable(
    working: _WorkingGraph, key: VariableKey
) -> Tuple[GaussianConditional, List[Factor], StepStats]:
    """Eliminate one variable from the working graph, in place.

    Gathers the adjacent factors into a local ``[frontal | separator | rhs]``
    matrix, eliminates the frontal columns, removes the consumed factors, and
    inserts the marginal factor(s) on the separator.  Hard and soft marginal
    rows are returned as separate factors since a factor carries one weight
    kind.  Marginal row sets larger than the separator dimension are
    compressed first; this bounds factor growth along long chains without
    changing the objective.
    """
    fids = working.adj.get(key)
    if fids is None:
        raise UnknownVariable(str(key))
    if not fids:
        raise UnconstrainedUnboundedVariable(f"{key} has no adjacent factors")
    fid_list = sorted(fids)
    dims = working.dims
    fdim = dims[key]

    sep_set: Set[VariableKey] = set()
    rows = 0
    gathered: List[Factor] = []
    for fid in fid_list:
        f = working.factors[fid]
        gathered.append(f)
        rows += f.rows
        sep_set.update(f.keys)
    sep_set.discard(key)
    sep_keys = sorted(sep_set, key=VariableKey.order_rank)

    offsets: Dict[VariableKey, int] = {}
    pos = fdim
    for k in sep_keys:
        offsets[k] = pos
        pos += dims[k]
    sep_dim = pos - fdim
    local = np.zeros((rows, pos + 1))
    weights: List = []
    r0 = 0
    frontal_support = False
    for f in gathered:
        r = f.rows
        for k, b in zip(f.keys, f.blocks):
            if k == key:
                local[r0 : r0 + r, 0:fdim] = b
                if not frontal_support and np.any(b):
                    frontal_support = True
            else:
                off = offsets[k]
                local[r0 : r0 + r, off : off + b.shape[1]] = b
        local[r0 : r0 + r, -1] = f.rhs
        weights.extend([f.weight] * r)
        r0 += r
    if not frontal_support:
        raise UnconstrainedUnboundedVariable(
            f"no adjacent factor row spans {key}"
        )

    res = constrained_eliminate(local, weights, fdim)

    conditional = GaussianConditional(
        frontal=key,
        separator=tuple(sep_keys),
        r=res.conditional_rows[:, :fdim].copy(),
        s_blocks=tuple(
            res.conditional_rows[:, offsets[k] : offsets[k] + dims[k]].copy()
            for k in sep_keys
        ),
        d=res.conditional_rows[:, -1].copy(),
        is_constrained=any(w.is_constraint for w in res.conditional_weights),
    )

    hard_rows = [
        row for row, w in zip(res.marginal_rows, res.marginal_weights) if w.is_constraint
    ]
    soft_rows = [
        row
        for row, w in zip(res.marginal_rows, res.marginal_weights)
        if not w.is_constraint
    ]
    scale = max(1.0, float(np.max(np.abs(local), initial=0.0)))
    constant_cost = 0.0
    marginals: List[Factor] = []
    for row_set, wkind in ((hard_rows, CONSTRAINT), (soft_rows, UNIT_WEIGHT)):
        if not row_set:
            continue
        mat = np.vstack(row_set)
        if mat.shape[0] > sep_dim + 1:
            if wkind.is_constraint:
                mat = echelonize_rows(mat, feasibility_scale=scale)
            else:
                mat = triangularize_rows(mat)
        if mat.shape[0] == 0:
            continue
        keep_keys: List[VariableKey] = []
        keep_blocks: List[FloatArray] = []
        for k in sep_keys:
            lo = offsets[k] - fdim
            blk = mat[:, lo : lo + dims[k]]
            if np.max(np.abs(blk), initial=0.0) > PIVOT_RTOL * scale:
                keep_keys.append(k)
                keep_blocks.append(blk.copy())
        rhs = mat[:, -1].copy()
        if keep_keys:
            marginals.append(Factor(keep_keys, keep_blocks, rhs, wkind))
        elif wkind.is_constraint:
            bad = float(np.max(np.abs(rhs), initial=0.0))
            if bad > PIVOT_RTOL * scale * 1e3:
                raise InfeasibleConstraint(
                    f"eliminating {key} left the hard residual 0 = {bad:.3e}"
                )
        else:
            constant_cost += float(rhs @ rhs)

    # Mutate the working graph: consume factors, drop the variable, insert
    # the marginals.
    for fid in fid_list:
        f = working.factors[fid]
        for k in f.keys:
            if k != key:
                working.adj[k].discard(fid)
        working.factors[fid] = None
    del working.adj[key]
    del working.dims[key]
    for m in marginals:
        fid = len(working.factors)
        working.factors.append(m)
        for k in m.keys:
            working.adj[k].add(fid)

    stats = StepStats(
        frontal=key,
        p1=len(fid_list),
        p2=len(sep_keys),
        flops_estimate=float(len(fid_list) * fdim * (len(sep_keys) * fdim) ** 2),
        constant_cost=constant_cost,
    )
    return conditional, marginals, stats


def eliminate_graph(
    graph: FactorGraph, ordering: Ordering | Sequence[VariableKey]
) -> Tuple[BayesNet, EliminationStats]:
    """Run a full elimination pass in the given order.

    The ordering must be a permutation of the graph's variables; the graph
    itself is not modified.
    """
    keys = list(ordering.keys if isinstance(ordering, Ordering) else ordering)
    if len(keys) != len(graph.variables) or set(keys) != set(graph.variables):
        raise DimensionMismatch("ordering is not a permutation of the graph variables")
    working = _WorkingGraph(graph)
    conditionals: List[GaussianConditional] = []
    stats = EliminationStats()
    t0 = time.perf_counter()
    for key in keys:
        cond, _, step = eliminate_variable(working, key)
        conditionals.append(cond)
        stats.per_step.append(step)
    stats.wall_time = time.perf_counter() - t0
    return BayesNet(tuple(conditionals)), stats


def back_substitute(net: BayesNet, graph: FactorGraph | None = None) -> Solution:
    """Solve the conditional net back to front.

    When the originating graph is supplied, the solution cost is recomputed
    from its factors rather than accumulated during elimination.
    """
    values: Dict[VariableKey, FloatArray] = {}
    for cond in reversed(net.conditionals):
        rhs = cond.d.copy()
        for k, s in zip(cond.separator, cond.s_blocks):
            rhs -= s @ values[k]
        values[cond.frontal] = solve_triangular(cond.r, rhs)
    cost = graph.residual_cost(values)[0] if graph is not None else 0.0
    return Solution(values=values, total_cost=cost)


def solve(
    graph: FactorGraph, ordering: Ordering | Sequence[VariableKey]
) -> Tuple[Solution, EliminationStats]:
    """Eliminate and back-substitute: the complete linear solve."""
    net, stats = eliminate_graph(graph, ordering)
    solution = back_substitute(net, graph)
    return solution, stats


def extract_feedback_gain(cond: GaussianConditional) -> FeedbackGain:
    """Turn a control conditional into an affine state-feedback policy.

    The policy is ``u = gain @ sep + offset`` with ``gain = -R^{-1} S`` and
    ``offset = R^{-1} d``; substituting it into the conditional recovers the
    conditional's mean.
    """
    if cond.frontal.kind != VarKind.CONTROL:
        raise ValueError(f"{cond.frontal} is not a control variable")
    if cond.is_constrained:
        raise ValueError(f"conditional for {cond.frontal} contains hard rows")
    f = cond.r.shape[0]
    sep_dim = sum(b.shape[1] for b in cond.s_blocks)
    s_stack = (
        np.hstack(cond.s_blocks) if cond.s_blocks else np.zeros((f, 0))
    )
    gain = np.zeros((f, sep_dim))
    for j in range(sep_dim):
        gain[:, j] = -solve_triangular(cond.r, s_stack[:, j])
    offset = solve_triangular(cond.r, cond.d)
    return FeedbackGain(
        control_key=cond.frontal,
        separator=cond.separator,
        gain=gain,
        offset=offset,
    )
