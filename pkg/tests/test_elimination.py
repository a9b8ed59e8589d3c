"""Elimination engine tests: orderings, single-variable elimination, full
solves against the dense KKT oracle, and feedback-gain extraction."""
from types import SimpleNamespace

import numpy as np
import pytest

from sgopt.elimination import (
    BayesNet,
    GaussianConditional,
    Ordering,
    _WorkingGraph,
    back_substitute,
    eliminate_graph,
    eliminate_variable,
    extract_feedback_gain,
    min_degree_ordering,
    solve,
    structured_ordering,
)
from sgopt.errors import DimensionMismatch, UnconstrainedUnboundedVariable
from sgopt.graph import Factor, FactorGraph, VariableInfo, cart, control, pend
from sgopt.linalg import CONSTRAINT, UNIT_WEIGHT, RowWeight
from sgopt.solvers import kkt_solve_oracle


def add_var(g: FactorGraph, key, dim: int) -> None:
    g.add_variable(VariableInfo(key, dim))


def add_fac(g: FactorGraph, keys, blocks, rhs, weight) -> int:
    return g.add_factor(Factor(keys, blocks, rhs, weight))


# ---------------------------------------------------------------------------
# Orderings
# ---------------------------------------------------------------------------


def test_structured_ordering_single_body() -> None:
    cfg = SimpleNamespace(n=1, horizon=2, actuated=(0,))
    assert structured_ordering(cfg).keys == (
        cart(0, 1),
        pend(0, 1),
        control(0, 0),
        cart(0, 0),
        pend(0, 0),
    )


def test_structured_ordering_three_bodies() -> None:
    cfg = SimpleNamespace(n=3, horizon=2, actuated=(0,))
    assert structured_ordering(cfg).keys == (
        cart(0, 1),
        cart(1, 1),
        cart(2, 1),
        pend(0, 1),
        pend(1, 1),
        pend(2, 1),
        control(0, 0),
        cart(0, 0),
        cart(1, 0),
        cart(2, 0),
        pend(0, 0),
        pend(1, 0),
        pend(2, 0),
    )


def test_structured_ordering_horizon_one_has_no_controls() -> None:
    cfg = SimpleNamespace(n=2, horizon=1, actuated=(0, 1))
    keys = structured_ordering(cfg).keys
    assert keys == (cart(0, 0), cart(1, 0), pend(0, 0), pend(1, 0))


def _chain_graph(keys, coeff=0.9):
    """Hard chain y_{i+1} = coeff * y_i with soft unit priors everywhere and
    the head pinned to one."""
    g = FactorGraph()
    for k in keys:
        add_var(g, k, 1)
    add_fac(g, [keys[0]], [np.array([[1.0]])], np.array([1.0]), CONSTRAINT)
    for a, b in zip(keys, keys[1:]):
        add_fac(g, 
            [b, a],
            [np.array([[1.0]]), np.array([[-coeff]])],
            np.array([0.0]),
            CONSTRAINT,
        )
    for k in keys:
        add_fac(g, [k], [np.array([[1.0]])], np.array([0.0]), UNIT_WEIGHT)
    return g


def test_min_degree_path_order() -> None:
    # Path x - y - z with y in the middle.  Both ends start at degree one and
    # the tie-break prefers the later time, so x (t=2) goes first; that drops
    # the middle to degree one, where z (t=1) beats y (t=0).
    x, y, z = control(0, 2), control(0, 0), control(0, 1)
    g = FactorGraph()
    for k in (x, y, z):
        add_var(g, k, 1)
    one = np.array([[1.0]])
    add_fac(g, [x, y], [one, one], np.zeros(1), UNIT_WEIGHT)
    add_fac(g, [y, z], [one, one], np.zeros(1), UNIT_WEIGHT)
    assert min_degree_ordering(g).keys == (x, z, y)


def test_min_degree_star_eliminates_leaves_first() -> None:
    center = cart(9, 0)
    leaves = [control(j, 1) for j in range(3)]
    g = FactorGraph()
    add_var(g, center, 2)
    for leaf in leaves:
        add_var(g, leaf, 1)
        add_fac(g,
            [center, leaf], [np.eye(2), np.ones((2, 1))], np.zeros(2), UNIT_WEIGHT
        )
    order = min_degree_ordering(g).keys
    assert order[-1] == center
    assert sorted(order[:-1], key=lambda k: k.body) == list(order[:-1])


def test_min_degree_single_variable() -> None:
    g = FactorGraph()
    add_var(g, control(0, 0), 1)
    add_fac(g, [control(0, 0)], [np.array([[1.0]])], np.zeros(1), UNIT_WEIGHT)
    assert min_degree_ordering(g).keys == (control(0, 0),)


def test_min_degree_is_permutation_on_chain() -> None:
    keys = [control(0, t) for t in range(12)]
    g = _chain_graph(keys)
    order = min_degree_ordering(g).keys
    assert sorted(order, key=lambda k: k.order_rank()) == sorted(
        keys, key=lambda k: k.order_rank()
    )


# ---------------------------------------------------------------------------
# Single-variable elimination
# ---------------------------------------------------------------------------


def test_eliminate_substitution_pattern() -> None:
    # Soft prior on x plus hard x - A s = b: the conditional is the
    # constraint itself and the marginal pushes the prior onto s.
    x, s = cart(0, 1), cart(0, 0)
    a_blk = np.array([[0.5, 0.0], [0.25, 1.0]])
    b = np.array([1.0, 2.0])
    g = FactorGraph()
    add_var(g, x, 2)
    add_var(g, s, 2)
    add_fac(g, [x], [np.eye(2)], np.zeros(2), UNIT_WEIGHT)
    add_fac(g, [x, s], [np.eye(2), -a_blk], b, CONSTRAINT)
    working = _WorkingGraph(g)
    cond, marginals, stats = eliminate_variable(working, x)

    assert cond.frontal == x and cond.separator == (s,)
    assert cond.is_constrained
    np.testing.assert_allclose(cond.r, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(cond.s_blocks[0], -a_blk, atol=1e-12)
    np.testing.assert_allclose(cond.d, b, atol=1e-12)

    assert len(marginals) == 1
    (m,) = marginals
    assert m.keys == (s,) and not m.weight.is_constraint
    np.testing.assert_allclose(m.blocks[0], a_blk, atol=1e-12)
    np.testing.assert_allclose(m.rhs, -b, atol=1e-12)

    assert stats.p1 == 2 and stats.p2 == 1
    assert x not in working.adj
    live = [f for f in working.factors if f is not None]
    assert all(x not in f.keys for f in live)


def test_eliminate_isolated_variable_raises() -> None:
    g = FactorGraph()
    add_var(g, cart(0, 0), 2)
    with pytest.raises(UnconstrainedUnboundedVariable):
        eliminate_variable(_WorkingGraph(g), cart(0, 0))


def test_eliminate_zero_frontal_block_raises() -> None:
    x, y = control(0, 0), control(1, 0)
    g = FactorGraph()
    add_var(g, x, 1)
    add_var(g, y, 1)
    add_fac(g, 
        [x, y], [np.zeros((1, 1)), np.ones((1, 1))], np.zeros(1), UNIT_WEIGHT
    )
    with pytest.raises(UnconstrainedUnboundedVariable):
        eliminate_variable(_WorkingGraph(g), x)


def test_marginal_rows_stay_bounded() -> None:
    # Many parallel soft factors collapse to at most sep_dim + 1 marginal
    # rows, with the objective preserved.
    x, s = control(0, 1), control(0, 0)
    g = FactorGraph()
    add_var(g, x, 1)
    add_var(g, s, 1)
    rng = np.random.default_rng(7)
    for _ in range(10):
        add_fac(g, 
            [x, s],
            [rng.normal(size=(1, 1)), rng.normal(size=(1, 1))],
            rng.normal(size=1),
            UNIT_WEIGHT,
        )
    working = _WorkingGraph(g)
    _, marginals, _ = eliminate_variable(working, x)
    assert sum(m.rows for m in marginals) <= 2

    sol, _ = solve(g, [x, s])
    f, rhs, weights = g.assemble_dense([x, s])
    y = kkt_solve_oracle(f, rhs, weights)
    np.testing.assert_allclose(sol.values[x], y[:1], atol=1e-8)
    np.testing.assert_allclose(sol.values[s], y[1:], atol=1e-8)


# ---------------------------------------------------------------------------
# Full solves
# ---------------------------------------------------------------------------


def test_back_substitute_empty_net() -> None:
    sol = back_substitute(BayesNet(()))
    assert sol.values == {} and sol.total_cost == 0.0


def test_solve_single_prior() -> None:
    g = FactorGraph()
    add_var(g, cart(0, 0), 2)
    add_fac(g, 
        [cart(0, 0)], [np.eye(2)], np.array([3.0, -1.0]), RowWeight.finite(4.0)
    )
    sol, stats = solve(g, [cart(0, 0)])
    np.testing.assert_allclose(sol.values[cart(0, 0)], [3.0, -1.0], atol=1e-12)
    assert sol.total_cost == pytest.approx(0.0, abs=1e-20)
    assert stats.max_p1 == 1 and stats.max_p2 == 0


def test_solve_one_step_scalar_regulator() -> None:
    # min x1^2 + u^2  s.t.  x1 = 1 + u  ->  u = -1/2, x1 = 1/2, cost 1/2.
    u, x1 = control(0, 0), control(0, 1)
    g = FactorGraph()
    add_var(g, u, 1)
    add_var(g, x1, 1)
    one = np.array([[1.0]])
    add_fac(g, [x1, u], [one, -one], np.array([1.0]), CONSTRAINT)
    add_fac(g, [x1], [one], np.zeros(1), UNIT_WEIGHT)
    add_fac(g, [u], [one], np.zeros(1), UNIT_WEIGHT)
    sol, _ = solve(g, [x1, u])
    assert sol.values[u][0] == pytest.approx(-0.5, abs=1e-12)
    assert sol.values[x1][0] == pytest.approx(0.5, abs=1e-12)
    assert sol.total_cost == pytest.approx(0.5, abs=1e-12)


def test_eliminate_graph_rejects_bad_ordering() -> None:
    g = FactorGraph()
    add_var(g, control(0, 0), 1)
    add_var(g, control(1, 0), 1)
    one = np.array([[1.0]])
    add_fac(g, [control(0, 0), control(1, 0)], [one, one], np.zeros(1), UNIT_WEIGHT)
    with pytest.raises(DimensionMismatch):
        eliminate_graph(g, [control(0, 0)])
    with pytest.raises(DimensionMismatch):
        eliminate_graph(g, [control(0, 0), control(0, 0)])


def test_conditionals_cover_all_variables_in_order() -> None:
    keys = [control(0, t) for t in range(6)]
    g = _chain_graph(keys)
    order = min_degree_ordering(g)
    net, _ = eliminate_graph(g, order)
    frontals = [c.frontal for c in net.conditionals]
    assert frontals == list(order.keys)
    # Every separator variable is eliminated strictly later.
    position = {k: i for i, k in enumerate(frontals)}
    for i, c in enumerate(net.conditionals):
        assert all(position[s] > i for s in c.separator)


def test_chain_separator_bounded_and_matches_oracle() -> None:
    sizes = {}
    for t_len in (20, 80):
        keys = [control(0, t) for t in range(t_len)]
        g = _chain_graph(keys)
        sol, stats = solve(g, min_degree_ordering(g))
        sizes[t_len] = stats.max_p2
        cols = sorted(keys, key=lambda k: k.order_rank())
        f, rhs, weights = g.assemble_dense(cols)
        y = kkt_solve_oracle(f, rhs, weights)
        offs = g.column_offsets(cols)
        for k in keys:
            np.testing.assert_allclose(sol.values[k], y[offs[k] : offs[k] + 1], atol=1e-8)
    assert sizes[80] == sizes[20]


def _random_feasible_graph(rng):
    """Small mixed graph with a planted feasible point for the hard rows."""
    n_vars = int(rng.integers(3, 8))
    kinds = [cart, pend, control]
    keys = []
    for i in range(n_vars):
        make = kinds[int(rng.integers(0, 3))]
        keys.append(make(i, int(rng.integers(0, 3))))
    g = FactorGraph()
    dims = {}
    for k in keys:
        d = 1 if k.kind == 2 else 2
        add_var(g, k, d)
        dims[k] = d
    planted = {k: rng.normal(size=dims[k]) for k in keys}
    # Weak priors keep every variable supported and the problem bounded.
    for k in keys:
        add_fac(g, 
            [k], [np.eye(dims[k])], rng.normal(size=dims[k]), RowWeight.finite(0.5)
        )
    for _ in range(int(rng.integers(2, 6))):
        m = int(rng.integers(1, min(3, n_vars) + 1))
        sel = list(rng.choice(n_vars, size=m, replace=False))
        f_keys = [keys[i] for i in sel]
        rows = int(rng.integers(1, 3))
        blocks = [rng.normal(size=(rows, dims[k])) for k in f_keys]
        add_fac(g, 
            f_keys,
            blocks,
            rng.normal(size=rows),
            RowWeight.finite(float(rng.uniform(0.3, 2.0))),
        )
    n_hard = int(rng.integers(0, 3))
    for _ in range(n_hard):
        m = int(rng.integers(1, min(2, n_vars) + 1))
        sel = list(rng.choice(n_vars, size=m, replace=False))
        f_keys = [keys[i] for i in sel]
        blocks = [rng.normal(size=(1, dims[k])) for k in f_keys]
        rhs = sum(b @ planted[k] for b, k in zip(blocks, f_keys))
        add_fac(g, f_keys, blocks, rhs, CONSTRAINT)
    return g, keys


@pytest.mark.parametrize("seed", range(30))
def test_random_graphs_match_kkt_oracle(seed: int) -> None:
    rng = np.random.default_rng(1000 + seed)
    g, keys = _random_feasible_graph(rng)
    cols = sorted(keys, key=lambda k: k.order_rank())
    f, rhs, weights = g.assemble_dense(cols)
    y = kkt_solve_oracle(f, rhs, weights)
    offs = g.column_offsets(cols)
    sol, _ = solve(g, min_degree_ordering(g))
    scale = max(1.0, float(np.max(np.abs(y))))
    for k in keys:
        d = g.variables[k].dim
        np.testing.assert_allclose(
            sol.values[k], y[offs[k] : offs[k] + d], atol=1e-8 * scale
        )
    _, violation = g.residual_cost(sol.values)
    assert violation <= 1e-8 * scale


@pytest.mark.parametrize("seed", range(8))
def test_orderings_agree_on_random_graphs(seed: int) -> None:
    rng = np.random.default_rng(4000 + seed)
    g, keys = _random_feasible_graph(rng)
    by_rank = sorted(keys, key=lambda k: k.order_rank())
    sol_a, _ = solve(g, by_rank)
    sol_b, _ = solve(g, min_degree_ordering(g))
    for k in keys:
        np.testing.assert_allclose(sol_a.values[k], sol_b.values[k], atol=1e-8)
    assert sol_a.total_cost == pytest.approx(sol_b.total_cost, rel=1e-9, abs=1e-12)


def test_solution_cost_matches_graph_residual() -> None:
    rng = np.random.default_rng(99)
    g, keys = _random_feasible_graph(rng)
    sol, _ = solve(g, min_degree_ordering(g))
    cost, _ = g.residual_cost(sol.values)
    assert sol.total_cost == pytest.approx(cost, rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------------------
# Feedback gains
# ---------------------------------------------------------------------------


def test_extract_feedback_gain_example() -> None:
    cond = GaussianConditional(
        frontal=control(0, 0),
        separator=(control(0, 1),),
        r=np.array([[2.0]]),
        s_blocks=(np.array([[1.0]]),),
        d=np.array([0.0]),
        is_constrained=False,
    )
    fg = extract_feedback_gain(cond)
    np.testing.assert_allclose(fg.gain, [[-0.5]], atol=1e-12)
    np.testing.assert_allclose(fg.offset, [0.0], atol=1e-12)
    np.testing.assert_allclose(fg.apply([np.array([2.0])]), [-1.0], atol=1e-12)


def test_extract_feedback_gain_substitution_identity() -> None:
    # Substituting the policy back into the conditional must satisfy it.
    rng = np.random.default_rng(5)
    r = np.triu(rng.normal(size=(1, 1))) + np.eye(1) * 2.0
    s1 = rng.normal(size=(1, 2))
    s2 = rng.normal(size=(1, 1))
    d = rng.normal(size=1)
    cond = GaussianConditional(
        frontal=control(0, 0),
        separator=(cart(0, 1), control(0, 1)),
        r=r,
        s_blocks=(s1, s2),
        d=d,
        is_constrained=False,
    )
    fg = extract_feedback_gain(cond)
    sep_vals = [rng.normal(size=2), rng.normal(size=1)]
    u = fg.apply(sep_vals)
    residual = r @ u + s1 @ sep_vals[0] + s2 @ sep_vals[1] - d
    np.testing.assert_allclose(residual, 0.0, atol=1e-12)


def test_extract_feedback_gain_rejects_non_control() -> None:
    cond = GaussianConditional(
        frontal=cart(0, 0),
        separator=(),
        r=np.eye(2),
        s_blocks=(),
        d=np.zeros(2),
        is_constrained=False,
    )
    with pytest.raises(ValueError):
        extract_feedback_gain(cond)


def test_extract_feedback_gain_rejects_constrained() -> None:
    cond = GaussianConditional(
        frontal=control(0, 0),
        separator=(),
        r=np.eye(1),
        s_blocks=(),
        d=np.zeros(1),
        is_constrained=True,
    )
    with pytest.raises(ValueError):
        extract_feedback_gain(cond)


def test_regulator_gain_from_elimination() -> None:
    # One-step regulator, eliminating u first so its conditional keeps x1 in
    # the separator: min x1^2 + u^2 s.t. x1 - u = 1 gives u = (x1 - 1) after
    # eliminating the constraint, so the policy has gain 1/2 on the combined
    # soft system.
    u, x1 = control(0, 0), control(0, 1)
    g = FactorGraph()
    add_var(g, u, 1)
    add_var(g, x1, 1)
    one = np.array([[1.0]])
    add_fac(g, [x1, u], [one, -one], np.array([1.0]), CONSTRAINT)
    add_fac(g, [x1], [one], np.zeros(1), UNIT_WEIGHT)
    add_fac(g, [u], [one], np.zeros(1), UNIT_WEIGHT)
    net, _ = eliminate_graph(g, [u, x1])
    cond_u = net.conditionals[0]
    assert cond_u.frontal == u and cond_u.is_constrained
    sol = back_substitute(net, g)
    assert sol.values[u][0] == pytest.approx(-0.5, abs=1e-12)
