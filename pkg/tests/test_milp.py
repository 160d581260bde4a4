"""Branch-and-bound tests against an exhaustive enumeration oracle.

Every random MIP keeps few enough binaries that trying all 2^k
assignments (each completed by the plain LP solver) is cheap, so the
expected optimum is always computed independently.
"""

import itertools

import numpy as np
import pytest

from gridveil.lp import INF, LinearProgram, LpError, solve_lp
from gridveil.milp import (
    MilpConfig,
    MixedIntegerProgram,
    MilpSolution,
    solve_milp,
)


def _enumerate_oracle(mip):
    """Best objective over all binary assignments, or None if empty."""
    lp = mip.lp
    sign = 1.0 if lp.sense == "min" else -1.0
    best = None
    for bits in itertools.product((0.0, 1.0), repeat=len(mip.binaries)):
        sub = LinearProgram(sense=lp.sense)
        for j in range(lp.n_vars):
            sub.add_variable(lb=lp.lb[j], ub=lp.ub[j], cost=lp.cost[j])
        for j, b in zip(mip.binaries, bits):
            sub.lb[j] = b
            sub.ub[j] = b
        for row, sense, rhs in zip(lp.rows, lp.row_sense, lp.rhs):
            sub.add_constraint(dict(row), sense, rhs)
        sol = solve_lp(sub)
        if sol.optimal:
            v = sol.objective * sign
            if best is None or v < best:
                best = v
    return None if best is None else best * sign


def _knapsack():
    # max 10a + 13b + 7c, 4a + 6b + 3c <= 9: of the 8 assignments the
    # feasible best is b+c (weight 9, value 20)
    lp = LinearProgram(sense="max")
    for _, cost in (("a", 10.0), ("b", 13.0), ("c", 7.0)):
        lp.add_variable(lb=0.0, ub=1.0, cost=cost)
    lp.add_constraint({0: 4.0, 1: 6.0, 2: 3.0}, "<=", 9.0)
    mip = MixedIntegerProgram(lp)
    for j in range(3):
        mip.mark_binary(j)
    return mip


def test_knapsack_matches_enumeration():
    mip = _knapsack()
    sol = solve_milp(mip)
    assert sol.optimal
    assert sol.objective == pytest.approx(20.0, abs=1e-9)
    assert sol.x[:3] == pytest.approx([0.0, 1.0, 1.0], abs=1e-9)
    assert _enumerate_oracle(mip) == pytest.approx(20.0, abs=1e-9)
    assert sol.gap <= 1e-6
    assert sol.incumbent_log[-1][1] == pytest.approx(20.0, abs=1e-9)


def test_integral_relaxation_solves_at_root():
    # totally unimodular rows keep the relaxation integral
    lp = LinearProgram(sense="max")
    lp.add_variable(lb=0.0, ub=1.0, cost=2.0)
    lp.add_variable(lb=0.0, ub=1.0, cost=1.0)
    lp.add_constraint({0: 1.0, 1: 1.0}, "<=", 1.0)
    mip = MixedIntegerProgram(lp)
    mip.mark_binary(0)
    mip.mark_binary(1)
    sol = solve_milp(mip)
    assert sol.optimal
    assert sol.nodes == 1
    assert sol.objective == pytest.approx(2.0, abs=1e-9)


def test_binary_feasibility_with_no_solution():
    lp = LinearProgram()
    lp.add_variable(lb=0.0, ub=1.0)
    lp.add_variable(lb=0.0, ub=1.0)
    lp.add_constraint({0: 1.0, 1: 1.0}, ">=", 1.6)
    lp.add_constraint({0: 1.0, 1: 1.0}, "<=", 1.4)
    mip = MixedIntegerProgram(lp)
    mip.mark_binary(0)
    mip.mark_binary(1)
    sol = solve_milp(mip)
    assert sol.status == "infeasible"


def test_binary_bound_validation():
    lp = LinearProgram()
    lp.add_variable(lb=0.0, ub=2.0)
    mip = MixedIntegerProgram(lp)
    with pytest.raises(LpError):
        mip.mark_binary(0)
    with pytest.raises(LpError):
        mip.mark_binary(5)


def _random_mip(rng, n_bin, n_cont):
    lp = LinearProgram(sense="min" if rng.random() < 0.5 else "max")
    for _ in range(n_bin):
        lp.add_variable(lb=0.0, ub=1.0, cost=float(np.round(rng.uniform(-5, 5), 2)))
    for _ in range(n_cont):
        lp.add_variable(
            lb=0.0,
            ub=float(np.round(rng.uniform(0.5, 3), 2)),
            cost=float(np.round(rng.uniform(-3, 3), 2)),
        )
    n = n_bin + n_cont
    for _ in range(int(rng.integers(2, 7))):
        size = int(rng.integers(2, min(n, 5) + 1))
        idx = rng.choice(n, size=size, replace=False)
        coeffs = {int(j): float(np.round(rng.uniform(-3, 3), 2)) for j in idx}
        u = rng.random()
        if u < 0.5:
            lp.add_constraint(coeffs, "<=", float(np.round(rng.uniform(0, 4), 2)))
        elif u < 0.9:
            lp.add_constraint(coeffs, ">=", float(np.round(rng.uniform(-4, 1), 2)))
        else:
            lp.add_constraint(coeffs, "=", float(np.round(rng.uniform(-1, 1), 2)))
    mip = MixedIntegerProgram(lp)
    for j in range(n_bin):
        mip.mark_binary(j)
    return mip


@pytest.mark.parametrize("seed", range(30))
def test_random_mips_match_exhaustive_oracle(seed):
    rng = np.random.default_rng(5000 + seed)
    mip = _random_mip(rng, n_bin=int(rng.integers(2, 7)), n_cont=int(rng.integers(0, 4)))
    expect = _enumerate_oracle(mip)
    sol = solve_milp(mip)
    if expect is None:
        assert sol.status in ("infeasible", "unbounded")
        return
    assert sol.optimal, sol.status
    assert sol.objective == pytest.approx(expect, abs=1e-6)
    # incumbent satisfies integrality and every row
    for j in mip.binaries:
        assert abs(sol.x[j] - round(sol.x[j])) <= 1e-6
    for row, sense, rhs in zip(mip.lp.rows, mip.lp.row_sense, mip.lp.rhs):
        lhs = sum(v * sol.x[j] for j, v in row)
        if sense == "<=":
            assert lhs <= rhs + 1e-6
        elif sense == ">=":
            assert lhs >= rhs - 1e-6
        else:
            assert lhs == pytest.approx(rhs, abs=1e-6)


def test_wider_binary_count_against_oracle():
    rng = np.random.default_rng(99)
    mip = _random_mip(rng, n_bin=10, n_cont=2)
    expect = _enumerate_oracle(mip)
    sol = solve_milp(mip)
    if expect is None:
        assert sol.status in ("infeasible", "unbounded")
    else:
        assert sol.optimal
        assert sol.objective == pytest.approx(expect, abs=1e-6)


def test_determinism_same_incumbent_sequence():
    rng1 = np.random.default_rng(5003)
    mip1 = _random_mip(rng1, 6, 2)
    rng2 = np.random.default_rng(5003)
    mip2 = _random_mip(rng2, 6, 2)
    a = solve_milp(mip1)
    b = solve_milp(mip2)
    assert a.status == b.status
    assert a.incumbent_log == b.incumbent_log
    assert a.nodes == b.nodes
    if a.optimal:
        assert a.x == pytest.approx(b.x, abs=0.0)


def test_node_limit_reports_partial_result():
    # hard equality knapsack makes the tree wide enough to truncate
    rng = np.random.default_rng(11)
    lp = LinearProgram(sense="max")
    w = rng.integers(3, 30, size=14)
    for wi in w:
        lp.add_variable(lb=0.0, ub=1.0, cost=float(wi) + 0.1)
    lp.add_constraint(
        {j: float(w[j]) for j in range(14)}, "<=", float(w.sum() // 2)
    )
    mip = MixedIntegerProgram(lp)
    for j in range(14):
        mip.mark_binary(j)
    full = solve_milp(mip)
    assert full.optimal
    capped = solve_milp(mip, MilpConfig(node_limit=3))
    assert capped.status in ("node_limit", "optimal")
    if capped.status == "node_limit":
        assert capped.gap > 0.0 or np.isinf(capped.gap)
        if capped.incumbent_log:
            assert capped.objective <= full.objective + 1e-9


def test_initial_solution_prunes_and_logs():
    mip = _knapsack()
    warm = [np.array([0.0, 1.0, 1.0])]  # hand-checked optimum
    sol = solve_milp(mip, MilpConfig(initial_solutions=warm))
    assert sol.optimal
    assert sol.objective == pytest.approx(20.0, abs=1e-9)
    assert sol.incumbent_log[0] == (0, pytest.approx(20.0, abs=1e-9))
    # infeasible and non-integral candidates are quietly rejected
    junk = [np.array([1.0, 1.0, 1.0]), np.array([0.5, 0.0, 0.0]), np.zeros(2)]
    sol2 = solve_milp(mip, MilpConfig(initial_solutions=junk))
    assert sol2.optimal
    assert sol2.objective == pytest.approx(20.0, abs=1e-9)


def test_priority_branching_still_finds_optimum():
    mip = _knapsack()
    cfg = MilpConfig(branching="priority", priority=[2, 1, 0])
    sol = solve_milp(mip, cfg)
    assert sol.optimal
    assert sol.objective == pytest.approx(20.0, abs=1e-9)


def test_duals_come_from_fixed_binary_face():
    # binaries fixed at the optimum leave a pure LP; the reported duals
    # must certify that face (signs + strong duality), though the face
    # is fully degenerate here so the dual vector itself is not unique
    mip = _knapsack()
    sol = solve_milp(mip)
    lp = mip.lp
    fixed = LinearProgram(sense=lp.sense)
    for j in range(lp.n_vars):
        v = round(float(sol.x[j]))
        fixed.add_variable(lb=v, ub=v, cost=lp.cost[j])
    for row, sense, rhs in zip(lp.rows, lp.row_sense, lp.rhs):
        fixed.add_constraint(dict(row), sense, rhs)
    ref = solve_lp(fixed)
    assert ref.optimal
    assert ref.objective == pytest.approx(sol.objective, abs=1e-9)
    for duals, rc, x in ((sol.duals, sol.reduced_costs, sol.x), (ref.duals, ref.reduced_costs, ref.x)):
        assert duals[0] >= -1e-9  # <= row in a max problem
        dual_obj = float(duals @ np.asarray(lp.rhs) + rc @ x)
        assert dual_obj == pytest.approx(sol.objective, abs=1e-6)


def test_incumbent_pool_collects_ties():
    # two symmetric optima: pick exactly one of two identical items
    lp = LinearProgram(sense="max")
    lp.add_variable(lb=0.0, ub=1.0, cost=1.0)
    lp.add_variable(lb=0.0, ub=1.0, cost=1.0)
    lp.add_constraint({0: 1.0, 1: 1.0}, "<=", 1.0)
    mip = MixedIntegerProgram(lp)
    mip.mark_binary(0)
    mip.mark_binary(1)
    seeds = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    sol = solve_milp(mip, MilpConfig(initial_solutions=seeds))
    assert sol.optimal
    assert sol.objective == pytest.approx(1.0, abs=1e-9)
    pats = {tuple(int(round(x[j])) for j in (0, 1)) for x in sol.incumbent_pool}
    assert (1, 0) in pats and (0, 1) in pats


def test_tighten_bounds_detects_forced_binaries():
    # 3a + 3b >= 5 with a,b binary forces both to 1 before any search
    lp = LinearProgram()
    lp.add_variable(lb=0.0, ub=1.0, cost=1.0)
    lp.add_variable(lb=0.0, ub=1.0, cost=1.0)
    lp.add_constraint({0: 3.0, 1: 3.0}, ">=", 5.0)
    mip = MixedIntegerProgram(lp)
    mip.mark_binary(0)
    mip.mark_binary(1)
    sol = solve_milp(mip)
    assert sol.optimal
    assert sol.nodes == 1
    assert sol.x == pytest.approx([1.0, 1.0], abs=1e-9)
