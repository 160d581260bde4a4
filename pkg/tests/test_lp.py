"""Simplex engine tests against independent oracles.

Small contract cases are hand-checked. Random instances are compared
to scipy's HiGHS frontend and certified through KKT conditions, so
the expected values never come from the engine under test.
"""

import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from gridveil.lp import (
    INF,
    LinearProgram,
    LpError,
    SimplexEngine,
    Standardized,
    solve_lp,
    write_lp_text,
)


def _to_scipy(lp):
    """Convert to scipy.linprog arrays (min sense)."""
    n = lp.n_vars
    sign = 1.0 if lp.sense == "min" else -1.0
    c = np.asarray(lp.cost) * sign
    a_ub, b_ub, a_eq, b_eq = [], [], [], []
    for row, sense, rhs in zip(lp.rows, lp.row_sense, lp.rhs):
        dense = np.zeros(n)
        for j, v in row:
            dense[j] += v
        if sense == "<=":
            a_ub.append(dense)
            b_ub.append(rhs)
        elif sense == ">=":
            a_ub.append(-dense)
            b_ub.append(-rhs)
        else:
            a_eq.append(dense)
            b_eq.append(rhs)
    bounds = [
        (None if lp.lb[j] == -INF else lp.lb[j], None if lp.ub[j] == INF else lp.ub[j])
        for j in range(n)
    ]
    return dict(
        c=c,
        A_ub=np.array(a_ub) if a_ub else None,
        b_ub=np.array(b_ub) if b_ub else None,
        A_eq=np.array(a_eq) if a_eq else None,
        b_eq=np.array(b_eq) if b_eq else None,
        bounds=bounds,
        method="highs",
    )


def _dense_rows(lp):
    a = np.zeros((lp.n_rows, lp.n_vars))
    for i, row in enumerate(lp.rows):
        for j, v in row:
            a[i, j] += v
    return a


def _certify_kkt(lp, sol, tol=1e-6):
    """Primal/dual feasibility, stationarity, complementary slackness."""
    a = _dense_rows(lp)
    x = sol.x
    ax = a @ x
    rhs = np.asarray(lp.rhs)
    lb = np.asarray(lp.lb)
    ub = np.asarray(lp.ub)
    for i, s in enumerate(lp.row_sense):
        if s == "<=":
            assert ax[i] <= rhs[i] + tol
        elif s == ">=":
            assert ax[i] >= rhs[i] - tol
        else:
            assert abs(ax[i] - rhs[i]) <= tol
    assert np.all(x >= np.where(np.isfinite(lb), lb, -INF) - tol)
    assert np.all(x <= np.where(np.isfinite(ub), ub, INF) + tol)

    y = sol.duals
    d = sol.reduced_costs
    # duals are shadow prices d(obj)/d(rhs) in the model's own sense
    flip = 1.0 if lp.sense == "min" else -1.0
    for i, s in enumerate(lp.row_sense):
        if s == "<=":
            assert flip * y[i] <= tol
        elif s == ">=":
            assert flip * y[i] >= -tol
        slack = rhs[i] - ax[i]
        assert abs(y[i] * slack) <= tol * (1.0 + abs(rhs[i]))
    # stationarity: c == A^T y + d, exactly how _finish builds d
    resid = np.asarray(lp.cost) - a.T @ y - d
    assert np.max(np.abs(resid)) <= 1e-7 * (1.0 + np.max(np.abs(lp.cost)))
    for j in range(lp.n_vars):
        at_lb = np.isfinite(lb[j]) and x[j] <= lb[j] + tol
        at_ub = np.isfinite(ub[j]) and x[j] >= ub[j] - tol
        if at_lb and not at_ub:
            assert flip * d[j] >= -tol
        elif at_ub and not at_lb:
            assert flip * d[j] <= tol
        elif not at_lb and not at_ub:
            assert abs(d[j]) <= tol


def _vertex_oracle(lp):
    """Brute-force best vertex of a 2-variable LP with finite optimum."""
    a = _dense_rows(lp)
    rhs = np.asarray(lp.rhs, dtype=float)
    lines = [(a[i], rhs[i]) for i in range(lp.n_rows)]
    for j in range(2):
        e = np.zeros(2)
        e[j] = 1.0
        if np.isfinite(lp.lb[j]):
            lines.append((e.copy(), lp.lb[j]))
        if np.isfinite(lp.ub[j]):
            lines.append((e.copy(), lp.ub[j]))
    best = None
    sign = 1.0 if lp.sense == "min" else -1.0
    for (a1, b1), (a2, b2) in itertools.combinations(lines, 2):
        mat = np.array([a1, a2])
        if abs(np.linalg.det(mat)) < 1e-12:
            continue
        pt = np.linalg.solve(mat, np.array([b1, b2]))
        ok = True
        for i, s in enumerate(lp.row_sense):
            val = a[i] @ pt
            if s == "<=" and val > rhs[i] + 1e-9:
                ok = False
            elif s == ">=" and val < rhs[i] - 1e-9:
                ok = False
            elif s == "=" and abs(val - rhs[i]) > 1e-9:
                ok = False
        for j in range(2):
            if pt[j] < lp.lb[j] - 1e-9 or pt[j] > lp.ub[j] + 1e-9:
                ok = False
        if not ok:
            continue
        val = sign * (lp.cost[0] * pt[0] + lp.cost[1] * pt[1])
        if best is None or val < best:
            best = val
    assert best is not None, "oracle found no feasible vertex"
    return sign * best


# ------------------------------------------------------------- contract


def test_min_with_lower_bound_row():
    lp = LinearProgram()
    lp.add_variable(lb=-INF, ub=INF, cost=1.0)
    lp.add_constraint({0: 1.0}, ">=", 3.0)
    sol = solve_lp(lp)
    assert sol.optimal
    assert sol.x[0] == pytest.approx(3.0, abs=1e-9)
    assert sol.objective == pytest.approx(3.0, abs=1e-9)
    assert sol.duals[0] == pytest.approx(1.0, abs=1e-9)


def test_infeasible_pair():
    lp = LinearProgram()
    lp.add_variable(lb=-INF, ub=INF)
    lp.add_constraint({0: 1.0}, "<=", 0.0)
    lp.add_constraint({0: 1.0}, ">=", 1.0)
    assert solve_lp(lp).status == "infeasible"


def test_unbounded_ray():
    lp = LinearProgram(sense="max")
    lp.add_variable(lb=0.0, ub=INF, cost=1.0)
    sol = solve_lp(lp)
    assert sol.status == "unbounded"
    assert sol.objective == INF


def test_free_variable_floor():
    lp = LinearProgram()
    lp.add_variable(lb=-INF, ub=INF, cost=1.0)
    lp.add_constraint({0: 1.0}, ">=", -5.0)
    sol = solve_lp(lp)
    assert sol.optimal
    assert sol.x[0] == pytest.approx(-5.0, abs=1e-9)


def test_equality_only_system_with_duals():
    # x1 + x2 = 4, x1 - x2 = 2 pins (3, 1); duals solve c = A^T y
    lp = LinearProgram()
    lp.add_variable(lb=-INF, ub=INF, cost=1.0)
    lp.add_variable(lb=-INF, ub=INF, cost=0.0)
    lp.add_constraint({0: 1.0, 1: 1.0}, "=", 4.0)
    lp.add_constraint({0: 1.0, 1: -1.0}, "=", 2.0)
    sol = solve_lp(lp)
    assert sol.optimal
    assert sol.x == pytest.approx([3.0, 1.0], abs=1e-9)
    assert sol.duals == pytest.approx([0.5, 0.5], abs=1e-9)


def test_bound_flip_optimum_at_upper_bounds():
    lp = LinearProgram(sense="max")
    lp.add_variable(lb=0.0, ub=2.0, cost=1.0)
    lp.add_variable(lb=0.0, ub=3.0, cost=1.0)
    lp.add_constraint({0: 1.0, 1: 1.0}, "<=", 10.0)
    sol = solve_lp(lp)
    assert sol.optimal
    assert sol.x == pytest.approx([2.0, 3.0], abs=1e-9)
    assert sol.objective == pytest.approx(5.0, abs=1e-9)
    assert sol.duals[0] == pytest.approx(0.0, abs=1e-9)
    # loosening either cap is worth its coefficient
    assert sol.reduced_costs == pytest.approx([1.0, 1.0], abs=1e-9)


def test_beale_degenerate_cycle_guard():
    # classic cycling instance for largest-coefficient pricing;
    # optimum -1/20 at (1/25, 0, 1, 0), second row tight
    lp = LinearProgram()
    lp.add_variable(cost=-0.75)
    lp.add_variable(cost=150.0)
    lp.add_variable(cost=-0.02)
    lp.add_variable(cost=6.0)
    lp.add_constraint({0: 0.25, 1: -60.0, 2: -1.0 / 25.0, 3: 9.0}, "<=", 0.0)
    lp.add_constraint({0: 0.5, 1: -90.0, 2: -1.0 / 50.0, 3: 3.0}, "<=", 0.0)
    lp.add_constraint({2: 1.0}, "<=", 1.0)
    sol = solve_lp(lp)
    assert sol.optimal
    assert sol.objective == pytest.approx(-0.05, abs=1e-9)
    assert sol.x == pytest.approx([0.04, 0.0, 1.0, 0.0], abs=1e-8)


def test_validation_errors():
    lp = LinearProgram()
    with pytest.raises(LpError):
        lp.add_variable(lb=2.0, ub=1.0)
    lp.add_variable()
    with pytest.raises(LpError):
        lp.add_constraint({0: 1.0}, "<>", 1.0)
    with pytest.raises(LpError):
        lp.add_constraint({0: np.inf}, "<=", 1.0)
    with pytest.raises(LpError):
        lp.add_constraint({3: 1.0}, "<=", 1.0)
    with pytest.raises(LpError):
        LinearProgram(sense="maximize")


def test_lp_text_dump(tmp_path):
    lp = LinearProgram(sense="max")
    lp.add_variable(lb=0.0, ub=10.0, cost=2.0, name="a")
    lp.add_variable(lb=0.0, ub=INF, cost=0.0, name="b")
    lp.add_constraint({0: 2.0, 1: 1.0}, "<=", 4.0, name="cap")
    path = tmp_path / "model.txt"
    write_lp_text(lp, str(path))
    text = path.read_text()
    assert "obj max 2*a" in text
    assert "row cap: 2*a + 1*b <= 4" in text
    assert "bnd a [0, 10]" in text
    assert "bnd b [0, inf]" in text


# ------------------------------------------------------------ vertex oracle


def test_two_var_vertices_against_enumeration():
    rng = np.random.default_rng(7)
    solved = 0
    for _ in range(60):
        lp = LinearProgram(sense="min" if rng.random() < 0.5 else "max")
        for _ in range(2):
            lp.add_variable(
                lb=float(rng.uniform(-3, 0)),
                ub=float(rng.uniform(0.5, 4)),
                cost=float(np.round(rng.uniform(-5, 5), 3)),
            )
        for _ in range(rng.integers(1, 5)):
            coeffs = {
                0: float(np.round(rng.uniform(-2, 2), 3)),
                1: float(np.round(rng.uniform(-2, 2), 3)),
            }
            sense = "<=" if rng.random() < 0.7 else ">="
            lp.add_constraint(coeffs, sense, float(np.round(rng.uniform(-1, 3), 3)))
        sol = solve_lp(lp)
        if sol.status == "infeasible":
            kw = _to_scipy(lp)
            assert linprog(**kw).status == 2
            continue
        assert sol.optimal  # finite bounds exclude unbounded rays
        expect = _vertex_oracle(lp)
        assert sol.objective == pytest.approx(expect, abs=1e-7)
        _certify_kkt(lp, sol)
        solved += 1
    assert solved >= 30


# ------------------------------------------------------------ random suite


def _random_lp(rng, n=None, m=None):
    n = n or int(rng.integers(2, 9))
    m = m or int(rng.integers(1, 11))
    lp = LinearProgram(sense="min" if rng.random() < 0.5 else "max")
    for _ in range(n):
        kind = rng.random()
        if kind < 0.55:
            lb = float(np.round(rng.uniform(-2, 0), 3))
            ub = float(np.round(rng.uniform(0.5, 3), 3))
        elif kind < 0.8:
            lb, ub = 0.0, INF
        else:
            lb, ub = -INF, INF
        lp.add_variable(lb=lb, ub=ub, cost=float(np.round(rng.uniform(-4, 4), 3)))
    anchor = np.array(
        [
            rng.uniform(lp.lb[j], lp.ub[j])
            if np.isfinite(lp.lb[j]) and np.isfinite(lp.ub[j])
            else rng.uniform(0, 1)
            for j in range(n)
        ]
    )
    for _ in range(m):
        idx = rng.choice(n, size=min(n, int(rng.integers(1, 4))), replace=False)
        coeffs = {int(j): float(np.round(rng.uniform(-2, 2), 3)) for j in idx}
        lhs = sum(v * anchor[j] for j, v in coeffs.items())
        u = rng.random()
        if u < 0.45:
            lp.add_constraint(coeffs, "<=", float(lhs + rng.uniform(0, 2)))
        elif u < 0.8:
            lp.add_constraint(coeffs, ">=", float(lhs - rng.uniform(0, 2)))
        elif u < 0.9:
            lp.add_constraint(coeffs, "=", float(lhs))
        else:
            # off-anchor rhs, may cut the anchor away or kill feasibility
            lp.add_constraint(coeffs, "<=", float(np.round(rng.uniform(-3, 1), 3)))
    return lp


@pytest.mark.parametrize("seed", range(40))
def test_random_instances_match_reference_solver(seed):
    rng = np.random.default_rng(1000 + seed)
    lp = _random_lp(rng)
    sol = solve_lp(lp)
    ref = linprog(**_to_scipy(lp))
    if ref.status == 4:
        pytest.skip("reference solver reported numerical trouble")
    if sol.status == "optimal":
        assert ref.status == 0
        sign = 1.0 if lp.sense == "min" else -1.0
        assert sol.objective == pytest.approx(
            sign * ref.fun, rel=1e-7, abs=1e-7
        )
        _certify_kkt(lp, sol)
    elif sol.status == "infeasible":
        assert ref.status == 2
    else:
        assert sol.status == "unbounded"
        assert ref.status == 3


def test_warm_start_tracks_bound_changes():
    rng = np.random.default_rng(42)
    hits = 0
    for _ in range(20):
        lp = _random_lp(rng, n=6, m=8)
        std = Standardized(lp)
        engine = SimplexEngine(std)
        first = engine.solve()
        if not first.optimal:
            continue
        hits += 1
        # branch-style tightening on the first structural variable
        lb = std.lb.copy()
        ub = std.ub.copy()
        mid = first.x[0] - 0.25 if np.isfinite(first.x[0]) else 0.0
        ub[0] = max(lb[0], mid) if np.isfinite(lb[0]) else mid
        warm = engine.solve(lb=lb, ub=ub, warm=True)

        cold_lp = LinearProgram(sense=lp.sense)
        for j in range(lp.n_vars):
            cold_lp.add_variable(lb=lb[j], ub=ub[j], cost=lp.cost[j])
        for row, sense, rhs in zip(lp.rows, lp.row_sense, lp.rhs):
            cold_lp.add_constraint(dict(row), sense, rhs)
        cold = solve_lp(cold_lp)
        assert warm.status == cold.status
        if warm.optimal:
            assert warm.objective == pytest.approx(cold.objective, abs=1e-7)
    assert hits >= 8


def test_snapshot_reload_reproduces_solution():
    rng = np.random.default_rng(3)
    lp = _random_lp(rng, n=5, m=6)
    std = Standardized(lp)
    engine = SimplexEngine(std)
    sol = engine.solve()
    assert sol.optimal
    basis, vstat = engine.snapshot()
    fresh = SimplexEngine(std)
    fresh.load_basis(basis, vstat)
    again = fresh.solve(warm=True)
    assert again.optimal
    assert again.objective == pytest.approx(sol.objective, abs=1e-9)
    assert again.iterations <= sol.iterations


def test_load_basis_pivots_from_nearby_state():
    # an engine already holding a different optimal basis adopts a
    # snapshot via exchange pivots; the inverse must stay exact
    rng = np.random.default_rng(11)
    for _ in range(20):
        lp = _random_lp(rng, n=8, m=10)
        std = Standardized(lp)
        engine = SimplexEngine(std)
        sol = engine.solve()
        if not sol.optimal:
            continue
        basis, vstat = engine.snapshot()
        # drift the basis by tightening a few bounds and re-solving
        lb = std.lb.copy()
        ub = std.ub.copy()
        for j in range(min(3, lp.n_vars)):
            if np.isfinite(sol.x[j]):
                lb[j] = max(lb[j], sol.x[j] - 0.25)
                ub[j] = min(ub[j], sol.x[j] + 0.25) + 0.5
        engine.solve(lb=lb, ub=ub, warm=True)
        engine.load_basis(basis, vstat)
        ident = np.column_stack(
            [engine._fac.ftran(std.a[:, int(b)]) for b in engine.basis]
        )
        assert np.abs(ident - np.eye(std.m)).max() < 1e-7
        assert set(engine.basis.tolist()) == set(basis.tolist())
        again = engine.solve(warm=True)
        assert again.optimal
        assert again.objective == pytest.approx(sol.objective, abs=1e-8)
