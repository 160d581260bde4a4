"""DC OPF tests: hand-solved cases, invariants, RTS checkpoints."""

import numpy as np
import pytest

from gridveil.cases import parse_case
from gridveil.dcmodel import LineStatus, build_dc_model
from gridveil.dcopf import DcOpfSolution, GenBlocks, pwl_blocks, solve_dcopf

ONE_BUS = """
function mpc = one_bus
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
 1 3 120 0 0 0 1 1.0 0 230 1 1.1 0.9;
];
mpc.gen = [
 1 0 0 100 -100 1.0 100 1 200 20;
];
mpc.branch = [
];
mpc.gencost = [
 2 0 0 3 0.02 12 5;
];
"""

# cheap remote unit behind a 50 MVA line; expensive local unit at the
# load bus picks up the remainder once the line saturates
TWO_BUS = """
function mpc = two_bus
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
 1 3 0 0 0 0 1 1.0 0 230 1 1.1 0.9;
 2 1 120 0 0 0 1 1.0 0 230 1 1.1 0.9;
];
mpc.gen = [
 1 0 0 100 -100 1.0 100 1 300 0;
 2 0 0 100 -100 1.0 100 1 300 0;
];
mpc.branch = [
 1 2 0.01 0.1 0 50 50 50 0 0 1 -360 360;
];
mpc.gencost = [
 2 0 0 3 0 10 0;
 2 0 0 3 0 30 0;
];
"""


@pytest.fixture(scope="module")
def onebus():
    return parse_case(ONE_BUS, "one_bus")


@pytest.fixture(scope="module")
def twobus():
    return parse_case(TWO_BUS, "two_bus")


def _solve(case, loads=None, **kw):
    dc = build_dc_model(case)
    if loads is None:
        loads = case.p_load_mw()
    return solve_dcopf(case, dc, loads, **kw)


# --------------------------------------------------------------- blocks


def test_block_construction_quadratic_vs_linear(onebus):
    blocks = pwl_blocks(onebus, segments=4, perturb=False)
    gb = blocks[0]
    # chord slopes of 0.02 p^2 + 12 p + 5 between 20 and 200 MW
    edges = np.linspace(20.0, 200.0, 5)
    cost = 0.02 * edges**2 + 12 * edges + 5
    want = np.diff(cost) / np.diff(edges) * 100.0
    assert gb.slope == pytest.approx(want, rel=1e-12)
    assert gb.width == pytest.approx(np.full(4, 45.0 / 100.0), rel=1e-12)
    assert gb.pmin == pytest.approx(0.2)
    assert gb.base_cost == pytest.approx(0.02 * 400 + 12 * 20 + 5)
    assert np.all(np.diff(gb.slope) > 0)


def test_linear_curve_gets_single_exact_block(twobus):
    blocks = pwl_blocks(twobus, segments=10, perturb=False)
    for gb in blocks:
        assert len(gb.width) == 1
        assert gb.slope[0] * gb.width[0] == pytest.approx(
            twobus.costs[gb.gen].c1 * (300.0 - 0.0), rel=1e-12
        )


def test_perturbation_is_tiny_deterministic_and_order_safe():
    from gridveil.cases import load_bundled_case

    case = load_bundled_case("case24_ieee_rts")
    a = pwl_blocks(case, segments=10, perturb=True)
    b = pwl_blocks(case, segments=10, perturb=True)
    clean = pwl_blocks(case, segments=10, perturb=False)
    for ga, gb_, gc in zip(a, b, clean):
        assert ga.slope == pytest.approx(gb_.slope, abs=0.0)  # bitwise repeat
        if len(ga.slope):
            assert np.max(np.abs(ga.slope - gc.slope)) < 1e-3
            assert np.all(np.diff(ga.slope) > 0) or len(ga.slope) == 1
    # twin units at one bus become strictly ordered
    twins = [gb2 for gb2 in a if case.generators[gb2.gen].bus == 21]
    slopes = [g.slope[0] for g in twins]
    assert len(set(slopes)) == len(slopes)


# ---------------------------------------------------------- tiny systems


def test_single_bus_serves_load_at_curve_cost(onebus):
    sol = _solve(onebus)
    assert sol.optimal
    assert sol.p_g[0] == pytest.approx(120.0, abs=1e-8)
    assert sol.p_k.size == 0
    # PWL chord cost at an interior point sits slightly above the curve
    true_cost = 0.02 * 120**2 + 12 * 120 + 5
    assert sol.cost >= true_cost - 1e-9
    assert sol.cost == pytest.approx(true_cost, rel=5e-3)
    # at 10 segments the breakpoints straddle 120 MW tightly
    fine = _solve(onebus, segments=30)
    assert fine.cost == pytest.approx(true_cost, rel=5e-4)


def test_single_bus_infeasible_when_load_exceeds_fleet(onebus):
    sol = _solve(onebus, loads=np.array([250.0]))
    assert sol.status == "infeasible"


def test_two_bus_congestion_hand_kkt(twobus):
    """Line saturates at 50 MW; marginal unit is the local one.

    Hand solution: cheap unit exports 50, local serves 70. LMP at
    bus 1 is 10, at bus 2 is 30, so mu_up on the line picks up the
    20 $/MWh spread (per-unit scale: 100x).
    """
    sol = _solve(twobus, perturb=False)
    assert sol.optimal
    assert sol.p_g == pytest.approx([50.0, 70.0], abs=1e-6)
    assert sol.p_k[0] == pytest.approx(50.0, abs=1e-6)
    assert sol.cost == pytest.approx(50 * 10 + 70 * 30, abs=1e-4)
    lam_mwh = sol.lam / 100.0
    assert lam_mwh == pytest.approx([10.0, 30.0], abs=1e-8)
    assert sol.mu_up[0] / 100.0 == pytest.approx(20.0, abs=1e-8)
    assert sol.mu_lo[0] == pytest.approx(0.0, abs=1e-8)
    # both units are marginal at their own bus: slope == local LMP,
    # neither generator bound is active (the line does the limiting)
    for g in (0, 1):
        assert sol.alpha_up[g][0] == pytest.approx(0.0, abs=1e-8)
        assert sol.alpha_lo[g][0] == pytest.approx(0.0, abs=1e-8)
        resid = sol.blocks[g].slope[0] - sol.lam[g]
        assert resid == pytest.approx(0.0, abs=1e-8)


def test_two_bus_uncongested_when_line_is_big(twobus):
    case = parse_case(TWO_BUS.replace("0 50 50 50", "0 500 500 500"), "big")
    sol = _solve(case, perturb=False)
    assert sol.optimal
    assert sol.p_g == pytest.approx([120.0, 0.0], abs=1e-6)
    lam_mwh = sol.lam / 100.0
    assert lam_mwh == pytest.approx([10.0, 10.0], abs=1e-8)
    assert np.all(sol.mu_up == 0.0)


def test_flow_bias_shifts_the_limit_window(twobus):
    # bias the seen flow upward so the window clamps real flow lower
    dc = build_dc_model(twobus)
    c = np.array([0.0, -0.02])  # H2 c = 0.02/0.1 pu = 20 MW seen extra
    sol = solve_dcopf(twobus, dc, twobus.p_load_mw(), flow_bias=c)
    assert sol.optimal
    assert sol.p_k[0] == pytest.approx(30.0, abs=1e-6)
    assert sol.p_g == pytest.approx([30.0, 90.0], abs=1e-6)


def test_cost_monotone_in_load(twobus):
    prev = None
    for load in (60.0, 90.0, 120.0, 150.0):
        sol = _solve(twobus, loads=np.array([0.0, load]))
        assert sol.optimal
        if prev is not None:
            assert sol.cost >= prev - 1e-9
        prev = sol.cost


# ------------------------------------------------------------------ RTS


@pytest.fixture(scope="module")
def rts_sol(rts):
    dc = build_dc_model(rts)
    return solve_dcopf(rts, dc, rts.p_load_mw()), dc


def test_rts_balance_and_limits(rts, rts_sol):
    sol, dc = rts_sol
    assert sol.optimal
    a_gn = rts.gen_bus_matrix()
    inj = a_gn @ sol.p_g - rts.p_load_mw()
    # nodal balance: injections equal network flows everywhere
    resid = inj / rts.base_mva - dc.h1 @ sol.theta
    assert np.max(np.abs(resid)) < 1e-6
    assert np.all(np.abs(sol.p_k) <= dc.ratings_pu * rts.base_mva + 1e-6)
    lo = np.array([g.pmin_mw for g in rts.generators])
    hi = np.array([g.pmax_mw for g in rts.generators])
    assert np.all(sol.p_g >= lo - 1e-6)
    assert np.all(sol.p_g <= hi + 1e-6)
    assert sol.p_g.sum() == pytest.approx(2850.0, abs=1e-5)


def test_rts_duals_certify_optimality(rts, rts_sol):
    """Lagrangian stationarity over theta from reported duals.

    H1^T lam == H2^T (mu_up - mu_lo) on non-slack buses certifies the
    angle block; block reduced costs certify the generator block.
    """
    sol, dc = rts_sol
    grad = dc.h1.T @ sol.lam - dc.h2.T @ (sol.mu_up - sol.mu_lo)
    keep = [i for i in range(rts.n_bus) if i != rts.slack_bus]
    assert np.max(np.abs(grad[keep])) < 1e-6
    for gb, au, al in zip(sol.blocks, sol.alpha_up, sol.alpha_lo):
        bus = rts.generators[gb.gen].bus
        resid = gb.slope - sol.lam[bus] + au - al
        if len(resid):
            assert np.max(np.abs(resid)) < 1e-6


def test_rts_dispatch_merit_order(rts, rts_sol):
    sol, _ = rts_sol
    # hydro at bus 22 is nearly free: always fully dispatched
    for g, gen in enumerate(rts.generators):
        if gen.bus == 21:
            assert sol.p_g[g] == pytest.approx(gen.pmax_mw, abs=1e-6)
    # the 130 $/MWh peakers stay at their floor
    for g, (gen, cc) in enumerate(zip(rts.generators, rts.costs)):
        if cc.c1 == 130.0:
            assert sol.p_g[g] == pytest.approx(gen.pmin_mw, abs=1e-6)


def test_rts_solution_feeds_ac_powerflow(rts, rts_sol):
    from gridveil.powerflow import DispatchPoint, ac_powerflow

    sol, _ = rts_sol
    status = LineStatus.all_in_service(rts)
    pf = ac_powerflow(rts, status, DispatchPoint(sol.p_g))
    assert pf.converged


def test_rts_segment_knob_changes_cost_little(rts):
    dc = build_dc_model(rts)
    c10 = solve_dcopf(rts, dc, rts.p_load_mw(), segments=10).cost
    c4 = solve_dcopf(rts, dc, rts.p_load_mw(), segments=4).cost
    assert c4 >= c10 - 1e-6  # coarser chords overestimate convex cost
    assert abs(c4 - c10) / c10 < 0.01


def test_limit_all_rows_matches_default_when_all_in_service(rts):
    dc = build_dc_model(rts)
    a = solve_dcopf(rts, dc, rts.p_load_mw())
    b = solve_dcopf(rts, dc, rts.p_load_mw(), limit_all_rows=True)
    assert a.optimal and b.optimal
    assert a.cost == pytest.approx(b.cost, abs=1e-7)
    assert a.p_g == pytest.approx(b.p_g, abs=1e-7)


def test_post_trip_dcopf_with_full_row_limits(rts):
    # drop one 8-9 circuit; the believed-flow row on it stays bounded
    status = LineStatus.all_in_service(rts).with_tripped(11)
    dc = build_dc_model(rts, status)
    sol = solve_dcopf(rts, dc, rts.p_load_mw(), limit_all_rows=True)
    assert sol.optimal
    assert sol.p_k[11] == pytest.approx(0.0, abs=1e-9)
    believed = dc.h2 @ sol.theta * rts.base_mva
    assert abs(believed[11]) <= dc.ratings_pu[11] * rts.base_mva + 1e-6


def test_solution_serializes(rts_sol):
    sol, _ = rts_sol
    row = sol.to_json()
    assert row["status"] == "optimal"
    assert len(row["p_g_mw"]) == 33
    assert len(row["p_k_mw"]) == 38
    assert row["cost"] == pytest.approx(sol.cost)
