"""Nonlinear power flow against closed-form and conservation oracles."""

import math

import numpy as np
import pytest

from gridveil.cases import parse_case
from gridveil.dcmodel import LineStatus, build_dc_model
from gridveil.powerflow import (
    DispatchPoint,
    PowerFlowError,
    ac_powerflow,
    apparent_flows_mva,
    branch_flows_ac,
    build_ybus,
    bus_injections,
    dc_powerflow,
)

PAIR = """\
function mpc = pair
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1	0	138	1	1.2	0.8;
	2	1	50	20	0	0	1	1	0	138	1	1.2	0.8;
];
mpc.gen = [
	1	50	0	999	-999	1.0	100	1	999	0;
];
mpc.branch = [
	1	2	0	0.1	0	250	250	250	0	0	1	-360	360;
];
mpc.gencost = [
	2	0	0	3	0	10	0;
];
"""


def test_two_bus_closed_form():
    """Receiving-end voltage of a lossless feeder has an algebraic solution.

    With slack at 1.0 pu, reactance x and load p + jq, the squared
    magnitude u = |V2|^2 solves u^2 + (2qx - 1)u + x^2(p^2 + q^2) = 0
    and the angle follows from v2*sin(a2) = -p*x.
    """
    case = parse_case(PAIR, name="pair")
    x, p, q = 0.1, 0.5, 0.2
    disc = (1.0 - 2 * q * x) ** 2 - 4 * x * x * (p * p + q * q)
    u = ((1.0 - 2 * q * x) + math.sqrt(disc)) / 2
    v2 = math.sqrt(u)
    a2 = math.asin(-p * x / v2)

    status = LineStatus.all_in_service(case)
    res = ac_powerflow(case, status, DispatchPoint(p_gen_mw=np.array([50.0])))
    assert res.converged
    assert res.state.vm[0] == pytest.approx(1.0, abs=1e-12)
    assert res.state.va[0] == 0.0
    assert res.state.vm[1] == pytest.approx(v2, abs=1e-7)
    assert res.state.va[1] == pytest.approx(a2, abs=1e-7)
    # lossless line: slack supplies exactly the load
    assert res.p_slack_mw == pytest.approx(50.0, abs=1e-5)


def test_rts_converges_with_tight_balance(rts, rts_status, rts_pf):
    res = rts_pf
    assert res.converged
    assert res.mismatch < 1e-8
    ybus = build_ybus(rts, rts_status)
    s_calc = bus_injections(ybus, res.state)
    p_sched = (rts.gen_bus_matrix() @ res.dispatch.p_gen_mw - rts.p_load_mw())
    p_sched /= rts.base_mva
    slack = next(i for i, b in enumerate(rts.buses) if b.bus_type == 3)
    err = np.abs(s_calc.real - p_sched)
    err[slack] = 0.0
    assert err.max() < 1e-8


def test_rts_voltage_band_and_losses(rts, rts_pf):
    assert rts_pf.state.vm.min() > 0.94
    assert rts_pf.state.vm.max() < 1.06
    total_gen = float(rts_pf.dispatch.p_gen_mw.sum())
    losses = total_gen - float(rts.p_load_mw().sum())
    assert 20.0 < losses < 80.0


def test_losses_match_branch_accounting(rts, rts_status, rts_pf):
    sf, st = branch_flows_ac(rts, rts_status, rts_pf.state)
    shunt_mw = sum(
        b.gs_mw * rts_pf.state.vm[i] ** 2 for i, b in enumerate(rts.buses)
    )
    line_loss_mw = float((sf + st).real.sum()) * rts.base_mva
    total_gen = float(rts_pf.dispatch.p_gen_mw.sum())
    assert total_gen - float(rts.p_load_mw().sum()) == pytest.approx(
        line_loss_mw + shunt_mw, abs=1e-4
    )


def test_apparent_flow_is_end_maximum(rts, rts_status, rts_pf):
    sf, st = branch_flows_ac(rts, rts_status, rts_pf.state)
    mva = apparent_flows_mva(rts, rts_status, rts_pf.state)
    k = 11
    assert mva[k] == pytest.approx(
        max(abs(sf[k]), abs(st[k])) * rts.base_mva, abs=1e-9
    )
    assert np.all(mva >= 0.0)


def test_open_branch_flows_are_zero(rts, rts_dispatch):
    status = LineStatus.all_in_service(rts).with_tripped(11)
    res = ac_powerflow(rts, status, rts_dispatch)
    sf, st = branch_flows_ac(rts, status, res.state)
    assert sf[11] == 0.0 and st[11] == 0.0


def test_unsolvable_loading_raises(loop3):
    loop3.buses[2].p_load_mw = 5000.0
    status = LineStatus.all_in_service(loop3)
    with pytest.raises(PowerFlowError):
        ac_powerflow(loop3, status, DispatchPoint(p_gen_mw=np.array([30.0, 15.0])))


def test_dc_powerflow_matches_model_solve(rts, rts_status, rts_dispatch):
    dc = build_dc_model(rts, rts_status)
    theta, flows = dc_powerflow(dc, rts_dispatch, rts.p_load_mw())
    inj = (rts.gen_bus_matrix() @ rts_dispatch.p_gen_mw - rts.p_load_mw())
    inj /= rts.base_mva
    theta2 = dc.solve_angles(inj)
    assert np.abs(theta - theta2).max() < 1e-12
    assert np.abs(flows - dc.branch_flows(theta2)).max() < 1e-12


def test_dc_flows_track_ac_flows(rts, rts_status, rts_dispatch, rts_pf):
    """The linearized flows should sit near the nonlinear MW flows."""
    dc = build_dc_model(rts, rts_status)
    _, flows = dc_powerflow(dc, rts_dispatch, rts.p_load_mw())
    sf, _ = branch_flows_ac(rts, rts_status, rts_pf.state)
    gap = np.abs(flows * rts.base_mva - sf.real * rts.base_mva)
    # loose: linearization plus losses, but nothing should be wildly off
    assert np.median(gap) < 6.0
    assert gap.max() < 30.0
