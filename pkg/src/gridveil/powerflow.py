"""AC and DC power flow on a GridCase.

The AC solver is a full Newton-Raphson in polar coordinates with the
complete Jacobian refactorized every iteration, no reactive limit
switching. Everything is per-unit on the case base; bus angles are in
radians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gridveil.cases import GridCase
from gridveil.dcmodel import DcModel, LineStatus


class PowerFlowError(RuntimeError):
    """Raised when a power flow cannot be solved."""


@dataclass
class StateVector:
    """Bus voltage magnitudes (per-unit) and angles (radians)."""

    vm: np.ndarray
    va: np.ndarray

    def copy(self) -> "StateVector":
        return StateVector(self.vm.copy(), self.va.copy())

    def complex_voltage(self) -> np.ndarray:
        return self.vm * np.exp(1j * self.va)


@dataclass
class DispatchPoint:
    """Generator active setpoints plus realized reactive output."""

    p_gen_mw: np.ndarray
    q_gen_mvar: np.ndarray | None = None

    def copy(self) -> "DispatchPoint":
        q = None if self.q_gen_mvar is None else self.q_gen_mvar.copy()
        return DispatchPoint(self.p_gen_mw.copy(), q)


@dataclass
class PowerFlowResult:
    state: StateVector
    dispatch: DispatchPoint  # includes realized slack P and gen Q
    converged: bool
    iterations: int
    mismatch: float
    p_slack_mw: float = 0.0


def build_ybus(case: GridCase, status: LineStatus) -> np.ndarray:
    """Dense bus admittance matrix with taps, shunts and line charging."""
    n = case.n_bus
    y = np.zeros((n, n), dtype=complex)
    for k, br in enumerate(case.branches):
        if status.s[k] != 1:
            continue
        ys = 1.0 / complex(br.r, br.x)
        bc = 1j * br.charging_b / 2.0
        tap = br.tap * np.exp(1j * np.deg2rad(br.shift_deg))
        f, t = br.from_bus, br.to_bus
        y[f, f] += (ys + bc) / (tap * np.conj(tap))
        y[f, t] += -ys / np.conj(tap)
        y[t, f] += -ys / tap
        y[t, t] += ys + bc
    for i, bus in enumerate(case.buses):
        y[i, i] += complex(bus.gs_mw, bus.bs_mvar) / case.base_mva
    return y


def branch_admittances(
    case: GridCase, status: LineStatus
) -> tuple[np.ndarray, np.ndarray]:
    """From-end and to-end branch admittance matrices (n_branch x n_bus)."""
    n, m = case.n_bus, case.n_branch
    yf = np.zeros((m, n), dtype=complex)
    yt = np.zeros((m, n), dtype=complex)
    for k, br in enumerate(case.branches):
        if status.s[k] != 1:
            continue
        ys = 1.0 / complex(br.r, br.x)
        bc = 1j * br.charging_b / 2.0
        tap = br.tap * np.exp(1j * np.deg2rad(br.shift_deg))
        f, t = br.from_bus, br.to_bus
        yf[k, f] = (ys + bc) / (tap * np.conj(tap))
        yf[k, t] = -ys / np.conj(tap)
        yt[k, f] = -ys / tap
        yt[k, t] = ys + bc
    return yf, yt


def bus_injections(ybus: np.ndarray, state: StateVector) -> np.ndarray:
    """Complex net bus injections V conj(Y V) in per-unit."""
    v = state.complex_voltage()
    return v * np.conj(ybus @ v)


def branch_flows_ac(
    case: GridCase, status: LineStatus, state: StateVector
) -> tuple[np.ndarray, np.ndarray]:
    """Complex from-end and to-end branch flows, zero for open branches."""
    yf, yt = branch_admittances(case, status)
    v = state.complex_voltage()
    vf = v[[br.from_bus for br in case.branches]]
    vt = v[[br.to_bus for br in case.branches]]
    sf = vf * np.conj(yf @ v)
    st = vt * np.conj(yt @ v)
    return sf, st


def apparent_flows_mva(
    case: GridCase, status: LineStatus, state: StateVector
) -> np.ndarray:
    """Apparent power per branch in MVA, the larger of the two ends."""
    sf, st = branch_flows_ac(case, status, state)
    return np.maximum(np.abs(sf), np.abs(st)) * case.base_mva


def _jacobian_blocks(
    ybus: np.ndarray, v: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """dS/dVa and dS/dVm for complex injections."""
    ibus = ybus @ v
    diag_v = np.diag(v)
    diag_i = np.diag(ibus)
    diag_vnorm = np.diag(v / np.abs(v))
    ds_dva = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
    ds_dvm = diag_v @ np.conj(ybus @ diag_vnorm) + np.conj(diag_i) @ diag_vnorm
    return ds_dva, ds_dvm


def ac_powerflow(
    case: GridCase,
    status: LineStatus,
    dispatch: DispatchPoint,
    tol: float = 1e-8,
    max_iter: int = 20,
) -> PowerFlowResult:
    """Newton-Raphson AC power flow from a flat start.

    Generator buses hold their setpoint voltage, the slack bus covers the
    active imbalance, and reactive limits are not enforced. Raises
    PowerFlowError if the iteration does not reach tol by max_iter.
    """
    n = case.n_bus
    base = case.base_mva
    slack = case.slack_bus
    ybus = build_ybus(case, status)

    p_gen_bus = np.zeros(n)
    v_set = np.ones(n)
    has_gen = np.zeros(n, dtype=bool)
    for g, gen in enumerate(case.generators):
        if gen.status != 1:
            continue
        p_gen_bus[gen.bus] += dispatch.p_gen_mw[g] / base
        v_set[gen.bus] = gen.v_set
        has_gen[gen.bus] = True

    pv = [i for i in range(n) if has_gen[i] and i != slack]
    pq = [i for i in range(n) if not has_gen[i] and i != slack]
    pvpq = pv + pq

    p_spec = p_gen_bus - case.p_load_mw() / base
    q_spec = -case.q_load_mvar() / base

    vm = np.ones(n)
    vm[has_gen] = v_set[has_gen]
    va = np.zeros(n)

    mismatch = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        v = vm * np.exp(1j * va)
        s = v * np.conj(ybus @ v)
        dp = s.real - p_spec
        dq = s.imag - q_spec
        f = np.concatenate([dp[pvpq], dq[pq]])
        mismatch = float(np.abs(f).max()) if f.size else 0.0
        if mismatch < tol:
            break
        ds_dva, ds_dvm = _jacobian_blocks(ybus, v)
        j11 = ds_dva[np.ix_(pvpq, pvpq)].real
        j12 = ds_dvm[np.ix_(pvpq, pq)].real
        j21 = ds_dva[np.ix_(pq, pvpq)].imag
        j22 = ds_dvm[np.ix_(pq, pq)].imag
        jac = np.block([[j11, j12], [j21, j22]])
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError("singular power flow Jacobian") from exc
        va[pvpq] += dx[: len(pvpq)]
        vm[pq] += dx[len(pvpq) :]
    else:
        raise PowerFlowError(
            f"AC power flow did not converge in {max_iter} iterations "
            f"(mismatch {mismatch:.3e})"
        )

    state = StateVector(vm=vm, va=va)
    s = bus_injections(ybus, state)

    # realized generation: slack bus absorbs the active imbalance, every
    # generator bus absorbs its reactive requirement split evenly
    p_out = dispatch.p_gen_mw.astype(float).copy()
    slack_gens = [g for g in case.gens_at(slack) if case.generators[g].status == 1]
    p_slack_total = (s[slack].real + case.buses[slack].p_load_mw / base) * base
    if slack_gens:
        setpoint_sum = sum(dispatch.p_gen_mw[g] for g in slack_gens)
        extra = (p_slack_total - setpoint_sum) / len(slack_gens)
        for g in slack_gens:
            p_out[g] = dispatch.p_gen_mw[g] + extra
    q_out = np.zeros(case.n_gen)
    for i in range(n):
        gens = [g for g in case.gens_at(i) if case.generators[g].status == 1]
        if not gens:
            continue
        q_bus = (s[i].imag + case.buses[i].q_load_mvar / base) * base
        for g in gens:
            q_out[g] = q_bus / len(gens)

    return PowerFlowResult(
        state=state,
        dispatch=DispatchPoint(p_gen_mw=p_out, q_gen_mvar=q_out),
        converged=True,
        iterations=it,
        mismatch=mismatch,
        p_slack_mw=p_slack_total,
    )


def dc_powerflow(
    dc: DcModel, dispatch: DispatchPoint, p_load_mw: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """DC angles and per-branch flows for a dispatch, slack angle zero.

    The slack bus picks up any active imbalance implicitly through the
    reduced system solve. Returns (theta, flows) in radians and per-unit.
    """
    case = dc.case
    base = case.base_mva
    if p_load_mw is None:
        p_load_mw = case.p_load_mw()
    inj = (dc.a_gn @ dispatch.p_gen_mw - p_load_mw) / base
    theta = dc.solve_angles(inj)
    return theta, dc.branch_flows(theta)
