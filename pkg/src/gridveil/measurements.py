"""Measurement plans, SCADA snapshots, and AC measurement models.

A plan fixes the ordering of measurement entries; a snapshot carries the
per-unit values plus the reported breaker status. The same h(x) model is
used to emit physical measurements and, in estimation, to fit states.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from gridveil.cases import GridCase
from gridveil.dcmodel import LineStatus
from gridveil.powerflow import (
    StateVector,
    branch_admittances,
    build_ybus,
)

MEASUREMENT_TYPES = ("p_inj", "q_inj", "p_from", "q_from", "p_to", "q_to", "vmag")
_FLOW_TYPES = ("p_from", "q_from", "p_to", "q_to")


@dataclass(frozen=True)
class Measurement:
    mtype: str
    element: int  # bus index for injections and vmag, branch index for flows


@dataclass
class MeasurementPlan:
    entries: list[Measurement]
    sigmas: np.ndarray

    @classmethod
    def full_metering(
        cls,
        case: GridCase,
        sigma_power: float = 0.01,
        sigma_voltage: float = 0.004,
    ) -> "MeasurementPlan":
        """P and Q injections at every bus, P and Q flows at both branch
        ends, and a voltage magnitude at every bus."""
        entries: list[Measurement] = []
        sigmas: list[float] = []
        for mtype in ("p_inj", "q_inj"):
            for i in range(case.n_bus):
                entries.append(Measurement(mtype, i))
                sigmas.append(sigma_power)
        for mtype in _FLOW_TYPES:
            for k in range(case.n_branch):
                entries.append(Measurement(mtype, k))
                sigmas.append(sigma_power)
        for i in range(case.n_bus):
            entries.append(Measurement("vmag", i))
            sigmas.append(sigma_voltage)
        return cls(entries=entries, sigmas=np.array(sigmas))

    def __len__(self) -> int:
        return len(self.entries)

    def index_of(self, mtype: str, element: int) -> int:
        for i, m in enumerate(self.entries):
            if m.mtype == mtype and m.element == element:
                return i
        raise KeyError(f"no measurement {mtype}@{element} in plan")


@dataclass
class MeasurementSet:
    """Measurement values aligned with a plan, plus reported breaker状态.

    Values are per-unit on the case base. The status vector is what the
    telemetry claims, which an attacker may have altered.
    """

    plan: MeasurementPlan
    z: np.ndarray
    status: LineStatus

    def copy(self) -> "MeasurementSet":
        return MeasurementSet(self.plan, self.z.copy(), LineStatus(self.status.s.copy()))

    def to_json(self) -> str:
        records = [
            {
                "type": m.mtype,
                "element": m.element + 1,
                "value": float(self.z[i]),
                "sigma": float(self.plan.sigmas[i]),
            }
            for i, m in enumerate(self.plan.entries)
        ]
        return json.dumps(
            {"measurements": records, "line_status": self.status.s.tolist()},
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "MeasurementSet":
        doc = json.loads(text)
        entries = [
            Measurement(rec["type"], rec["element"] - 1)
            for rec in doc["measurements"]
        ]
        sigmas = np.array([rec["sigma"] for rec in doc["measurements"]])
        z = np.array([rec["value"] for rec in doc["measurements"]])
        status = LineStatus(np.array(doc["line_status"], dtype=np.int8))
        return cls(MeasurementPlan(entries, sigmas), z, status)


def evaluate_plan(
    case: GridCase, status: LineStatus, state: StateVector, plan: MeasurementPlan
) -> np.ndarray:
    """Noise-free measurement function h(x) under the given topology."""
    ybus = build_ybus(case, status)
    yf, yt = branch_admittances(case, status)
    v = state.complex_voltage()
    s_inj = v * np.conj(ybus @ v)
    f_idx = [br.from_bus for br in case.branches]
    t_idx = [br.to_bus for br in case.branches]
    sf = v[f_idx] * np.conj(yf @ v)
    st = v[t_idx] * np.conj(yt @ v)
    values = {
        "p_inj": s_inj.real,
        "q_inj": s_inj.imag,
        "p_from": sf.real,
        "q_from": sf.imag,
        "p_to": st.real,
        "q_to": st.imag,
        "vmag": state.vm,
    }
    return np.array([values[m.mtype][m.element] for m in plan.entries])


def measure(
    case: GridCase,
    status: LineStatus,
    state: StateVector,
    plan: MeasurementPlan,
    rng: np.random.Generator | None = None,
) -> MeasurementSet:
    """Emit a measurement snapshot of a physical state.

    Flow measurements on out-of-service branches read exactly 0 (open
    breaker telemetry) and receive no noise. With an rng, all other
    entries get independent Gaussian noise at the plan sigmas.
    """
    z = evaluate_plan(case, status, state, plan)
    if rng is not None:
        noise = rng.normal(0.0, plan.sigmas)
        for i, m in enumerate(plan.entries):
            if m.mtype in _FLOW_TYPES and status.s[m.element] != 1:
                continue
            z[i] += noise[i]
    return MeasurementSet(plan=plan, z=z, status=LineStatus(status.s.copy()))


def plan_jacobian(
    case: GridCase,
    status: LineStatus,
    state: StateVector,
    plan: MeasurementPlan,
    rows: list[int],
    va_cols: list[int],
    vm_cols: list[int],
) -> np.ndarray:
    """Measurement Jacobian for selected plan rows and state columns.

    Columns are angles at va_cols followed by magnitudes at vm_cols.
    """
    n = case.n_bus
    ybus = build_ybus(case, status)
    yf, yt = branch_admittances(case, status)
    v = state.complex_voltage()
    vnorm = v / np.abs(v)

    ibus = ybus @ v
    diag_v = np.diag(v)
    ds_dva = 1j * diag_v @ np.conj(np.diag(ibus) - ybus @ diag_v)
    ds_dvm = diag_v @ np.conj(ybus @ np.diag(vnorm)) + np.conj(np.diag(ibus)) @ np.diag(
        vnorm
    )

    f_idx = [br.from_bus for br in case.branches]
    t_idx = [br.to_bus for br in case.branches]
    cf = np.zeros((case.n_branch, n))
    ct = np.zeros((case.n_branch, n))
    cf[np.arange(case.n_branch), f_idx] = 1.0
    ct[np.arange(case.n_branch), t_idx] = 1.0

    i_f = yf @ v
    i_t = yt @ v
    diag_vf = np.diag(v[f_idx])
    diag_vt = np.diag(v[t_idx])
    dsf_dva = 1j * (
        np.diag(np.conj(i_f)) @ cf @ diag_v - diag_vf @ np.conj(yf @ diag_v)
    )
    dsf_dvm = np.diag(np.conj(i_f)) @ cf @ np.diag(vnorm) + diag_vf @ np.conj(
        yf @ np.diag(vnorm)
    )
    dst_dva = 1j * (
        np.diag(np.conj(i_t)) @ ct @ diag_v - diag_vt @ np.conj(yt @ diag_v)
    )
    dst_dvm = np.diag(np.conj(i_t)) @ ct @ np.diag(vnorm) + diag_vt @ np.conj(
        yt @ np.diag(vnorm)
    )

    dvm_dvm = np.eye(n)

    blocks_va = {
        "p_inj": ds_dva.real,
        "q_inj": ds_dva.imag,
        "p_from": dsf_dva.real,
        "q_from": dsf_dva.imag,
        "p_to": dst_dva.real,
        "q_to": dst_dva.imag,
        "vmag": np.zeros((n, n)),
    }
    blocks_vm = {
        "p_inj": ds_dvm.real,
        "q_inj": ds_dvm.imag,
        "p_from": dsf_dvm.real,
        "q_from": dsf_dvm.imag,
        "p_to": dst_dvm.real,
        "q_to": dst_dvm.imag,
        "vmag": dvm_dvm,
    }

    h = np.zeros((len(rows), len(va_cols) + len(vm_cols)))
    for r, plan_row in enumerate(rows):
        m = plan.entries[plan_row]
        h[r, : len(va_cols)] = blocks_va[m.mtype][m.element, va_cols]
        h[r, len(va_cols) :] = blocks_vm[m.mtype][m.element, vm_cols]
    return h
