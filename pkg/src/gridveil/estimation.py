"""Weighted least squares state estimation with bad data handling.

Gauss-Newton on the normal equations, flat start, full or sub-network
scope. The chi-square test and the largest normalized residual follow
the usual bad data processing chain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from gridveil.cases import GridCase
from gridveil.dcmodel import LineStatus
from gridveil.measurements import (
    MeasurementSet,
    evaluate_plan,
    plan_jacobian,
)
from gridveil.powerflow import StateVector

_FLOW_TYPES = ("p_from", "q_from", "p_to", "q_to")


class EstimationError(RuntimeError):
    """Raised when the estimator cannot produce a state."""


@dataclass
class EstimationScope:
    """Restricts estimation to a bus set with a local angle reference."""

    buses: list[int]
    slack: int

    def __post_init__(self) -> None:
        self.buses = sorted(self.buses)
        if self.slack not in self.buses:
            raise EstimationError("scope slack must belong to the scope")


@dataclass
class EstimationResult:
    state: StateVector
    scope_buses: list[int]
    j_value: float
    dof: int
    converged: bool
    iterations: int
    used_rows: list[int] = field(repr=False)
    residuals: np.ndarray = field(repr=False)

    def to_json(self) -> str:
        return json.dumps(
            {
                "vm": self.state.vm.tolist(),
                "va": self.state.va.tolist(),
                "scope_buses": [b + 1 for b in self.scope_buses],
                "j_value": self.j_value,
                "dof": self.dof,
                "converged": self.converged,
                "iterations": self.iterations,
            },
            indent=1,
        )


@dataclass
class ChiSquareVerdict:
    j_value: float
    threshold: float
    dof: int
    alpha: float
    passed: bool


def _interior_buses(case: GridCase, status: LineStatus, buses: set[int]) -> set[int]:
    """Buses whose closed in-service neighborhood lies inside the set."""
    interior = set()
    for i in buses:
        inside = True
        for k in case.branches_at(i):
            if status.s[k] != 1:
                continue
            br = case.branches[k]
            other = br.to_bus if br.from_bus == i else br.from_bus
            if other not in buses:
                inside = False
                break
        if inside:
            interior.add(i)
    return interior


def select_rows(
    case: GridCase,
    status: LineStatus,
    ms: MeasurementSet,
    scope: EstimationScope | None,
) -> list[int]:
    """Plan rows usable for estimation under a believed topology.

    Open branches contribute no flow rows. Under a scope, flows need both
    ends inside, injections need the whole neighborhood inside, and
    voltage magnitudes need the bus inside.
    """
    if scope is None:
        in_scope = None
        interior = None
    else:
        in_scope = set(scope.buses)
        interior = _interior_buses(case, status, in_scope)
    rows = []
    for i, m in enumerate(ms.plan.entries):
        if m.mtype in _FLOW_TYPES:
            if status.s[m.element] != 1:
                continue
            br = case.branches[m.element]
            if in_scope is not None and (
                br.from_bus not in in_scope or br.to_bus not in in_scope
            ):
                continue
        elif m.mtype in ("p_inj", "q_inj"):
            if interior is not None and m.element not in interior:
                continue
        else:  # vmag
            if in_scope is not None and m.element not in in_scope:
                continue
        rows.append(i)
    return rows


def wls_estimate(
    ms: MeasurementSet,
    case: GridCase,
    believed_status: LineStatus | None = None,
    scope: EstimationScope | None = None,
    tol: float = 1e-8,
    max_iter: int = 25,
) -> EstimationResult:
    """Estimate bus voltages from a measurement snapshot.

    The topology defaults to the snapshot's reported breaker status. With
    a scope, only states of the scope buses are estimated, referenced to
    the scope slack angle; buses outside keep flat values in the result.
    """
    status = believed_status if believed_status is not None else ms.status
    if scope is None:
        bus_list = list(range(case.n_bus))
        ref = case.slack_bus
    else:
        bus_list = scope.buses
        ref = scope.slack
    va_cols = [b for b in bus_list if b != ref]
    vm_cols = list(bus_list)

    rows = select_rows(case, status, ms, scope)
    n_states = len(va_cols) + len(vm_cols)
    if len(rows) < n_states:
        raise EstimationError(
            f"{len(rows)} usable measurements cannot determine {n_states} states"
        )

    w = 1.0 / ms.plan.sigmas[rows] ** 2
    z = ms.z[rows]

    state = StateVector(vm=np.ones(case.n_bus), va=np.zeros(case.n_bus))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        h_val = evaluate_plan(case, status, state, ms.plan)[rows]
        r = z - h_val
        h = plan_jacobian(case, status, state, ms.plan, rows, va_cols, vm_cols)
        gain = (h * w[:, None]).T @ h
        rhs = (h * w[:, None]).T @ r
        try:
            dx = np.linalg.solve(gain, rhs)
        except np.linalg.LinAlgError as exc:
            raise EstimationError("singular gain matrix, scope unobservable") from exc
        state.va[va_cols] += dx[: len(va_cols)]
        state.vm[vm_cols] += dx[len(va_cols) :]
        if np.abs(dx).max() < tol:
            converged = True
            break
    if not converged:
        raise EstimationError(f"estimator did not converge in {max_iter} iterations")

    h_val = evaluate_plan(case, status, state, ms.plan)[rows]
    residuals = z - h_val
    j_value = float(np.sum(w * residuals**2))
    return EstimationResult(
        state=state,
        scope_buses=bus_list,
        j_value=j_value,
        dof=len(rows) - n_states,
        converged=converged,
        iterations=it,
        used_rows=rows,
        residuals=residuals,
    )


def chi_square_test(
    result: EstimationResult, alpha: float = 0.05
) -> ChiSquareVerdict:
    """Bad data detection on the weighted residual sum."""
    threshold = float(chi2.ppf(1.0 - alpha, result.dof))
    return ChiSquareVerdict(
        j_value=result.j_value,
        threshold=threshold,
        dof=result.dof,
        alpha=alpha,
        passed=result.j_value <= threshold,
    )


def largest_normalized_residual(
    ms: MeasurementSet,
    result: EstimationResult,
    case: GridCase,
    believed_status: LineStatus | None = None,
    scope: EstimationScope | None = None,
) -> tuple[int, float]:
    """Plan row and value of the largest normalized residual.

    Rows whose residual variance is below 1e-12 (critical measurements)
    are skipped; ties resolve to the lowest plan row.
    """
    status = believed_status if believed_status is not None else ms.status
    if scope is None:
        va_cols = [b for b in range(case.n_bus) if b != case.slack_bus]
        vm_cols = list(range(case.n_bus))
    else:
        va_cols = [b for b in scope.buses if b != scope.slack]
        vm_cols = list(scope.buses)
    rows = result.used_rows
    h = plan_jacobian(case, status, result.state, ms.plan, rows, va_cols, vm_cols)
    sig = ms.plan.sigmas[rows]
    r_cov = np.diag(sig**2)
    gain = h.T @ (h / sig[:, None] ** 2)
    try:
        gain_inv = np.linalg.inv(gain)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("singular gain matrix") from exc
    omega = r_cov - h @ gain_inv @ h.T
    diag = np.diag(omega)
    best_row, best_val = rows[0], -1.0
    for i, plan_row in enumerate(rows):
        if diag[i] < 1e-12:
            continue
        val = abs(result.residuals[i]) / np.sqrt(diag[i])
        if val > best_val + 1e-15:
            best_row, best_val = plan_row, val
    return best_row, float(best_val)
