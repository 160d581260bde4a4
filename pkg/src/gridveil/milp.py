"""Deterministic branch and bound over the bounded-variable simplex.

Node selection is best-bound with a FIFO tie break, branching picks
the most fractional binary (lowest index on ties) and explores the
down branch first, so identical inputs replay the same incumbent
sequence. Children are solved eagerly while the parent factorization
is still resident, which keeps refactorizations to about one per
branched node.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .lp import (
    INF,
    LinearProgram,
    LpError,
    LpSolution,
    SimplexEngine,
    Standardized,
)

_INT_TOL = 1e-6
_FEAS_TOL = 1e-6


@dataclass
class MixedIntegerProgram:
    lp: LinearProgram
    binaries: list[int] = field(default_factory=list)

    def mark_binary(self, j: int) -> None:
        if not 0 <= j < self.lp.n_vars:
            raise LpError(f"unknown variable index {j}")
        if self.lp.lb[j] < -_INT_TOL or self.lp.ub[j] > 1.0 + _INT_TOL:
            raise LpError(f"binary variable {j} needs bounds inside [0, 1]")
        if j not in self.binaries:
            self.binaries.append(j)
            self.binaries.sort()


@dataclass
class MilpConfig:
    gap_tol: float = 1e-6
    node_limit: int = 200_000
    branching: str = "most-fractional"  # or "priority"
    priority: list[int] | None = None
    initial_solutions: list | None = None
    tighten_rounds: int = 2
    int_tol: float = _INT_TOL
    # fathom anything that cannot beat this objective (caller's sense);
    # a run pruned by it and ending empty-handed reports status "cutoff"
    cutoff: float | None = None


@dataclass
class MilpSolution:
    status: str  # optimal | infeasible | unbounded | node_limit
    x: np.ndarray
    objective: float
    duals: np.ndarray
    reduced_costs: np.ndarray
    incumbent_log: list[tuple[int, float]]
    gap: float
    nodes: int
    incumbent_pool: list[np.ndarray] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _row_arrays(lp: LinearProgram):
    idx = [np.array([j for j, _ in row], dtype=np.int64) for row in lp.rows]
    val = [np.array([v for _, v in row]) for row in lp.rows]
    return idx, val


def _tighten_bounds(lp, binaries, lb, ub, rounds, int_tol):
    """Interval-arithmetic bound sweeps; returns False on proven empty."""
    idx, val = _row_arrays(lp)
    bin_mask = np.zeros(lp.n_vars, dtype=bool)
    bin_mask[binaries] = True
    for _ in range(rounds):
        changed = False
        for i in range(lp.n_rows):
            ji, vi = idx[i], val[i]
            if len(ji) == 0:
                continue
            sense = lp.row_sense[i]
            rhs = lp.rhs[i]
            lo = np.where(vi > 0, vi * lb[ji], vi * ub[ji])
            hi = np.where(vi > 0, vi * ub[ji], vi * lb[ji])
            # x_k <= (rhs - sum_min_others)/a_k style residual bounds
            if sense in ("<=", "="):
                smin = lo.sum()
                if np.isfinite(smin):
                    for t in range(len(ji)):
                        k = ji[t]
                        resid = smin - lo[t]
                        cap = (rhs - resid) / vi[t]
                        if vi[t] > 0 and cap < ub[k] - 1e-9:
                            ub[k] = cap
                            changed = True
                        elif vi[t] < 0 and cap > lb[k] + 1e-9:
                            lb[k] = cap
                            changed = True
            if sense in (">=", "="):
                smax = hi.sum()
                if np.isfinite(smax):
                    for t in range(len(ji)):
                        k = ji[t]
                        resid = smax - hi[t]
                        floor = (rhs - resid) / vi[t]
                        if vi[t] > 0 and floor > lb[k] + 1e-9:
                            lb[k] = floor
                            changed = True
                        elif vi[t] < 0 and floor < ub[k] - 1e-9:
                            ub[k] = floor
                            changed = True
        snap = bin_mask & (lb > int_tol) & (lb < 1.0)
        lb[snap] = 1.0
        snap = bin_mask & (ub < 1.0 - int_tol) & (ub > 0.0)
        ub[snap] = 0.0
        if np.any(lb > ub + 1e-9):
            return False
        np.minimum(lb, ub, out=lb)
        if not changed:
            break
    return True


def _check_candidate(lp, binaries, x, int_tol):
    """Arithmetic feasibility screen for caller-supplied solutions."""
    x = np.asarray(x, dtype=float)
    if x.shape != (lp.n_vars,):
        return None
    lb = np.asarray(lp.lb)
    ub = np.asarray(lp.ub)
    if np.any(x < np.where(np.isfinite(lb), lb, -INF) - _FEAS_TOL):
        return None
    if np.any(x > np.where(np.isfinite(ub), ub, INF) + _FEAS_TOL):
        return None
    for j in binaries:
        if abs(x[j] - round(x[j])) > int_tol:
            return None
    for row, sense, rhs in zip(lp.rows, lp.row_sense, lp.rhs):
        lhs = sum(v * x[j] for j, v in row)
        scale = 1.0 + abs(rhs)
        if sense == "<=" and lhs > rhs + _FEAS_TOL * scale:
            return None
        if sense == ">=" and lhs < rhs - _FEAS_TOL * scale:
            return None
        if sense == "=" and abs(lhs - rhs) > _FEAS_TOL * scale:
            return None
    return float(np.dot(lp.cost, x))


def _pick_branch_var(x, binaries, config):
    frac = {j: x[j] - np.floor(x[j]) for j in binaries}
    frac = {
        j: f
        for j, f in frac.items()
        if min(f, 1.0 - f) > config.int_tol
    }
    if not frac:
        return -1
    if config.branching == "priority" and config.priority:
        for j in config.priority:
            if j in frac:
                return j
    # most fractional: distance to 0.5; ties fall to lowest index
    return min(frac, key=lambda j: (abs(frac[j] - 0.5), j))


def solve_milp(mip: MixedIntegerProgram, config: MilpConfig | None = None) -> MilpSolution:
    config = config or MilpConfig()
    lp = mip.lp
    binaries = sorted(set(mip.binaries))
    for j in binaries:
        if lp.lb[j] < -config.int_tol or lp.ub[j] > 1.0 + config.int_tol:
            raise LpError(f"binary variable {j} needs bounds inside [0, 1]")
    sign = 1.0 if lp.sense == "min" else -1.0

    std = Standardized(lp)
    engine = SimplexEngine(std)
    root_lb = std.lb.copy()
    root_ub = std.ub.copy()
    # structural columns lead the standardized layout, so tightening
    # works on views and writes straight through to the node bounds
    ok = _tighten_bounds(
        lp,
        binaries,
        root_lb[: lp.n_vars],
        root_ub[: lp.n_vars],
        config.tighten_rounds,
        config.int_tol,
    )
    empty = np.empty(0)
    if not ok:
        return MilpSolution(
            "infeasible", empty, np.nan, empty, empty, [], np.nan, 0
        )

    incumbent_x = None
    incumbent_int = INF  # objective in internal min sense
    cut_int = config.cutoff * sign if config.cutoff is not None else INF
    clipped = False
    log: list[tuple[int, float]] = []
    pool: list[tuple[float, np.ndarray]] = []
    nodes = 0

    for cand in config.initial_solutions or []:
        obj = _check_candidate(lp, binaries, cand, config.int_tol)
        if obj is None:
            continue
        obj_int = obj * sign
        pool.append((obj_int, np.asarray(cand, dtype=float).copy()))
        if obj_int < incumbent_int - 1e-12:
            incumbent_int = obj_int
            incumbent_x = np.asarray(cand, dtype=float).copy()
            log.append((0, obj))

    root = engine.solve(lb=root_lb, ub=root_ub)
    nodes += 1
    if root.status == "infeasible":
        return MilpSolution(
            "infeasible", empty, np.nan, empty, empty, log, np.nan, nodes
        )
    if root.status == "unbounded":
        return MilpSolution(
            "unbounded", root.x, root.objective, empty, empty, log, np.nan, nodes
        )

    heap = []
    counter = 0

    def consider(sol):
        """Integral LP optimum becomes an incumbent candidate."""
        nonlocal incumbent_int, incumbent_x
        obj_int = sol.objective * sign
        pool.append((obj_int, sol.x.copy()))
        if obj_int < incumbent_int - 1e-12:
            incumbent_int = obj_int
            incumbent_x = sol.x.copy()
            log.append((nodes, sol.objective))

    def push(sol, lbn, ubn):
        nonlocal counter
        heapq.heappush(
            heap,
            (sol.objective * sign, counter, lbn, ubn, engine.snapshot(), sol.x.copy()),
        )
        counter += 1

    j0 = _pick_branch_var(root.x, binaries, config)
    if root.objective * sign >= cut_int:
        clipped = True
    elif j0 < 0:
        consider(root)
    else:
        push(root, root_lb, root_ub)

    status = "optimal"
    while heap:
        bound_int = heap[0][0]
        if bound_int >= cut_int:
            clipped = True
            break
        if bound_int >= incumbent_int - config.gap_tol:
            break
        if nodes >= config.node_limit:
            status = "node_limit"
            break
        _, _, lbn, ubn, snap, xrelax = heapq.heappop(heap)
        jb = _pick_branch_var(xrelax, binaries, config)
        if jb < 0:
            continue
        engine.load_basis(*snap)
        for fix in (0.0, 1.0):  # down branch first
            clb = lbn.copy()
            cub = ubn.copy()
            if fix == 0.0:
                cub[jb] = 0.0
            else:
                clb[jb] = 1.0
            child = engine.solve(lb=clb, ub=cub, warm=True)
            nodes += 1
            if child.status != "optimal":
                continue
            cint = child.objective * sign
            if cint >= cut_int:
                clipped = True
                continue
            if cint >= incumbent_int - config.gap_tol:
                continue
            if _pick_branch_var(child.x, binaries, config) < 0:
                consider(child)
            else:
                push(child, clb, cub)

    if incumbent_x is None:
        if status == "node_limit":
            return MilpSolution(
                "node_limit", empty, np.nan, empty, empty, log, INF, nodes
            )
        if clipped:
            return MilpSolution(
                "cutoff", empty, np.nan, empty, empty, log, np.nan, nodes
            )
        return MilpSolution(
            "infeasible", empty, np.nan, empty, empty, log, np.nan, nodes
        )

    remaining = [bound_int for bound_int, *_ in heap]
    best_bound = min(remaining) if remaining else incumbent_int
    gap = max(0.0, incumbent_int - min(best_bound, incumbent_int))

    # exact vertex and duals on the incumbent's integer face
    flb = std.lb.copy()
    fub = std.ub.copy()
    for j in binaries:
        v = round(float(incumbent_x[j]))
        flb[j] = v
        fub[j] = v
    final = engine.solve(lb=flb, ub=fub, warm=True)
    if final.status != "optimal":
        # numerically marginal face; fall back to the raw incumbent
        final = LpSolution(
            status="optimal",
            x=incumbent_x,
            objective=incumbent_int * sign,
            duals=empty,
            reduced_costs=empty,
        )

    tied = [
        x for obj_int, x in pool if obj_int <= incumbent_int + 1e-6
    ]
    seen = set()
    uniq = []
    for x in tied:
        key = tuple(int(round(x[j])) for j in binaries)
        if key not in seen:
            seen.add(key)
            uniq.append(x)

    return MilpSolution(
        status=status,
        x=final.x,
        objective=final.objective,
        duals=final.duals,
        reduced_costs=final.reduced_costs,
        incumbent_log=log,
        gap=gap,
        nodes=nodes,
        incumbent_pool=uniq,
    )
