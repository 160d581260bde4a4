"""DC optimal power flow on piecewise-linear production costs.

This is both the defender's re-dispatch engine and the inner problem
that the attack formulation embeds, so the block construction here is
shared: the attack builder imports pwl_blocks to guarantee the two
models price generation identically, tie-break perturbation included.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cases import GridCase
from .dcmodel import DcModel
from .lp import INF, LinearProgram, solve_lp

DEFAULT_SEGMENTS = 10

# deterministic tie-break scale relative to the costliest block slope
_PERTURB_REL = 1e-7


@dataclass
class GenBlocks:
    """Ascending marginal-cost blocks for one generator, per-unit MW."""

    gen: int
    pmin: float  # pu floor, always dispatched
    width: np.ndarray  # pu, per block
    slope: np.ndarray  # $/h per pu of block output, strictly increasing
    base_cost: float  # $/h at pmin


def _hash_unit(g: int, j: int) -> float:
    """Deterministic value in [-0.5, 0.5) keyed by generator and block."""
    h = (g * 2654435761 + j * 40503 + 12345) % (2**32)
    return h / 2**32 - 0.5


def pwl_blocks(
    case: GridCase, segments: int = DEFAULT_SEGMENTS, perturb: bool = True
) -> list[GenBlocks]:
    """Chord-slope linearization of every generator cost curve.

    Quadratics get `segments` equal blocks between pmin and pmax;
    linear curves are exact with one block. The perturbation nudges
    slopes so twin units and ties split deterministically; it is far
    smaller than any true slope gap, so block ordering survives.
    """
    if segments < 1:
        raise ValueError("segments must be >= 1")
    base = case.base_mva
    raw: list[tuple[int, np.ndarray, np.ndarray, float, float]] = []
    top = 0.0
    for g, (gen, cc) in enumerate(zip(case.generators, case.costs)):
        span = gen.pmax_mw - gen.pmin_mw
        if span <= 0.0:
            raw.append((g, np.empty(0), np.empty(0), gen.pmin_mw / base, cc.value(gen.pmin_mw)))
            continue
        n = 1 if cc.c2 == 0.0 else segments
        edges = np.linspace(gen.pmin_mw, gen.pmax_mw, n + 1)
        width = np.diff(edges) / base
        vals = np.array([cc.value(p) for p in edges])
        slope = np.diff(vals) / np.diff(edges) * base  # $/h per pu
        raw.append((g, width, slope, gen.pmin_mw / base, cc.value(gen.pmin_mw)))
        if slope.size:
            top = max(top, float(np.max(np.abs(slope))))
    eps = _PERTURB_REL * max(top, 1.0)
    out = []
    for g, width, slope, pmin, c0 in raw:
        if perturb and slope.size:
            slope = slope + eps * np.array([_hash_unit(g, j) for j in range(len(slope))])
        out.append(GenBlocks(g, pmin, width, slope, c0))
    return out


@dataclass
class DcOpfSolution:
    """LP optimum with conventional nonnegative inequality multipliers.

    Angles in radians, powers in MW. Duals keep the solver's per-unit
    money scale: lam is $/h per pu injection, mu and alpha likewise.
    """

    status: str
    p_g: np.ndarray = field(default_factory=lambda: np.empty(0))
    theta: np.ndarray = field(default_factory=lambda: np.empty(0))
    p_k: np.ndarray = field(default_factory=lambda: np.empty(0))
    cost: float = np.nan
    lam: np.ndarray = field(default_factory=lambda: np.empty(0))
    mu_up: np.ndarray = field(default_factory=lambda: np.empty(0))
    mu_lo: np.ndarray = field(default_factory=lambda: np.empty(0))
    alpha_up: list = field(default_factory=list)  # per gen, per block
    alpha_lo: list = field(default_factory=list)
    block_x: list = field(default_factory=list)  # pu block dispatch
    blocks: list = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "cost": None if np.isnan(self.cost) else self.cost,
            "p_g_mw": self.p_g.tolist(),
            "theta_rad": self.theta.tolist(),
            "p_k_mw": self.p_k.tolist(),
            "lambda": self.lam.tolist(),
            "mu_up": self.mu_up.tolist(),
            "mu_lo": self.mu_lo.tolist(),
        }


def solve_dcopf(
    case: GridCase,
    dc: DcModel,
    loads_mw: np.ndarray,
    flow_bias: np.ndarray | None = None,
    limit_all_rows: bool = False,
    segments: int = DEFAULT_SEGMENTS,
    perturb: bool = True,
    blocks: list[GenBlocks] | None = None,
) -> DcOpfSolution:
    """Least-cost dispatch on the DC model behind `dc`.

    flow_bias shifts every line-limit window by a state offset c, so
    the limits read on H2(theta+c) while balance stays on theta.
    limit_all_rows writes a limit row for every branch of the case;
    out-of-service branches then get capped on the flow a full-map
    observer believes they carry (their h2 row is topology-blind),
    which is exactly the inner problem the attack builder embeds.
    """
    base = case.base_mva
    n_b = case.n_bus
    n_br = case.n_branch
    loads = np.asarray(loads_mw, dtype=float) / base
    if loads.shape != (n_b,):
        raise ValueError("loads vector must have one entry per bus")
    if blocks is None:
        blocks = pwl_blocks(case, segments=segments, perturb=perturb)

    lp = LinearProgram(sense="min")
    theta_var = []
    for i in range(n_b):
        fixed = i == case.slack_bus
        theta_var.append(
            lp.add_variable(
                lb=0.0 if fixed else -INF,
                ub=0.0 if fixed else INF,
                name=f"th{i}",
            )
        )
    block_var: list[list[int]] = []
    for gb in blocks:
        cols = [
            lp.add_variable(lb=0.0, ub=float(w), cost=float(m), name=f"p{gb.gen}_{j}")
            for j, (w, m) in enumerate(zip(gb.width, gb.slope))
        ]
        block_var.append(cols)

    # nodal balance: sum of gen blocks - H1 theta = load - committed floor
    floor = np.zeros(n_b)
    for gb in blocks:
        floor[case.generators[gb.gen].bus] += gb.pmin
    for i in range(n_b):
        coeffs = {theta_var[j]: -dc.h1[i, j] for j in range(n_b) if dc.h1[i, j] != 0.0}
        for gb, cols in zip(blocks, block_var):
            if case.generators[gb.gen].bus == i:
                for cvar in cols:
                    coeffs[cvar] = coeffs.get(cvar, 0.0) + 1.0
        lp.add_constraint(coeffs, "=", float(loads[i] - floor[i]), name=f"bal{i}")

    bias = np.zeros(n_br)
    if flow_bias is not None:
        c = np.asarray(flow_bias, dtype=float)
        if c.shape != (n_b,):
            raise ValueError("flow_bias must be a bus-indexed state offset")
        bias = dc.h2 @ c
    rows_up = np.full(n_br, -1, dtype=np.int64)
    rows_lo = np.full(n_br, -1, dtype=np.int64)
    for k in range(n_br):
        if not limit_all_rows and dc.status.s[k] == 0:
            continue
        coeffs = {theta_var[j]: dc.h2[k, j] for j in range(n_b) if dc.h2[k, j] != 0.0}
        cap = dc.ratings_pu[k]
        rows_up[k] = lp.add_constraint(coeffs, "<=", float(cap - bias[k]), name=f"fu{k}")
        rows_lo[k] = lp.add_constraint(coeffs, ">=", float(-cap - bias[k]), name=f"fl{k}")

    sol = solve_lp(lp)
    if not sol.optimal:
        return DcOpfSolution(status=sol.status, blocks=blocks)

    theta = sol.x[:n_b]
    p_g = np.zeros(case.n_gen)
    block_x = []
    alpha_up = []
    alpha_lo = []
    for gb, cols in zip(blocks, block_var):
        xs = np.array([sol.x[c] for c in cols])
        block_x.append(xs)
        p_g[gb.gen] = (gb.pmin + xs.sum()) * base
        d = np.array([sol.reduced_costs[c] for c in cols])
        alpha_up.append(np.maximum(-d, 0.0))
        alpha_lo.append(np.maximum(d, 0.0))
    lam = sol.duals[:n_b]
    mu_up = np.zeros(n_br)
    mu_lo = np.zeros(n_br)
    for k in range(n_br):
        if rows_up[k] >= 0:
            mu_up[k] = max(-sol.duals[rows_up[k]], 0.0)
            mu_lo[k] = max(sol.duals[rows_lo[k]], 0.0)
    # physical branch flows: out-of-service rows carry nothing
    p_k = dc.status.s * (dc.h2 @ theta) * base
    cost = sol.objective + sum(gb.base_cost for gb in blocks)
    return DcOpfSolution(
        status="optimal",
        p_g=p_g,
        theta=theta,
        p_k=p_k,
        cost=float(cost),
        lam=lam,
        mu_up=mu_up,
        mu_lo=mu_lo,
        alpha_up=alpha_up,
        alpha_lo=alpha_lo,
        block_x=block_x,
        blocks=blocks,
    )
