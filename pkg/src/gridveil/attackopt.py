"""Planner for coordinated trip-and-spoof attacks on a DC grid model.

Step 1 answers "which line do I trip, and how do I tilt the estimated
state, so the target line carries as much physical flow as possible
while the control room sees nothing wrong". The bilevel structure
(attacker on top, the operator's re-dispatch below) is collapsed into
one mixed-integer program by replacing the dispatch problem with its
optimality conditions; complementarity is linearized with big-M
switches. Step 2 then finds the smallest state tilt that, applied at
the moment of the trip, steers the operator into exactly the dispatch
Step 1 planned around.

Everything inside the programs is per-unit: flows in pu on the case
base, angles in radians, cost slopes scaled by the MVA base so dual
magnitudes stay far below the big-M caps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from types import SimpleNamespace

import numpy as np

from .cases import GridCase
from .dcmodel import DcModel, LineStatus, build_dc_model, islanding_lines
from .dcopf import DEFAULT_SEGMENTS, GenBlocks, pwl_blocks, solve_dcopf
from .lp import AT_LB, AT_UB, INF, SimplexEngine, Standardized, LinearProgram, solve_lp
from .milp import MilpConfig, MilpSolution, MixedIntegerProgram, solve_milp
from .subgraph import CENTER_TOL

__all__ = [
    "AttackOptError",
    "AttackParams",
    "KktReport",
    "Step1Model",
    "Step1Solution",
    "Step2Model",
    "Step2Solution",
    "build_step1",
    "build_step2",
    "solve_step1",
    "solve_step2",
    "switch_on_optimal_face",
    "verify_kkt",
]

_BIND_TOL = 1e-9
_DUAL_TOL = 1e-9


class AttackOptError(RuntimeError):
    """Bad parameters, or a solve whose result failed verification."""


@dataclass
class AttackParams:
    """Knobs of the planning problem.

    target_line: branch whose flow the plan maximizes.
    base_flow_mw: pre-attack flow on it; fixes the push direction and
        the default l1 weight (1% of the base flow magnitude, per-unit).
    tau: allowed fractional load shift seen by the control room.
    n_t: number of lines the plan physically trips.
    n_1: l1 budget on the state tilt, radians.
    zeta: objective weight on the l1 surrogate; None derives it.
    m_big: complementarity cap; None picks max(1e4, 100 * m_1).
    m_1: trip-linearization constant; None picks 2 * max|b| * theta_span.
    theta_span: angle box half-width, radians.
    segments: cost-curve blocks per quadratic generator.
    load_buses: buses allowed to carry a tilt; None means every bus
        with positive active load.
    """

    target_line: int
    base_flow_mw: float
    tau: float = 0.10
    n_t: int = 1
    n_1: float = 0.06
    zeta: float | None = None
    m_big: float | None = None
    m_1: float | None = None
    theta_span: float = 1.0
    segments: int = DEFAULT_SEGMENTS
    load_buses: tuple[int, ...] | None = None


def _resolve_params(case: GridCase, dc_bar: DcModel, p: AttackParams) -> AttackParams:
    if not 0 <= p.target_line < case.n_branch:
        raise AttackOptError(f"target line {p.target_line} out of range")
    if dc_bar.status.s[p.target_line] == 0:
        raise AttackOptError(f"target line {p.target_line} is out of service")
    if not 0.0 < p.tau < 1.0:
        raise AttackOptError(f"tau must sit strictly inside (0, 1), got {p.tau}")
    if not (isinstance(p.n_t, (int, np.integer)) and p.n_t >= 1):
        raise AttackOptError(f"n_t must be a positive integer, got {p.n_t!r}")
    if p.n_1 <= 0.0:
        raise AttackOptError(f"n_1 must be positive, got {p.n_1}")
    if p.theta_span <= 0.0:
        raise AttackOptError("theta_span must be positive")
    if p.segments < 1:
        raise AttackOptError("segments must be >= 1")
    m_1 = p.m_1
    if m_1 is None:
        m_1 = 2.0 * float(np.max(np.abs(dc_bar.b_series))) * p.theta_span
    if m_1 <= 0.0:
        raise AttackOptError("m_1 must be positive")
    m_big = p.m_big
    if m_big is None:
        m_big = max(1e4, 100.0 * m_1)
    if m_big < 100.0 * m_1:
        raise AttackOptError(
            f"m_big={m_big:g} too small for m_1={m_1:g}; need m_big >= 100*m_1"
        )
    zeta = p.zeta
    if zeta is None:
        zeta = 0.01 * abs(p.base_flow_mw) / case.base_mva
    if zeta < 0.0:
        raise AttackOptError("zeta must be nonnegative")
    loads = p.load_buses
    if loads is None:
        loads = tuple(case.load_buses())
    else:
        loads = tuple(int(b) for b in loads)
        pd = case.p_load_mw()
        for b in loads:
            if not 0 <= b < case.n_bus:
                raise AttackOptError(f"load bus {b} out of range")
            if pd[b] <= 0.0:
                raise AttackOptError(f"bus {b} carries no load")
    return replace(
        p, m_1=float(m_1), m_big=float(m_big), zeta=float(zeta), load_buses=loads
    )


@dataclass
class _Step1Vars:
    """Column indices of every model variable, in creation order."""

    th: np.ndarray
    pk: np.ndarray
    pb: list[np.ndarray]
    c: np.ndarray  # -1 where the bus carries no tilt variable
    u: np.ndarray
    s: np.ndarray
    lam: np.ndarray
    mu_up: np.ndarray
    mu_lo: np.ndarray
    a_up: list[np.ndarray]
    a_lo: list[np.ndarray]
    b_up: np.ndarray
    b_lo: np.ndarray
    g_up: np.ndarray
    g_lo: np.ndarray
    d_mu_up: np.ndarray
    d_mu_lo: np.ndarray
    d_a_up: list[np.ndarray]
    d_a_lo: list[np.ndarray]


@dataclass
class Step1Model:
    """Built single-level program plus the bookkeeping to read it back.

    mip is ready for solve_milp; v maps model variables to columns,
    slopes holds the per-unit-scaled marginal costs the dispatch block
    was embedded with.
    """

    mip: MixedIntegerProgram
    case: GridCase
    dc_bar: DcModel
    params: AttackParams
    blocks: list[GenBlocks]
    v: _Step1Vars
    caps: np.ndarray
    sign: float
    slopes: list[np.ndarray]
    h1_full: np.ndarray
    candidates: list[int]
    excluded: list[int]
    forced_line: int | None
    floor: np.ndarray  # committed pu output below the block range, per bus


def build_step1(
    case: GridCase,
    dc_bar: DcModel,
    params: AttackParams,
    forced_line: int | None = None,
) -> Step1Model:
    """Assemble the single-level trip-and-tilt program.

    dc_bar carries the topology the control room believes in. Lines
    whose loss would split the network, and the target itself, are
    pinned in service; forced_line pins one candidate to tripped for
    optimal-face probes. The returned model wraps the program together
    with index maps; hand model.mip to solve_milp or use solve_step1.
    """
    p = _resolve_params(case, dc_bar, params)
    base = case.base_mva
    n_b, n_br = case.n_bus, case.n_branch
    blocks = pwl_blocks(case, segments=p.segments)
    slopes = [gb.slope / base for gb in blocks]
    caps = dc_bar.ratings_pu.copy()
    pd = case.p_load_mw() / base
    sign = 1.0 if p.base_flow_mw >= 0.0 else -1.0
    h2 = dc_bar.h2
    a_kn = dc_bar.a_kn
    h1_full = dc_bar.h1  # believed topology stays fixed for the whole plan
    live = [k for k in range(n_br) if dc_bar.status.s[k] == 1]

    islanders = set(islanding_lines(case, dc_bar.status))
    excluded = sorted({p.target_line} | islanders)
    candidates = [k for k in live if k not in excluded]
    if forced_line is not None:
        if forced_line not in candidates:
            raise AttackOptError(f"line {forced_line} cannot be tripped")
        candidates = [forced_line]

    span = p.theta_span
    m1 = p.m_1
    # per-line window: |flow| on line k can never exceed 2|b_k|*span inside the
    # angle box, so the switching never needs more room than that
    w1 = np.minimum(m1, 2.0 * np.abs(dc_bar.b_series) * span)
    m = p.m_big
    lp = LinearProgram(sense="max")

    def vec(maker) -> np.ndarray:
        return np.array([maker(i) for i in range(n_b)], dtype=np.int64)

    th = vec(
        lambda i: lp.add_variable(
            lb=0.0 if i == case.slack_bus else -span,
            ub=0.0 if i == case.slack_bus else span,
            name=f"th{i}",
        )
    )
    pk = np.array(
        [
            lp.add_variable(lb=-float(w1[k]), ub=float(w1[k]), name=f"pk{k}")
            for k in range(n_br)
        ],
        dtype=np.int64,
    )
    pb = [
        np.array(
            [
                lp.add_variable(lb=0.0, ub=float(w), name=f"pb{gb.gen}_{j}")
                for j, w in enumerate(gb.width)
            ],
            dtype=np.int64,
        )
        for gb in blocks
    ]
    c = np.full(n_b, -1, dtype=np.int64)
    u = np.full(n_b, -1, dtype=np.int64)
    for b in p.load_buses:
        c[b] = lp.add_variable(lb=-p.n_1, ub=p.n_1, name=f"c{b}")
    for b in p.load_buses:
        u[b] = lp.add_variable(lb=0.0, ub=p.n_1, cost=-p.zeta, name=f"u{b}")
    lp.cost[pk[p.target_line]] = sign

    s = np.empty(n_br, dtype=np.int64)
    for k in range(n_br):
        if k in excluded or dc_bar.status.s[k] == 0 or k not in candidates:
            pin = float(dc_bar.status.s[k])
            s[k] = lp.add_variable(lb=pin, ub=pin, name=f"s{k}")
        else:
            s[k] = lp.add_variable(lb=0.0, ub=1.0, name=f"s{k}")
    if forced_line is not None:
        lp.lb[s[forced_line]] = 0.0
        lp.ub[s[forced_line]] = 0.0

    lam = vec(lambda i: lp.add_variable(lb=-m, ub=m, name=f"lam{i}"))
    mk = lambda tag: np.array(
        [lp.add_variable(lb=0.0, ub=m, name=f"{tag}{k}") for k in range(n_br)],
        dtype=np.int64,
    )
    mu_up, mu_lo = mk("mup"), mk("mulo")
    a_up = [
        np.array(
            [lp.add_variable(0.0, m, name=f"aup{gb.gen}_{j}") for j in range(len(gb.width))],
            dtype=np.int64,
        )
        for gb in blocks
    ]
    a_lo = [
        np.array(
            [lp.add_variable(0.0, m, name=f"alo{gb.gen}_{j}") for j in range(len(gb.width))],
            dtype=np.int64,
        )
        for gb in blocks
    ]
    b_up, b_lo, g_up, g_lo = mk("bup"), mk("blo"), mk("gup"), mk("glo")
    d_mu_up, d_mu_lo = mk("dmup"), mk("dmulo")
    for k in range(n_br):
        for j in (d_mu_up[k], d_mu_lo[k]):
            lp.ub[j] = 1.0
    d_a_up = [
        np.array(
            [lp.add_variable(0.0, 1.0, name=f"daup{gb.gen}_{j}") for j in range(len(gb.width))],
            dtype=np.int64,
        )
        for gb in blocks
    ]
    d_a_lo = [
        np.array(
            [lp.add_variable(0.0, 1.0, name=f"dalo{gb.gen}_{j}") for j in range(len(gb.width))],
            dtype=np.int64,
        )
        for gb in blocks
    ]

    # stationarity bookkeeping: inner variable column -> [(dual column, coef)]
    stat: dict[int, list[tuple[int, float]]] = {}

    def dualized(dual_col: int, coeffs: dict[int, float], rhs: float, name: str):
        lp.add_constraint(coeffs, "<=", rhs, name=name)
        for col, a in coeffs.items():
            if col in inner:
                stat.setdefault(col, []).append((dual_col, a))

    inner = set(int(j) for j in th) | set(int(j) for j in pk)
    for cols in pb:
        inner |= set(int(j) for j in cols)

    floor = np.zeros(n_b)
    for gb in blocks:
        floor[case.generators[gb.gen].bus] += gb.pmin

    # operator's balance: block output minus branch withdrawals meets load
    for n in range(n_b):
        coeffs: dict[int, float] = {}
        for gb, cols in zip(blocks, pb):
            if case.generators[gb.gen].bus == n:
                for col in cols:
                    coeffs[int(col)] = 1.0
        for k in range(n_br):
            if a_kn[n, k] != 0.0:
                coeffs[int(pk[k])] = -float(a_kn[n, k])
        lp.add_constraint(coeffs, "=", float(pd[n] - floor[n]), name=f"bal{n}")
        for col, a in coeffs.items():
            if col in inner:
                stat.setdefault(col, []).append((int(lam[n]), a))

    # the room checks tilted flows against ratings on every branch it
    # believes is live, which is all of them
    for k in range(n_br):
        up: dict[int, float] = {}
        for i in range(n_b):
            if h2[k, i] != 0.0:
                up[int(th[i])] = float(h2[k, i])
                if c[i] >= 0:
                    up[int(c[i])] = float(h2[k, i])
        lo = {col: -a for col, a in up.items()}
        dualized(int(mu_up[k]), up, float(caps[k]), f"fu{k}")
        dualized(int(mu_lo[k]), lo, float(caps[k]), f"fl{k}")

    # trip switching: s=1 ties the physical flow to the angles, s=0 zeroes it
    for k in range(n_br):
        row_th = {int(th[i]): float(h2[k, i]) for i in range(n_b) if h2[k, i] != 0.0}
        wk = float(w1[k])
        lo = dict(row_th)
        lo[int(pk[k])] = -1.0
        lo[int(s[k])] = wk
        dualized(int(b_lo[k]), lo, wk, f"swbl{k}")
        hi = {col: -a for col, a in row_th.items()}
        hi[int(pk[k])] = 1.0
        hi[int(s[k])] = wk
        dualized(int(b_up[k]), hi, wk, f"swbu{k}")
        dualized(int(g_lo[k]), {int(pk[k]): -1.0, int(s[k]): -wk}, 0.0, f"swgl{k}")
        dualized(int(g_up[k]), {int(pk[k]): 1.0, int(s[k]): -wk}, 0.0, f"swgu{k}")

    # block limits live on the variable box; their duals enter by hand
    for cols, au, al in zip(pb, a_up, a_lo):
        for col, ju, jl in zip(cols, au, al):
            stat.setdefault(int(col), []).append((int(ju), 1.0))
            stat.setdefault(int(col), []).append((int(jl), -1.0))

    # dispatch optimality: the transposed duals cancel the cost gradient
    for i in range(n_b):
        if i == case.slack_bus:
            continue
        lp.add_constraint(
            {dual: a for dual, a in stat.get(int(th[i]), [])}, "=", 0.0, f"stth{i}"
        )
    for k in range(n_br):
        lp.add_constraint(
            {dual: a for dual, a in stat[int(pk[k])]}, "=", 0.0, f"stpk{k}"
        )
    for gb, cols, sl in zip(blocks, pb, slopes):
        for j, col in enumerate(cols):
            lp.add_constraint(
                {dual: a for dual, a in stat[int(col)]},
                "=",
                -float(sl[j]),
                f"stpb{gb.gen}_{j}",
            )

    # complementarity: a positive dual forces its row tight, via one
    # binary per side; the slack-side cap 2*rating is exact because both
    # flow rows stay feasible
    for k in range(n_br):
        cap = float(caps[k])
        up_bind = {}
        lo_bind = {}
        for i in range(n_b):
            if h2[k, i] != 0.0:
                up_bind[int(th[i])] = -float(h2[k, i])
                lo_bind[int(th[i])] = float(h2[k, i])
                if c[i] >= 0:
                    up_bind[int(c[i])] = -float(h2[k, i])
                    lo_bind[int(c[i])] = float(h2[k, i])
        up_bind[int(d_mu_up[k])] = 2.0 * cap
        lo_bind[int(d_mu_lo[k])] = 2.0 * cap
        lp.add_constraint({int(mu_up[k]): 1.0, int(d_mu_up[k]): -m}, "<=", 0.0, f"csmu{k}")
        lp.add_constraint(up_bind, "<=", cap, f"csmub{k}")
        lp.add_constraint({int(mu_lo[k]): 1.0, int(d_mu_lo[k]): -m}, "<=", 0.0, f"csml{k}")
        lp.add_constraint(lo_bind, "<=", cap, f"csmlb{k}")
        lp.add_constraint(
            {int(d_mu_up[k]): 1.0, int(d_mu_lo[k]): 1.0}, "<=", 1.0, f"csmx{k}"
        )

    for gb, cols, au, al, du, dl in zip(blocks, pb, a_up, a_lo, d_a_up, d_a_lo):
        for j, w in enumerate(gb.width):
            w = float(w)
            lp.add_constraint(
                {int(au[j]): 1.0, int(du[j]): -m}, "<=", 0.0, f"csau{gb.gen}_{j}"
            )
            lp.add_constraint(
                {int(cols[j]): -1.0, int(du[j]): w}, "<=", 0.0, f"csaub{gb.gen}_{j}"
            )
            lp.add_constraint(
                {int(al[j]): 1.0, int(dl[j]): -m}, "<=", 0.0, f"csal{gb.gen}_{j}"
            )
            lp.add_constraint(
                {int(cols[j]): 1.0, int(dl[j]): w}, "<=", w, f"csalb{gb.gen}_{j}"
            )
            lp.add_constraint(
                {int(du[j]): 1.0, int(dl[j]): 1.0}, "<=", 1.0, f"csax{gb.gen}_{j}"
            )

    # trip duals ride on the trip binary itself: in service keeps the
    # switching pair tight (flow equals angles) so beta is free to act,
    # tripped keeps the zero-flow pair tight for gamma
    for k in range(n_br):
        lp.add_constraint({int(b_up[k]): 1.0, int(s[k]): -m}, "<=", 0.0, f"lkbu{k}")
        lp.add_constraint({int(b_lo[k]): 1.0, int(s[k]): -m}, "<=", 0.0, f"lkbl{k}")
        lp.add_constraint({int(g_up[k]): 1.0, int(s[k]): m}, "<=", m, f"lkgu{k}")
        lp.add_constraint({int(g_lo[k]): 1.0, int(s[k]): m}, "<=", m, f"lkgl{k}")

    # what the room reads as load must stay inside the believable band
    for n in range(n_b):
        coeffs = {}
        for i in range(n_b):
            if h1_full[n, i] != 0.0:
                coeffs[int(th[i])] = float(h1_full[n, i])
                if c[i] >= 0:
                    coeffs[int(c[i])] = float(h1_full[n, i])
        for k in range(n_br):
            if a_kn[n, k] != 0.0:
                coeffs[int(pk[k])] = coeffs.get(int(pk[k]), 0.0) - float(a_kn[n, k])
        if pd[n] > 0.0:
            lp.add_constraint(coeffs, "<=", float(p.tau * pd[n]), f"bdu{n}")
            lp.add_constraint(
                {col: -a for col, a in coeffs.items()}, "<=", float(p.tau * pd[n]), f"bdl{n}"
            )
        else:
            lp.add_constraint(coeffs, "=", 0.0, f"bdz{n}")

    for b in p.load_buses:
        lp.add_constraint({int(c[b]): 1.0, int(u[b]): -1.0}, "<=", 0.0, f"l1u{b}")
        lp.add_constraint({int(c[b]): -1.0, int(u[b]): -1.0}, "<=", 0.0, f"l1l{b}")
    lp.add_constraint(
        {int(u[b]): 1.0 for b in p.load_buses}, "<=", float(p.n_1), "l1sum"
    )
    lp.add_constraint(
        {int(s[k]): 1.0 for k in live}, "=", float(len(live) - p.n_t), "trips"
    )

    # merit-order fill: with strictly increasing block slopes every
    # optimal dispatch fills a generator's blocks left to right, so the
    # full/empty switches are staircases and a block can only open once
    # its cheaper neighbour is full
    for gb, cols, du, dl in zip(blocks, pb, d_a_up, d_a_lo):
        for j in range(len(gb.width) - 1):
            lp.add_constraint(
                {int(du[j + 1]): 1.0, int(du[j]): -1.0}, "<=", 0.0, f"cha{gb.gen}_{j}"
            )
            lp.add_constraint(
                {int(dl[j]): 1.0, int(dl[j + 1]): -1.0}, "<=", 0.0, f"chb{gb.gen}_{j}"
            )
            lp.add_constraint(
                {int(cols[j + 1]): 1.0, int(du[j]): -float(gb.width[j + 1])},
                "<=",
                0.0,
                f"chc{gb.gen}_{j}",
            )

    # reachability cut: physical target flow is the believed flow minus
    # the tilt across the target's own ends, and believed flow is rated
    tl = p.target_line
    fb, tb = case.branches[tl].from_bus, case.branches[tl].to_bus
    b_l = float(dc_bar.b_series[tl])
    dream = {int(pk[tl]): sign}
    for e in (fb, tb):
        if u[e] >= 0:
            dream[int(u[e])] = dream.get(int(u[e]), 0.0) - b_l
    lp.add_constraint(dream, "<=", float(caps[tl]), "reach")

    mip = MixedIntegerProgram(lp)
    for k in range(n_br):
        if lp.lb[s[k]] < lp.ub[s[k]]:
            mip.mark_binary(int(s[k]))
        mip.mark_binary(int(d_mu_up[k]))
        mip.mark_binary(int(d_mu_lo[k]))
    for du, dl in zip(d_a_up, d_a_lo):
        for j in range(len(du)):
            mip.mark_binary(int(du[j]))
            mip.mark_binary(int(dl[j]))

    v = _Step1Vars(
        th=th, pk=pk, pb=pb, c=c, u=u, s=s, lam=lam, mu_up=mu_up, mu_lo=mu_lo,
        a_up=a_up, a_lo=a_lo, b_up=b_up, b_lo=b_lo, g_up=g_up, g_lo=g_lo,
        d_mu_up=d_mu_up, d_mu_lo=d_mu_lo, d_a_up=d_a_up, d_a_lo=d_a_lo,
    )
    return Step1Model(
        mip=mip, case=case, dc_bar=dc_bar, params=p, blocks=blocks, v=v,
        caps=caps, sign=sign, slopes=slopes, h1_full=h1_full,
        candidates=candidates, excluded=excluded, forced_line=forced_line,
        floor=floor,
    )


@dataclass
class Step1Solution:
    """Planned trip and tilt with the dispatch block that certifies it."""

    status: str
    objective: float = float("nan")
    target_flow_mw: float = float("nan")
    believed_flow_mw: float = float("nan")
    s: LineStatus | None = None
    switching_lines: list[int] = field(default_factory=list)
    c: np.ndarray = field(default_factory=lambda: np.empty(0))
    u: np.ndarray = field(default_factory=lambda: np.empty(0))
    theta: np.ndarray = field(default_factory=lambda: np.empty(0))
    p_g: np.ndarray = field(default_factory=lambda: np.empty(0))
    p_k: np.ndarray = field(default_factory=lambda: np.empty(0))
    block_x: list = field(default_factory=list)
    lam: np.ndarray = field(default_factory=lambda: np.empty(0))
    mu_up: np.ndarray = field(default_factory=lambda: np.empty(0))
    mu_lo: np.ndarray = field(default_factory=lambda: np.empty(0))
    alpha_up: list = field(default_factory=list)
    alpha_lo: list = field(default_factory=list)
    beta_up: np.ndarray = field(default_factory=lambda: np.empty(0))
    beta_lo: np.ndarray = field(default_factory=lambda: np.empty(0))
    gamma_up: np.ndarray = field(default_factory=lambda: np.empty(0))
    gamma_lo: np.ndarray = field(default_factory=lambda: np.empty(0))
    deltas: dict = field(default_factory=dict)
    center_buses: list[int] = field(default_factory=list)
    l1_used: float = 0.0
    l0_used: int = 0
    inner_cost: float = float("nan")
    gap: float = float("nan")
    nodes: int = 0
    tie_switching_lines: list = field(default_factory=list)
    dual_cap_hit: bool = False

    @property
    def feasible(self) -> bool:
        return self.status in ("optimal", "node_limit")

    def to_json(self) -> dict:
        out = {
            "status": self.status,
            "objective": None if np.isnan(self.objective) else self.objective,
            "target_flow_mw": None
            if np.isnan(self.target_flow_mw)
            else self.target_flow_mw,
            "believed_flow_mw": None
            if np.isnan(self.believed_flow_mw)
            else self.believed_flow_mw,
            "switching_lines": [int(k) for k in self.switching_lines],
            "center_buses": [int(b) for b in self.center_buses],
            "l1_used": self.l1_used,
            "l0_used": self.l0_used,
            "gap": None if np.isnan(self.gap) else self.gap,
            "nodes": self.nodes,
            "tie_switching_lines": [
                [int(k) for k in t] for t in self.tie_switching_lines
            ],
            "dual_cap_hit": self.dual_cap_hit,
        }
        if self.feasible:
            out.update(
                {
                    "c": self.c.tolist(),
                    "u": self.u.tolist(),
                    "theta": self.theta.tolist(),
                    "p_g_mw": self.p_g.tolist(),
                    "p_k_mw": self.p_k.tolist(),
                    "s": [int(x) for x in self.s.s],
                    "inner_cost": self.inner_cost,
                }
            )
        return out


def _extract_step1(model: Step1Model, ms: MilpSolution) -> Step1Solution:
    case, v, p = model.case, model.v, model.params
    base = case.base_mva
    x = ms.x
    n_b, n_br = case.n_bus, case.n_branch
    theta = x[v.th]
    pkv = x[v.pk]
    s_arr = np.array([int(round(x[j])) for j in v.s], dtype=np.int8)
    status = LineStatus(s_arr)
    trips = [
        int(k)
        for k in range(n_br)
        if model.dc_bar.status.s[k] == 1 and s_arr[k] == 0
    ]
    cv = np.zeros(n_b)
    uv = np.zeros(n_b)
    for b in range(n_b):
        if v.c[b] >= 0:
            cv[b] = x[v.c[b]]
            uv[b] = x[v.u[b]]
    p_g = np.zeros(case.n_gen)
    block_x = []
    for gb, cols in zip(model.blocks, v.pb):
        xs = x[cols] if len(cols) else np.empty(0)
        block_x.append(xs)
        p_g[gb.gen] = (gb.pmin + xs.sum()) * base
    inner = sum(
        float(sl @ xs) for sl, xs in zip(model.slopes, block_x) if len(xs)
    ) * base + sum(gb.base_cost for gb in model.blocks)
    deltas = {
        "mu_up": np.array([round(float(x[j])) for j in v.d_mu_up], dtype=np.int8),
        "mu_lo": np.array([round(float(x[j])) for j in v.d_mu_lo], dtype=np.int8),
        "a_up": [
            np.array([round(float(x[j])) for j in cols], dtype=np.int8)
            for cols in v.d_a_up
        ],
        "a_lo": [
            np.array([round(float(x[j])) for j in cols], dtype=np.int8)
            for cols in v.d_a_lo
        ],
    }
    duals_flat = np.concatenate(
        [x[v.lam], x[v.mu_up], x[v.mu_lo], x[v.b_up], x[v.b_lo], x[v.g_up], x[v.g_lo]]
        + [x[cols] for cols in v.a_up if len(cols)]
        + [x[cols] for cols in v.a_lo if len(cols)]
    )
    cap_hit = bool(np.max(np.abs(duals_flat), initial=0.0) >= 0.999 * p.m_big)
    center = [int(b) for b in np.flatnonzero(np.abs(cv) > 1e-6)]
    tl = p.target_line
    believed = float(model.dc_bar.h2[tl] @ (theta + cv)) * base
    ties = []
    seen = {tuple(trips)}
    for alt in ms.incumbent_pool:
        alt_trips = tuple(
            int(k)
            for k in range(n_br)
            if model.dc_bar.status.s[k] == 1 and round(float(alt[v.s[k]])) == 0
        )
        if alt_trips not in seen:
            seen.add(alt_trips)
            ties.append(list(alt_trips))
    return Step1Solution(
        status=ms.status,
        objective=float(ms.objective),
        target_flow_mw=float(pkv[tl]) * base,
        believed_flow_mw=believed,
        s=status,
        switching_lines=trips,
        c=cv,
        u=uv,
        theta=theta,
        p_g=p_g,
        p_k=pkv * base,
        block_x=block_x,
        lam=x[v.lam],
        mu_up=x[v.mu_up],
        mu_lo=x[v.mu_lo],
        alpha_up=[x[cols] if len(cols) else np.empty(0) for cols in v.a_up],
        alpha_lo=[x[cols] if len(cols) else np.empty(0) for cols in v.a_lo],
        beta_up=x[v.b_up],
        beta_lo=x[v.b_lo],
        gamma_up=x[v.g_up],
        gamma_lo=x[v.g_lo],
        deltas=deltas,
        center_buses=center,
        l1_used=float(np.sum(np.abs(cv))),
        l0_used=len(center),
        inner_cost=inner,
        gap=float(ms.gap),
        nodes=ms.nodes,
        tie_switching_lines=ties,
        dual_cap_hit=cap_hit,
    )


@dataclass
class KktReport:
    """Optimality audit of a Step-1 solution, recomputed from raw data.

    The audit never trusts the solver's binaries: rows, slacks and
    products are rebuilt from the case matrices and the solution's
    continuous fields alone.
    """

    stationarity_inf: float
    cs_max_product: float
    dual_sign_min: float
    primal_inf: float
    band_inf: float
    balance_identity_inf: float
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "stationarity_inf": self.stationarity_inf,
            "cs_max_product": self.cs_max_product,
            "dual_sign_min": self.dual_sign_min,
            "primal_inf": self.primal_inf,
            "band_inf": self.band_inf,
            "balance_identity_inf": self.balance_identity_inf,
            "violations": list(self.violations),
        }


def verify_kkt(
    sol: Step1Solution,
    model: Step1Model,
    stat_tol: float = 1e-5,
    cs_tol: float = 1e-5,
    sign_tol: float = 1e-8,
) -> KktReport:
    """Audit a planned trip-and-tilt against the dispatch conditions."""
    case, p = model.case, model.params
    base = case.base_mva
    dc = model.dc_bar
    h2, a_kn = dc.h2, dc.a_kn
    n_b, n_br = case.n_bus, case.n_branch
    bad: list[str] = []
    if not sol.feasible or sol.s is None:
        return KktReport(
            np.nan, np.nan, np.nan, np.nan, np.nan, np.nan, ["no solution to audit"]
        )

    theta = sol.theta
    pk = sol.p_k / base
    cv = sol.c
    s_arr = sol.s.s.astype(float)
    pd = case.p_load_mw() / base
    caps = model.caps
    w1 = np.minimum(p.m_1, 2.0 * np.abs(model.dc_bar.b_series) * p.theta_span)

    believed = h2 @ (theta + cv)
    slack_up = caps - believed
    slack_lo = caps + believed
    sw_lo = w1 * (1.0 - s_arr) - (h2 @ theta - pk)  # slack of the -pk side
    sw_up = w1 * (1.0 - s_arr) - (pk - h2 @ theta)
    g_lo_sl = w1 * s_arr + pk
    g_up_sl = w1 * s_arr - pk

    primal = 0.0
    inj = np.zeros(n_b)
    for gb, xs in zip(model.blocks, sol.block_x):
        inj[case.generators[gb.gen].bus] += gb.pmin + (xs.sum() if len(xs) else 0.0)
    balance = inj - a_kn @ pk - pd
    primal = max(primal, float(np.max(np.abs(balance))))
    for arr, tag in (
        (slack_up, "flow upper"),
        (slack_lo, "flow lower"),
        (sw_lo, "switch lower"),
        (sw_up, "switch upper"),
        (g_lo_sl, "trip lower"),
        (g_up_sl, "trip upper"),
    ):
        worst = float(np.min(arr))
        primal = max(primal, -worst)
        if worst < -1e-6:
            bad.append(f"{tag} row violated by {-worst:.2e}")
    for gb, xs in zip(model.blocks, sol.block_x):
        if len(xs):
            over = float(np.max(np.maximum(xs - gb.width, -xs), initial=0.0))
            primal = max(primal, over)
            if over > 1e-8:
                bad.append(f"block box violated on generator {gb.gen}")
    if float(np.max(np.abs(balance))) > 1e-6:
        bad.append("nodal balance broken")

    # band and budgets
    shift = model.h1_full @ (theta + cv) - a_kn @ pk
    band = 0.0
    for n in range(n_b):
        if pd[n] > 0.0:
            band = max(band, abs(shift[n]) - p.tau * pd[n])
        else:
            band = max(band, abs(shift[n]))
    if band > 1e-6:
        bad.append(f"load-shift band violated by {band:.2e}")
    if float(np.sum(np.abs(cv))) > p.n_1 + 1e-8:
        bad.append("l1 budget exceeded")
    live_mask = dc.status.s == 1
    n_trips = int(np.sum(live_mask & (sol.s.s == 0)))
    if n_trips != p.n_t:
        bad.append(f"trip count {n_trips} != {p.n_t}")

    # stationarity, rebuilt from the transposed rows
    mu_net = sol.mu_up - sol.mu_lo
    beta_net = sol.beta_up - sol.beta_lo
    gamma_net = sol.gamma_up - sol.gamma_lo
    st_th = h2.T @ (mu_net - beta_net)
    st_th[case.slack_bus] = 0.0
    stat = float(np.max(np.abs(st_th)))
    st_pk = -(a_kn.T @ sol.lam) + beta_net + gamma_net
    stat = max(stat, float(np.max(np.abs(st_pk))))
    for gb, sl, au, al in zip(model.blocks, model.slopes, sol.alpha_up, sol.alpha_lo):
        if not len(sl):
            continue
        res = sl + sol.lam[case.generators[gb.gen].bus] + au - al
        stat = max(stat, float(np.max(np.abs(res))))
    if stat > stat_tol:
        bad.append(f"stationarity residual {stat:.2e}")

    # sign and complementarity
    sign_min = float(
        min(
            np.min(sol.mu_up, initial=0.0),
            np.min(sol.mu_lo, initial=0.0),
            np.min(sol.beta_up, initial=0.0),
            np.min(sol.beta_lo, initial=0.0),
            np.min(sol.gamma_up, initial=0.0),
            np.min(sol.gamma_lo, initial=0.0),
            min((np.min(a, initial=0.0) for a in sol.alpha_up), default=0.0),
            min((np.min(a, initial=0.0) for a in sol.alpha_lo), default=0.0),
        )
    )
    if sign_min < -sign_tol:
        bad.append(f"negative inequality dual {sign_min:.2e}")

    cs = 0.0
    cs = max(cs, float(np.max(np.abs(sol.mu_up * slack_up), initial=0.0)))
    cs = max(cs, float(np.max(np.abs(sol.mu_lo * slack_lo), initial=0.0)))
    cs = max(cs, float(np.max(np.abs(sol.beta_lo * sw_lo), initial=0.0)))
    cs = max(cs, float(np.max(np.abs(sol.beta_up * sw_up), initial=0.0)))
    cs = max(cs, float(np.max(np.abs(sol.gamma_lo * g_lo_sl), initial=0.0)))
    cs = max(cs, float(np.max(np.abs(sol.gamma_up * g_up_sl), initial=0.0)))
    for gb, xs, au, al in zip(model.blocks, sol.block_x, sol.alpha_up, sol.alpha_lo):
        if len(xs):
            cs = max(cs, float(np.max(np.abs(au * (gb.width - xs)), initial=0.0)))
            cs = max(cs, float(np.max(np.abs(al * xs), initial=0.0)))
    if cs > cs_tol:
        bad.append(f"complementarity product {cs:.2e}")

    # physical balance written directly on the post-trip topology
    h1_post = a_kn @ np.diag(s_arr) @ h2
    ident = inj - h1_post @ theta - pd
    ident_inf = float(np.max(np.abs(ident)))
    if ident_inf > 1e-6:
        bad.append(f"physical balance identity off by {ident_inf:.2e}")

    return KktReport(
        stationarity_inf=stat,
        cs_max_product=cs,
        dual_sign_min=sign_min,
        primal_inf=primal,
        band_inf=band,
        balance_identity_inf=ident_inf,
        violations=bad,
    )


def _seed_from_dispatch(
    model: Step1Model,
    trips: list[int],
    opf,
    c: np.ndarray | None = None,
) -> np.ndarray:
    """Full variable assignment built from one re-dispatch solution.

    The dispatch LP solved with the trip applied and the tilt folded
    into the limit windows carries everything the single-level program
    needs: primal block, prices, and the active set. Duals transplant
    with a base-power rescale; the trip-pair duals are the positive and
    negative parts of the nodal price stencil on each branch.
    """
    case, v = model.case, model.v
    base = case.base_mva
    n_b, n_br = case.n_bus, case.n_branch
    x = np.zeros(model.mip.lp.n_vars)
    x[v.th] = opf.theta
    x[v.pk] = opf.p_k / base
    for cols, xs in zip(v.pb, opf.block_x):
        if len(cols):
            x[cols] = xs
    if c is not None:
        for b in range(n_b):
            if v.c[b] >= 0:
                x[v.c[b]] = c[b]
                x[v.u[b]] = abs(c[b])
    s_val = model.dc_bar.status.s.astype(float)
    for t in trips:
        s_val[t] = 0.0
    x[v.s] = s_val

    lam = -opf.lam / base
    x[v.lam] = lam
    net_mu = (opf.mu_up - opf.mu_lo) / base
    x[v.mu_up] = np.maximum(net_mu, 0.0)
    x[v.mu_lo] = np.maximum(-net_mu, 0.0)
    for au, al, ru, rl in zip(v.a_up, v.a_lo, opf.alpha_up, opf.alpha_lo):
        if len(au):
            x[au] = ru / base
            x[al] = rl / base
    stencil = model.dc_bar.a_kn.T @ lam
    for k in range(n_br):
        if s_val[k] == 1.0:
            x[v.b_up[k]] = max(stencil[k], 0.0)
            x[v.b_lo[k]] = max(-stencil[k], 0.0)
        else:
            x[v.g_up[k]] = max(stencil[k], 0.0)
            x[v.g_lo[k]] = max(-stencil[k], 0.0)

    x[v.d_mu_up] = (x[v.mu_up] > _DUAL_TOL).astype(float)
    x[v.d_mu_lo] = (x[v.mu_lo] > _DUAL_TOL).astype(float)
    for gb, cols, du, dl in zip(model.blocks, v.pb, v.d_a_up, v.d_a_lo):
        if not len(cols):
            continue
        xs = x[cols]
        x[du] = (xs >= gb.width - 1e-8).astype(float)
        x[dl] = (xs <= 1e-8).astype(float)
    return x


def _pattern_bounds(model: Step1Model, seed: np.ndarray, lb, ub) -> None:
    """Pin binaries in (lb, ub) to the pattern a seed carries."""
    v = model.mip.lp
    for j in model.mip.binaries:
        val = round(float(seed[j]))
        lb[j] = float(val)
        ub[j] = float(val)


def _trip_relaxation(model: Step1Model, trip: int) -> tuple[float, np.ndarray | None]:
    """Value of the plan with the room's cost-minimization dropped.

    With the trip fixed, letting the attacker hand-pick any dispatch that
    fits the believed ratings, the band and the tilt budget majorizes the
    true plan value: the room's own choice is one of those dispatches. A
    small LP gives both a sound per-trip bound for pruning and a tilt
    vector worth seeding the exact solve with. Returns (-inf, None) when
    even the free-dispatch version is impossible.
    """
    case, p = model.case, model.params
    dc_bar = model.dc_bar
    n_b, n_br = case.n_bus, case.n_branch
    h2 = dc_bar.h2
    a_kn = dc_bar.a_kn
    pd = case.p_load_mw() / case.base_mva
    s_post = dc_bar.status.s.astype(float)
    s_post[trip] = 0.0
    h1_post = a_kn @ (s_post[:, None] * h2)
    tl = p.target_line

    lp = LinearProgram(sense="max")
    span = p.theta_span
    th = [
        lp.add_variable(
            lb=0.0 if i == case.slack_bus else -span,
            ub=0.0 if i == case.slack_bus else span,
            cost=model.sign * float(h2[tl, i]),
            name=f"th{i}",
        )
        for i in range(n_b)
    ]
    c = {b: lp.add_variable(lb=-p.n_1, ub=p.n_1, name=f"c{b}") for b in p.load_buses}
    u = {
        b: lp.add_variable(lb=0.0, ub=p.n_1, cost=-p.zeta, name=f"u{b}")
        for b in p.load_buses
    }
    pb = [
        [
            lp.add_variable(lb=0.0, ub=float(w), name=f"p{gb.gen}_{j}")
            for j, w in enumerate(gb.width)
        ]
        for gb in model.blocks
    ]

    for n in range(n_b):
        coeffs = {th[i]: -float(h1_post[n, i]) for i in range(n_b) if h1_post[n, i] != 0.0}
        for gb, cols in zip(model.blocks, pb):
            if case.generators[gb.gen].bus == n:
                for col in cols:
                    coeffs[col] = coeffs.get(col, 0.0) + 1.0
        lp.add_constraint(coeffs, "=", float(pd[n] - model.floor[n]), name=f"bal{n}")

    for k in range(n_br):
        row = {th[i]: float(h2[k, i]) for i in range(n_b) if h2[k, i] != 0.0}
        for i in range(n_b):
            if h2[k, i] != 0.0 and i in c:
                row[c[i]] = float(h2[k, i])
        cap = float(model.caps[k])
        lp.add_constraint(row, "<=", cap, name=f"fu{k}")
        lp.add_constraint({col: -a for col, a in row.items()}, "<=", cap, f"fl{k}")

    # believed minus physical withdrawals per bus, all through the state
    gap = model.h1_full - h1_post
    for n in range(n_b):
        coeffs: dict[int, float] = {}
        for i in range(n_b):
            if gap[n, i] != 0.0:
                coeffs[th[i]] = float(gap[n, i])
            if model.h1_full[n, i] != 0.0 and i in c:
                coeffs[c[i]] = float(model.h1_full[n, i])
        if pd[n] > 0.0:
            lp.add_constraint(coeffs, "<=", float(p.tau * pd[n]), f"bdu{n}")
            lp.add_constraint(
                {col: -a for col, a in coeffs.items()}, "<=", float(p.tau * pd[n]), f"bdl{n}"
            )
        else:
            lp.add_constraint(coeffs, "=", 0.0, f"bdz{n}")

    for b in p.load_buses:
        lp.add_constraint({c[b]: 1.0, u[b]: -1.0}, "<=", 0.0, f"l1u{b}")
        lp.add_constraint({c[b]: -1.0, u[b]: -1.0}, "<=", 0.0, f"l1l{b}")
    lp.add_constraint({u[b]: 1.0 for b in p.load_buses}, "<=", float(p.n_1), "l1sum")

    fb, tb = case.branches[tl].from_bus, case.branches[tl].to_bus
    b_l = float(dc_bar.b_series[tl])
    dream = {th[i]: model.sign * float(h2[tl, i]) for i in range(n_b) if h2[tl, i] != 0.0}
    for e in (fb, tb):
        if e in u:
            dream[u[e]] = dream.get(u[e], 0.0) - b_l
    lp.add_constraint(dream, "<=", float(model.caps[tl]), "reach")

    sol = solve_lp(lp)
    if not sol.optimal:
        return -INF, None
    c_vec = np.zeros(n_b)
    for b, col in c.items():
        c_vec[b] = sol.x[col]
    return float(sol.objective), c_vec


class _DispatchMap:
    """The room's dispatch as a parametric function of the tilt.

    Only the limit right-hand sides of the inner program move with c,
    so one factorized engine answers what the room does for any tilt in
    a few warm pivots. Around a solved tilt the optimal basis stays
    optimal over a polyhedron of tilts; there the dispatch is an affine
    map and every dual is a constant. Walking facet to facet across
    those polyhedra covers the whole tilt ball exactly, which is what
    makes the per-trip plan solvable without touching the big-M tree.
    """

    def __init__(self, model: Step1Model, trip: int):
        case, dc_bar = model.case, model.dc_bar
        p = model.params
        n_b, n_br = case.n_bus, case.n_branch
        self.model = model
        self.trip = int(trip)
        self.loads = [int(b) for b in sorted(p.load_buses)]
        s_post = dc_bar.status.s.astype(float).copy()
        s_post[trip] = 0.0
        self.s_post = s_post
        h2 = dc_bar.h2
        self.h1_post = dc_bar.a_kn @ (s_post[:, None] * h2)
        pd = case.p_load_mw() / case.base_mva

        lp = LinearProgram(sense="min")
        th = [
            lp.add_variable(
                lb=0.0 if i == case.slack_bus else -INF,
                ub=0.0 if i == case.slack_bus else INF,
                name=f"th{i}",
            )
            for i in range(n_b)
        ]
        pb = []
        for gb in model.blocks:
            pb.append(
                [
                    lp.add_variable(
                        lb=0.0, ub=float(w), cost=float(m_), name=f"p{gb.gen}_{j}"
                    )
                    for j, (w, m_) in enumerate(zip(gb.width, gb.slope))
                ]
            )
        for i in range(n_b):
            coeffs = {
                th[j]: -float(self.h1_post[i, j])
                for j in range(n_b)
                if self.h1_post[i, j] != 0.0
            }
            for gb, cols in zip(model.blocks, pb):
                if case.generators[gb.gen].bus == i:
                    for col in cols:
                        coeffs[col] = coeffs.get(col, 0.0) + 1.0
            lp.add_constraint(coeffs, "=", float(pd[i] - model.floor[i]), name=f"bal{i}")
        self.row_up = np.empty(n_br, dtype=np.int64)
        self.row_lo = np.empty(n_br, dtype=np.int64)
        for k in range(n_br):
            coeffs = {th[j]: float(h2[k, j]) for j in range(n_b) if h2[k, j] != 0.0}
            cap = float(model.caps[k])
            self.row_up[k] = lp.add_constraint(coeffs, "<=", cap, name=f"fu{k}")
            self.row_lo[k] = lp.add_constraint(coeffs, ">=", -cap, name=f"fl{k}")
        self.lp = lp
        self.th = np.array(th, dtype=np.int64)
        self.pb = [np.array(cols, dtype=np.int64) for cols in pb]
        self.std = Standardized(lp)
        self.engine = SimplexEngine(self.std)
        self.b0 = self.std.b.copy()
        rmat = np.zeros((lp.n_rows, len(self.loads)))
        for k in range(n_br):
            for pos, b in enumerate(self.loads):
                if h2[k, b] != 0.0:
                    rmat[self.row_up[k], pos] = -float(h2[k, b])
                    rmat[self.row_lo[k], pos] = -float(h2[k, b])
        self.rmat = rmat
        self._primed = False
        self.last = None

    def solve_at(self, c_load: np.ndarray):
        self.std.b[:] = self.b0 + self.rmat @ c_load
        sol = self.engine.solve(warm=self._primed)
        self._primed = True
        self.last = sol
        return sol

    def signature(self) -> bytes:
        return self.engine.vstat.tobytes()

    def region(self, c_probe: np.ndarray) -> dict:
        """Affine dispatch map plus the tilt polyhedron where it holds."""
        std, eng = self.std, self.engine
        basis = np.asarray(eng.basis, dtype=np.int64)
        bmat = std.a[:, basis]
        # full point (slacks included), same recipe the engine uses
        xf = np.where(
            eng.vstat == AT_UB, std.ub, np.where(eng.vstat == AT_LB, std.lb, 0.0)
        )
        xf[~np.isfinite(xf)] = 0.0
        xf[basis] = 0.0
        try:
            w = np.linalg.solve(bmat, np.column_stack([std.b - std.a @ xf, self.rmat]))
        except np.linalg.LinAlgError as exc:
            raise AttackOptError("dispatch basis went singular in a region map") from exc
        xf[basis] = w[:, 0]
        w = w[:, 1:]
        n_struct = std.n_struct
        grad = np.zeros((n_struct, len(self.loads)))
        ineqs: list[tuple[np.ndarray, float]] = []
        for r, v in enumerate(basis):
            row = w[r]
            v = int(v)
            if v < n_struct:
                grad[v] = row
            if not np.any(np.abs(row) > 1e-12):
                continue
            val0 = float(xf[v]) - float(row @ c_probe)
            if np.isfinite(std.ub[v]):
                ineqs.append((row.copy(), float(std.ub[v]) - val0))
            if np.isfinite(std.lb[v]):
                ineqs.append((-row.copy(), val0 - float(std.lb[v])))
        x0 = xf[:n_struct] - grad @ c_probe
        return {
            "grad": grad,
            "x0": x0,
            "ineqs": ineqs,
            "duals": self.last.duals.copy(),
            "red": self.last.reduced_costs.copy(),
        }


def _region_value(model: Step1Model, dm: _DispatchMap, reg: dict):
    """Best believable plan while the room stays on one dispatch basis.

    Inside a region the dispatch is affine in the tilt, so the target
    flow, the band residuals and the basis-validity conditions are all
    linear in (c, u) and the plan value is one small LP. Returns
    (value, c at load buses, u at load buses) or None when no tilt in
    this region passes the band.
    """
    p = model.params
    h2 = model.dc_bar.h2
    tl = p.target_line
    loads = dm.loads
    nL = len(loads)
    n_b = model.case.n_bus
    pd = model.case.p_load_mw() / model.case.base_mva

    thgrad = reg["grad"][dm.th]
    th0 = reg["x0"][dm.th]
    obj_c = model.sign * (h2[tl] @ thgrad)

    lp = LinearProgram(sense="max")
    cv = [
        lp.add_variable(lb=-p.n_1, ub=p.n_1, cost=float(obj_c[pos]), name=f"c{b}")
        for pos, b in enumerate(loads)
    ]
    uv = [
        lp.add_variable(lb=0.0, ub=p.n_1, cost=-p.zeta, name=f"u{b}") for b in loads
    ]

    for fi, (a, rhs) in enumerate(reg["ineqs"]):
        coeffs = {cv[pos]: float(a[pos]) for pos in range(nL) if abs(a[pos]) > 1e-12}
        if coeffs:
            lp.add_constraint(coeffs, "<=", float(rhs) + 1e-9, name=f"rg{fi}")

    # band: believed injections minus true flows, affine in the tilt
    coefmat = (model.h1_full - dm.h1_post) @ thgrad + model.h1_full[:, loads]
    constv = (model.h1_full - dm.h1_post) @ th0
    for n in range(n_b):
        coeffs = {
            cv[pos]: float(coefmat[n, pos])
            for pos in range(nL)
            if abs(coefmat[n, pos]) > 1e-12
        }
        if pd[n] > 0.0:
            lp.add_constraint(coeffs, "<=", float(p.tau * pd[n] - constv[n]), f"bdu{n}")
            lp.add_constraint(
                {k: -v_ for k, v_ in coeffs.items()},
                "<=",
                float(p.tau * pd[n] + constv[n]),
                f"bdl{n}",
            )
        elif coeffs:
            lp.add_constraint(coeffs, "=", float(-constv[n]), f"bdz{n}")
        elif abs(constv[n]) > 1e-7:
            return None
    for pos in range(nL):
        lp.add_constraint({cv[pos]: 1.0, uv[pos]: -1.0}, "<=", 0.0, f"l1u{pos}")
        lp.add_constraint({cv[pos]: -1.0, uv[pos]: -1.0}, "<=", 0.0, f"l1l{pos}")
    lp.add_constraint({col: 1.0 for col in uv}, "<=", float(p.n_1), "l1sum")

    sol = solve_lp(lp)
    if not sol.optimal:
        return None
    c_star = np.array([sol.x[col] for col in cv])
    u_star = np.array([sol.x[col] for col in uv])
    value = float(sol.objective) + model.sign * float(h2[tl] @ th0)
    return value, c_star, u_star


def _facet_probes(reg: dict, n1: float, nL: int) -> list[np.ndarray]:
    """Tilts a hair beyond each facet the budget ball can actually reach."""
    out = []
    ineqs = reg["ineqs"]
    for fi, (a, rhs) in enumerate(ineqs):
        amax = float(np.max(np.abs(a)))
        if n1 * amax < rhs - 1e-9:
            continue  # the whole ball sits strictly inside this facet
        lp = LinearProgram(sense="max")
        cv = [lp.add_variable(lb=-n1, ub=n1, name=f"c{pos}") for pos in range(nL)]
        uv = [lp.add_variable(lb=0.0, ub=n1, name=f"u{pos}") for pos in range(nL)]
        t = lp.add_variable(lb=0.0, ub=n1, cost=1.0, name="t")
        lp.add_constraint(
            {cv[pos]: float(a[pos]) for pos in range(nL) if a[pos] != 0.0},
            "=",
            float(rhs),
            "facet",
        )
        for gi, (g, grhs) in enumerate(ineqs):
            if gi == fi:
                continue
            nrm = float(np.max(np.abs(g)))
            if nrm <= 1e-12:
                continue
            coeffs = {cv[pos]: float(g[pos]) for pos in range(nL) if g[pos] != 0.0}
            coeffs[t] = nrm
            lp.add_constraint(coeffs, "<=", float(grhs), f"og{gi}")
        for pos in range(nL):
            lp.add_constraint({cv[pos]: 1.0, uv[pos]: -1.0}, "<=", 0.0, f"au{pos}")
            lp.add_constraint({cv[pos]: -1.0, uv[pos]: -1.0}, "<=", 0.0, f"al{pos}")
        ball = {col: 1.0 for col in uv}
        ball[t] = 1.0
        lp.add_constraint(ball, "<=", float(n1), "ball")
        sol = solve_lp(lp)
        if not sol.optimal or sol.objective < 1e-8:
            continue  # facet grazes the ball without interior contact
        c_f = np.array([sol.x[col] for col in cv])
        nrm2 = float(a @ a)
        step = min(1e-7 * (1.0 + abs(rhs)) / nrm2, 1e-5 / math.sqrt(nrm2))
        c_x = c_f + step * a
        if float(np.sum(np.abs(c_x))) > n1:
            continue  # the crossing would leave the budget ball
        out.append(c_x)
    return out


def _assemble_trip_x(
    model: Step1Model, dm: _DispatchMap, reg: dict, c_load: np.ndarray
) -> np.ndarray:
    """Full single-level assignment for one region's optimal tilt."""
    case = model.case
    base = case.base_mva
    th = reg["x0"][dm.th] + reg["grad"][dm.th] @ c_load
    if float(np.max(np.abs(th))) > model.params.theta_span + 1e-7:
        raise AttackOptError("dispatch angles left the linearization box")
    block_x = [reg["x0"][cols] + reg["grad"][cols] @ c_load for cols in dm.pb]
    flows_mw = dm.s_post * (model.dc_bar.h2 @ th) * base
    duals, red = reg["duals"], reg["red"]
    n_br = case.n_branch
    mu_up = np.zeros(n_br)
    mu_lo = np.zeros(n_br)
    for k in range(n_br):
        mu_up[k] = max(-float(duals[dm.row_up[k]]), 0.0)
        mu_lo[k] = max(float(duals[dm.row_lo[k]]), 0.0)
    fake = SimpleNamespace(
        theta=th,
        p_k=flows_mw,
        block_x=block_x,
        lam=duals[: case.n_bus].copy(),
        mu_up=mu_up,
        mu_lo=mu_lo,
        alpha_up=[np.maximum(-red[cols], 0.0) for cols in dm.pb],
        alpha_lo=[np.maximum(red[cols], 0.0) for cols in dm.pb],
    )
    c_full = np.zeros(case.n_bus)
    for pos, b in enumerate(dm.loads):
        c_full[b] = c_load[pos]
    return _seed_from_dispatch(model, [dm.trip], fake, c=c_full)


@dataclass
class _TripPlan:
    """Best plan for one fixed trip, with its in-trip ties."""

    trip: int
    value: float
    x: np.ndarray
    ties: list[np.ndarray]
    regions: int
    probes: int


def _solve_trip_exact(
    model: Step1Model,
    trip: int,
    c_init: np.ndarray | None = None,
    max_regions: int = 400,
) -> _TripPlan | None:
    """Exact plan for one trip by walking the dispatch-basis regions.

    The believable tilts form a convex set, so breadth-first facet
    crossings starting anywhere inside it visit every dispatch basis the
    ball contains; taking the best region LP over all of them is exact.
    Returns None when no tilt in the budget ball passes the band.
    """
    p = model.params
    dm = _DispatchMap(model, trip)
    nL = len(dm.loads)

    starts = [np.zeros(nL)]
    if c_init is not None:
        ci = np.asarray(c_init, dtype=float)
        cl = ci[dm.loads] if ci.shape[0] == model.case.n_bus else ci.copy()
        tot = float(np.sum(np.abs(cl)))
        if tot > p.n_1:
            cl *= (p.n_1 / tot) * (1.0 - 1e-9)
        starts.insert(0, cl)

    seen: set[bytes] = set()
    queue = list(starts)
    found: list[tuple[float, np.ndarray, dict]] = []
    probes = 0
    while queue:
        c_pr = queue.pop(0)
        if probes > 8 * max_regions:
            raise AttackOptError("region walk kept probing without converging")
        sol = dm.solve_at(c_pr)
        probes += 1
        if sol.status != "optimal":
            continue  # tilt the room itself could not dispatch under
        key = dm.signature()
        if key in seen:
            continue
        if len(seen) >= max_regions:
            raise AttackOptError(
                f"dispatch map split into more than {max_regions} regions"
            )
        seen.add(key)
        reg = dm.region(c_pr)
        got = _region_value(model, dm, reg)
        if got is not None:
            found.append((got[0], got[1], reg))
        queue.extend(_facet_probes(reg, p.n_1, nL))

    if not found:
        return None
    best = max(v for v, _, _ in found)
    plans: list[np.ndarray] = []
    kept_c: list[np.ndarray] = []
    for v, c_star, reg in sorted(found, key=lambda e: -e[0]):
        if v < best - 1e-6:
            break
        if any(np.max(np.abs(c_star - cc)) < 1e-9 for cc in kept_c):
            continue  # same tilt reached from both sides of a shared facet
        kept_c.append(c_star)
        plans.append(_assemble_trip_x(model, dm, reg, c_star))
    return _TripPlan(
        trip=int(trip),
        value=best,
        x=plans[0],
        ties=plans,
        regions=len(seen),
        probes=probes,
    )


def _harvest_seeds(
    model: Step1Model, repair_top: int = 5, repair_rounds: int = 4
) -> list[np.ndarray]:
    """Warm candidates: one re-dispatch per candidate trip, then a few
    tilt-repair passes on the most promising ones.

    The zero-tilt seed is often rejected by the band rows (the trip's
    injection signature shows at its end buses); the repair pass keeps
    the active set of that dispatch, frees the tilt, and re-optimizes
    the outer objective as a plain LP, which both legalizes the seed
    and improves it. Every intermediate assignment is returned; the
    branch-and-bound validates them arithmetically anyway.
    """
    case, p = model.case, model.params
    base = case.base_mva
    loads = case.p_load_mw()
    tl = p.target_line
    pool: list[tuple[float, list[int], object, object]] = []
    for t in model.candidates:
        status_t = model.dc_bar.status.with_tripped(t)
        dc_t = build_dc_model(case, status_t)
        opf = solve_dcopf(
            case, dc_t, loads, limit_all_rows=True, blocks=model.blocks
        )
        if opf.status != "optimal":
            continue
        est = model.sign * opf.p_k[tl] / base
        pool.append((est, [t], dc_t, opf))
    pool.sort(key=lambda row: -row[0])

    seeds = [_seed_from_dispatch(model, trips, opf) for _, trips, _, opf in pool]

    if repair_top > 0 and pool:
        std = Standardized(model.mip.lp)
        engine = SimplexEngine(std)
        warm = False
        nv = model.mip.lp.n_vars
        for est, trips, dc_t, opf in pool[:repair_top]:
            seed = _seed_from_dispatch(model, trips, opf)
            cur_c = None
            best = -INF
            for _ in range(repair_rounds):
                lb = std.lb.copy()
                ub = std.ub.copy()
                _pattern_bounds(model, seed, lb, ub)
                lpsol = engine.solve(lb=lb, ub=ub, warm=warm)
                warm = True
                if lpsol.status != "optimal":
                    break
                x = lpsol.x[:nv].copy()
                seeds.append(x)
                if lpsol.objective <= best + 1e-9:
                    break
                best = lpsol.objective
                c_new = np.zeros(case.n_bus)
                for b in range(case.n_bus):
                    if model.v.c[b] >= 0:
                        c_new[b] = x[model.v.c[b]]
                if cur_c is not None and np.max(np.abs(c_new - cur_c)) < 1e-10:
                    break
                cur_c = c_new
                opf2 = solve_dcopf(
                    case,
                    dc_t,
                    loads,
                    flow_bias=c_new,
                    limit_all_rows=True,
                    blocks=model.blocks,
                )
                if opf2.status != "optimal":
                    break
                seed = _seed_from_dispatch(model, trips, opf2, c=c_new)
                seeds.append(seed)
    return seeds


def _equivalence_gaps(model: Step1Model, sol: Step1Solution) -> list[str]:
    """Re-run the operator's dispatch at the planned trip and tilt and
    compare it with the embedded block, both cost and point."""
    case = model.case
    base = case.base_mva
    bad: list[str] = []
    dc_t = build_dc_model(case, sol.s)
    ref = solve_dcopf(
        case,
        dc_t,
        case.p_load_mw(),
        flow_bias=sol.c,
        limit_all_rows=True,
        blocks=model.blocks,
    )
    if ref.status != "optimal":
        return [f"re-dispatch at the planned point is {ref.status}"]
    emb = sum(float(sl @ xs) for sl, xs in zip(model.slopes, sol.block_x) if len(xs))
    refv = sum(
        float(sl @ xs) for sl, xs in zip(model.slopes, ref.block_x) if len(xs)
    )
    if abs(emb - refv) > 1e-5 * (1.0 + abs(refv)):
        bad.append(f"inner objective drift {abs(emb - refv):.3e}")
    dg = float(np.max(np.abs(sol.p_g - ref.p_g))) / base
    scale = 1.0 + float(np.max(np.abs(ref.p_g))) / base
    if dg > 1e-5 * scale:
        bad.append(f"dispatch drift {dg:.3e} pu")
    dk = float(np.max(np.abs(sol.p_k - ref.p_k))) / base
    if dk > 1e-5 * (1.0 + float(np.max(np.abs(ref.p_k))) / base):
        bad.append(f"flow drift {dk:.3e} pu")
    return bad


def _solve_by_trips(model: Step1Model) -> MilpSolution:
    """Single-trip planning by exact per-trip decomposition.

    Candidates are visited best relaxation bound first; the walk stops
    as soon as the next bound cannot beat the incumbent. Every trip is
    solved exactly, so the answer carries a zero gap, and trips tying
    within 1e-6 all land in the incumbent pool.
    """
    order = []
    for t in model.candidates:
        bound, c_hint = _trip_relaxation(model, t)
        if bound > -INF:
            order.append((bound, t, c_hint))
    order.sort(key=lambda e: (-e[0], e[1]))

    plans: list[_TripPlan] = []
    best_val = -INF
    probes = 0
    for bound, t, c_hint in order:
        if plans and bound < best_val - 1e-6:
            break
        plan = _solve_trip_exact(model, t, c_init=c_hint)
        probes += 1 if plan is None else plan.probes
        if plan is None:
            continue
        plans.append(plan)
        best_val = max(best_val, plan.value)

    if not plans:
        return MilpSolution(
            status="infeasible",
            x=np.empty(0),
            objective=float("nan"),
            duals=np.empty(0),
            reduced_costs=np.empty(0),
            incumbent_log=[],
            gap=float("inf"),
            nodes=probes,
        )
    plans.sort(key=lambda pl: (-pl.value, pl.trip))
    winner = plans[0]
    pool: list[np.ndarray] = []
    for pl in plans:
        if pl.value >= best_val - 1e-6:
            pool.extend(pl.ties)
    return MilpSolution(
        status="optimal",
        x=winner.x,
        objective=winner.value,
        duals=np.empty(0),
        reduced_costs=np.empty(0),
        incumbent_log=[(probes, winner.value)],
        gap=0.0,
        nodes=probes,
        incumbent_pool=pool,
    )


def solve_step1(
    model: Step1Model,
    config: MilpConfig | None = None,
    seed: bool = True,
    verify: bool = True,
    method: str = "auto",
) -> Step1Solution:
    """Solve the planning program and audit what comes back.

    Single-trip plans decompose into one exact parametric solve per
    candidate trip; multi-trip plans (or method="tree") fall back to the
    big-M tree search, which is where config applies. Infeasibility is
    a legitimate result (no invisible attack fits the budgets) and is
    returned, not raised. A solution failing its own optimality audit
    raises AttackOptError: that is a solver defect, not a property of
    the grid.
    """
    if method not in ("auto", "trips", "tree"):
        raise AttackOptError(f"unknown solve method {method!r}")
    if method == "trips" and model.params.n_t != 1:
        raise AttackOptError("per-trip decomposition only covers single-trip plans")
    by_trips = method == "trips" or (method == "auto" and model.params.n_t == 1)
    if by_trips:
        ms = _solve_by_trips(model)
    else:
        if config is None:
            config = MilpConfig(
                branching="priority",
                priority=[int(model.v.s[k]) for k in model.candidates],
            )
        seeds = _harvest_seeds(model) if seed else []
        if seeds or config.initial_solutions:
            config = replace(
                config,
                initial_solutions=list(config.initial_solutions or []) + seeds,
            )
        ms = solve_milp(model.mip, config)
    if ms.status in ("infeasible", "unbounded") or ms.x.size == 0:
        if ms.status == "unbounded":
            raise AttackOptError("planning program is unbounded; model defect")
        return Step1Solution(status=ms.status, nodes=ms.nodes, gap=float(ms.gap))
    sol = _extract_step1(model, ms)
    if verify:
        report = verify_kkt(sol, model)
        problems = list(report.violations) + _equivalence_gaps(model, sol)
        if problems:
            raise AttackOptError(
                "solution failed verification: " + "; ".join(problems)
            )
    return sol


def switch_on_optimal_face(
    case: GridCase,
    dc_bar: DcModel,
    params: AttackParams,
    line: int,
    reference_objective: float,
    config: MilpConfig | None = None,
    tol: float = 1e-6,
) -> tuple[bool, Step1Solution]:
    """Does forcing this trip cost nothing against a known optimum?

    Re-solves the program with the line pinned tripped and compares
    objectives; equal within tol means the line sits on the optimal
    face (ties between trips are real on symmetric grids).
    """
    model = build_step1(case, dc_bar, params, forced_line=line)
    sol = solve_step1(model, config=config)
    ok = sol.feasible and sol.objective >= reference_objective - tol
    return ok, sol


# --------------------------------------------------------------------------
# step 2: the tilt that triggers the planned dispatch at trip time


@dataclass
class _Step2Vars:
    th: np.ndarray
    c0: np.ndarray
    u: np.ndarray
    lam: np.ndarray
    mu_up: np.ndarray
    mu_lo: np.ndarray
    d_mu_up: np.ndarray
    d_mu_lo: np.ndarray


@dataclass
class Step2Model:
    """Feasibility program for the trip-time tilt c0.

    At the moment the line drops, the room's estimator still believes
    the full topology. The tilt must bend the believed loads (inside
    the falsifiable region only) so that the believed-network dispatch
    the room then computes is exactly the one the plan assumed, while
    each believed load stays inside the plausibility band around its
    true value. Smallest l1 tilt wins.
    """

    mip: MixedIntegerProgram
    case: GridCase
    dc: DcModel
    dc_bar: DcModel
    params: AttackParams
    blocks: list[GenBlocks]
    sub_buses: tuple[int, ...]
    tilt_buses: list[int]
    trips: list[int]
    e: np.ndarray
    pg1_star_mw: np.ndarray
    v: _Step2Vars
    caps: np.ndarray
    dead_rows: list[str]


def build_step2(
    case: GridCase,
    dc: DcModel,
    dc_bar: DcModel,
    sub,
    theta0_hat: np.ndarray,
    pg1_star_mw: np.ndarray,
    params: AttackParams,
) -> Step2Model:
    """Assemble the minimal-tilt program for a planned trip.

    dc carries the post-trip physics, dc_bar what the room believes.
    theta0_hat is the pre-trip estimated state (only differences across
    the tripped line enter, so any angle reference works). The tripped
    line's flow signature shows up as a load-looking injection error at
    its end buses; the tilt must fold that error into believable loads.
    """
    p = _resolve_params(case, dc_bar, params)
    n_b, n_br = case.n_bus, case.n_branch
    base = case.base_mva
    theta0_hat = np.asarray(theta0_hat, dtype=float)
    pg1_star_mw = np.asarray(pg1_star_mw, dtype=float)
    if theta0_hat.shape != (n_b,):
        raise AttackOptError("estimated state must cover every bus")
    if pg1_star_mw.shape != (case.n_gen,):
        raise AttackOptError("pinned dispatch must cover every generator")

    trips = [
        k
        for k in range(n_br)
        if dc_bar.status.s[k] == 1 and dc.status.s[k] == 0
    ]
    s_set = set(int(b) for b in sub.buses)
    for t in trips:
        br = case.branches[t]
        if br.from_bus not in s_set or br.to_bus not in s_set:
            raise AttackOptError(
                f"tripped line {t} has an end bus outside the region"
            )

    # the trip re-routes its own pre-trip flow: to an estimator still
    # using the full topology this looks like paired extra injections
    # at the line's ends
    e = np.zeros(n_b)
    for t in trips:
        d = float(dc_bar.h2[t] @ theta0_hat)
        e += dc_bar.a_kn[:, t] * d

    pd = case.p_load_mw() / base
    pg_bus = np.zeros(n_b)
    for g, gen in enumerate(case.generators):
        pg_bus[gen.bus] += pg1_star_mw[g] / base

    tilt = [b for b in p.load_buses if b in s_set]
    h1f = dc_bar.h1
    h2 = dc_bar.h2
    caps = dc_bar.ratings_pu.copy()
    m = p.m_big
    span = p.theta_span
    blocks = pwl_blocks(case, p.segments)

    lp = LinearProgram(sense="min")
    vec = lambda f: np.array([f(i) for i in range(n_b)], dtype=np.int64)
    th = vec(
        lambda i: lp.add_variable(lb=0.0, ub=0.0, name=f"th{i}")
        if i == case.slack_bus
        else lp.add_variable(lb=-span, ub=span, name=f"th{i}")
    )
    c0 = np.full(n_b, -1, dtype=np.int64)
    u = np.full(n_b, -1, dtype=np.int64)
    for b in tilt:
        c0[b] = lp.add_variable(lb=-span, ub=span, name=f"c0_{b}")
        u[b] = lp.add_variable(lb=0.0, ub=span, cost=1.0, name=f"u0_{b}")
    lam = vec(lambda i: lp.add_variable(lb=-m, ub=m, name=f"lam{i}"))
    mkb = lambda tag: np.array(
        [lp.add_variable(lb=0.0, ub=m, name=f"{tag}{k}") for k in range(n_br)],
        dtype=np.int64,
    )
    mu_up, mu_lo = mkb("mup"), mkb("mulo")
    d_mu_up, d_mu_lo = mkb("dmup"), mkb("dmulo")
    for k in range(n_br):
        for j in (d_mu_up[k], d_mu_lo[k]):
            lp.ub[j] = 1.0
            # nudge fractional switch vertices away without moving the tilt
            lp.cost[j] = 1e-9

    dead: list[str] = []

    # believed balance at the pinned dispatch; tilt terms only on rows
    # the attacker's sensors cover
    for n in range(n_b):
        coeffs: dict[int, float] = {}
        for i in range(n_b):
            if h1f[n, i] != 0.0:
                coeffs[int(th[i])] = -float(h1f[n, i])
        rhs = float(pd[n] - pg_bus[n])
        if n in s_set:
            rhs -= float(e[n])
            for b in tilt:
                if h1f[n, b] != 0.0:
                    coeffs[int(c0[b])] = coeffs.get(int(c0[b]), 0.0) + float(
                        h1f[n, b]
                    )
        lp.add_constraint(coeffs, "=", rhs, name=f"bal{n}")

    # believed flows within ratings, with complementarity switches so a
    # positive congestion price forces its row tight
    for k in range(n_br):
        row = {int(th[i]): float(h2[k, i]) for i in range(n_b) if h2[k, i] != 0.0}
        cap = float(caps[k])
        lp.add_constraint(row, "<=", cap, name=f"fu{k}")
        lp.add_constraint({col: -a for col, a in row.items()}, "<=", cap, f"fl{k}")
        lp.add_constraint({int(mu_up[k]): 1.0, int(d_mu_up[k]): -m}, "<=", 0.0, f"csmu{k}")
        bind_u = {col: -a for col, a in row.items()}
        bind_u[int(d_mu_up[k])] = 2.0 * cap
        lp.add_constraint(bind_u, "<=", cap, f"csmub{k}")
        lp.add_constraint({int(mu_lo[k]): 1.0, int(d_mu_lo[k]): -m}, "<=", 0.0, f"csml{k}")
        bind_l = dict(row)
        bind_l[int(d_mu_lo[k])] = 2.0 * cap
        lp.add_constraint(bind_l, "<=", cap, f"csmlb{k}")
        lp.add_constraint(
            {int(d_mu_up[k]): 1.0, int(d_mu_lo[k]): 1.0}, "<=", 1.0, f"csmx{k}"
        )

    # state optimality of the believed dispatch problem (the pinned
    # generation drops out: its stationarity row has a free dual)
    for i in range(n_b):
        if i == case.slack_bus:
            continue
        coeffs = {}
        for n in range(n_b):
            if h1f[n, i] != 0.0:
                coeffs[int(lam[n])] = -float(h1f[n, i])
        for k in range(n_br):
            if h2[k, i] != 0.0:
                coeffs[int(mu_up[k])] = coeffs.get(int(mu_up[k]), 0.0) + float(h2[k, i])
                coeffs[int(mu_lo[k])] = coeffs.get(int(mu_lo[k]), 0.0) - float(h2[k, i])
        lp.add_constraint(coeffs, "=", 0.0, name=f"stth{i}")

    # each believed load stays inside the plausibility band around the
    # true value; buses without load must read exactly zero
    for n in sorted(s_set):
        coeffs = {}
        for b in tilt:
            if h1f[n, b] != 0.0:
                coeffs[int(c0[b])] = float(h1f[n, b])
        if pd[n] > 0.0:
            up_rhs = float(p.tau * pd[n] - e[n])
            lo_rhs = float(p.tau * pd[n] + e[n])
            if coeffs:
                lp.add_constraint(coeffs, "<=", up_rhs, name=f"bdu{n}")
                lp.add_constraint(
                    {col: -a for col, a in coeffs.items()}, "<=", lo_rhs, f"bdl{n}"
                )
            elif up_rhs < 0.0 or lo_rhs < 0.0:
                dead.append(f"band at bus {n} cannot absorb the trip signature")
        else:
            if coeffs:
                lp.add_constraint(coeffs, "=", float(-e[n]), name=f"bdz{n}")
            elif abs(e[n]) > 1e-9:
                dead.append(f"no-load bus {n} shows a {e[n]:.3e} pu injection error")

    for b in tilt:
        lp.add_constraint({int(c0[b]): 1.0, int(u[b]): -1.0}, "<=", 0.0, f"l1u{b}")
        lp.add_constraint({int(c0[b]): -1.0, int(u[b]): -1.0}, "<=", 0.0, f"l1l{b}")

    mip = MixedIntegerProgram(lp)
    for k in range(n_br):
        mip.mark_binary(int(d_mu_up[k]))
        mip.mark_binary(int(d_mu_lo[k]))

    return Step2Model(
        mip=mip,
        case=case,
        dc=dc,
        dc_bar=dc_bar,
        params=p,
        blocks=blocks,
        sub_buses=tuple(sorted(s_set)),
        tilt_buses=tilt,
        trips=trips,
        e=e,
        pg1_star_mw=pg1_star_mw.copy(),
        v=_Step2Vars(
            th=th, c0=c0, u=u, lam=lam, mu_up=mu_up, mu_lo=mu_lo,
            d_mu_up=d_mu_up, d_mu_lo=d_mu_lo,
        ),
        caps=caps,
        dead_rows=dead,
    )


@dataclass
class Step2Solution:
    """Minimal trip-time tilt and the believed world it produces."""

    status: str
    objective: float = float("nan")
    c0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    u: np.ndarray = field(default_factory=lambda: np.zeros(0))
    theta_bar: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cyber_loads_mw: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dispatch_match: bool = False
    dispatch_mw: np.ndarray | None = None
    center_buses: list[int] = field(default_factory=list)
    l0_used: int = 0
    l1_used: float = 0.0
    gap: float = float("nan")
    nodes: int = 0

    @property
    def feasible(self) -> bool:
        return self.status in ("optimal", "node_limit")

    def to_json(self) -> str:
        return json.dumps(
            {
                "status": self.status,
                "objective": None if np.isnan(self.objective) else self.objective,
                "c0": self.c0.tolist(),
                "cyber_loads_mw": self.cyber_loads_mw.tolist(),
                "dispatch_match": bool(self.dispatch_match),
                "center_buses": [int(b) for b in self.center_buses],
                "l0_used": int(self.l0_used),
                "l1_used": float(self.l1_used),
                "nodes": int(self.nodes),
            },
            indent=2,
        )


def solve_step2(
    model: Step2Model, config: MilpConfig | None = None
) -> Step2Solution:
    """Solve for the smallest trip-time tilt and audit the result.

    Infeasibility means no believable load pattern reproduces the
    planned dispatch at trip time; the caller should reject the plan.
    """
    if model.dead_rows:
        return Step2Solution(status="infeasible")
    case, v, p = model.case, model.v, model.params
    base = case.base_mva
    n_b = case.n_bus
    ms = solve_milp(model.mip, config or MilpConfig())
    if ms.status == "unbounded":
        raise AttackOptError("tilt program is unbounded; model defect")
    if ms.status in ("infeasible",) or ms.x.size == 0:
        return Step2Solution(status=ms.status, nodes=ms.nodes, gap=float(ms.gap))
    x = ms.x
    c0 = np.zeros(n_b)
    uval = np.zeros(n_b)
    for b in model.tilt_buses:
        c0[b] = x[v.c0[b]]
        uval[b] = x[v.u[b]]
    theta_bar = x[v.th]

    pd = case.p_load_mw() / base
    spill = model.dc_bar.h1 @ c0
    pbar = pd.copy()
    for n in model.sub_buses:
        pbar[n] = pd[n] - model.e[n] - spill[n]

    # audits: the believed loads really balance the pinned dispatch and
    # stay inside the band; defects here are solver bugs, not physics
    pg_bus = np.zeros(n_b)
    for g, gen in enumerate(case.generators):
        pg_bus[gen.bus] += model.pg1_star_mw[g] / base
    resid = pg_bus - model.dc_bar.h1 @ theta_bar - pbar
    if float(np.max(np.abs(resid))) > 1e-6:
        raise AttackOptError(
            f"believed balance residual {np.max(np.abs(resid)):.3e}"
        )
    flows = model.dc_bar.h2 @ theta_bar
    if float(np.max(np.abs(flows) - model.caps)) > 1e-6:
        raise AttackOptError("believed flow exceeds a rating after the tilt")
    for n in model.sub_buses:
        dev = spill[n] + model.e[n]
        lim = p.tau * pd[n] + 1e-6 if pd[n] > 0 else 1e-6
        if abs(dev) > lim:
            raise AttackOptError(f"load band violated at bus {n}")

    cc = solve_dcopf(
        case,
        model.dc_bar,
        pbar * base,
        limit_all_rows=True,
        blocks=model.blocks,
    )
    match = bool(
        cc.status == "optimal"
        and float(np.max(np.abs(cc.p_g - model.pg1_star_mw))) <= 1e-2
    )

    centers = [int(b) for b in model.tilt_buses if abs(c0[b]) > CENTER_TOL]
    return Step2Solution(
        status=ms.status,
        objective=float(np.sum(uval)),
        c0=c0,
        u=uval,
        theta_bar=theta_bar,
        cyber_loads_mw=pbar * base,
        dispatch_match=match,
        dispatch_mw=cc.p_g.copy() if cc.status == "optimal" else None,
        center_buses=centers,
        l0_used=len(centers),
        l1_used=float(np.sum(np.abs(c0))),
        gap=float(ms.gap),
        nodes=ms.nodes,
    )
