"""Bounded-variable simplex with dual values.

The solver works off a factorized basis, updated by eta
transformations and refactorized periodically: an explicit dense
inverse for small models, a sparse LU with a product-form eta file
once the matrix is large and mostly empty. Pricing is Dantzig with a
Bland fallback once pivots stall, which keeps runs deterministic on
degenerate models.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

INF = float("inf")

# absolute tolerances; callers keep model data around per-unit scale
_TOL_COST = 1e-9
_TOL_FEAS = 1e-9
_TOL_PIVOT = 1e-8
_TOL_RATIO = 1e-12
_STALL_LIMIT = 60
_REFACTOR_EVERY = 100

BASIC, AT_LB, AT_UB, NB_FREE = 0, 1, 2, 3


class LpError(RuntimeError):
    pass


class _Restart(Exception):
    """Internal: basis factorization decayed, redo the solve cold."""


@dataclass
class LinearProgram:
    """Rowwise LP container. Senses are "<=", ">=", "=" per row."""

    sense: str = "min"
    lb: list[float] = field(default_factory=list)
    ub: list[float] = field(default_factory=list)
    cost: list[float] = field(default_factory=list)
    var_names: list[str] = field(default_factory=list)
    rows: list[list[tuple[int, float]]] = field(default_factory=list)
    row_sense: list[str] = field(default_factory=list)
    rhs: list[float] = field(default_factory=list)
    row_names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.sense not in ("min", "max"):
            raise LpError(f"bad objective sense {self.sense!r}")

    @property
    def n_vars(self) -> int:
        return len(self.lb)

    @property
    def n_rows(self) -> int:
        return len(self.rhs)

    def add_variable(
        self,
        lb: float = 0.0,
        ub: float = INF,
        cost: float = 0.0,
        name: str | None = None,
    ) -> int:
        if lb > ub:
            raise LpError(f"variable bounds cross: [{lb}, {ub}]")
        if not np.isfinite(cost):
            raise LpError("objective coefficient must be finite")
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.cost.append(float(cost))
        self.var_names.append(name or f"x{len(self.lb) - 1}")
        return len(self.lb) - 1

    def add_constraint(
        self,
        coeffs,
        sense: str,
        rhs: float,
        name: str | None = None,
    ) -> int:
        if sense not in ("<=", ">=", "="):
            raise LpError(f"bad row sense {sense!r}")
        if not np.isfinite(rhs):
            raise LpError("rhs must be finite")
        items = sorted(coeffs.items()) if isinstance(coeffs, dict) else sorted(coeffs)
        row = []
        for j, a in items:
            a = float(a)
            if not np.isfinite(a):
                raise LpError("constraint coefficient must be finite")
            if not 0 <= j < self.n_vars:
                raise LpError(f"unknown variable index {j}")
            if a != 0.0:
                row.append((int(j), a))
        self.rows.append(row)
        self.row_sense.append(sense)
        self.rhs.append(float(rhs))
        self.row_names.append(name or f"r{len(self.rhs) - 1}")
        return len(self.rhs) - 1


@dataclass
class LpSolution:
    status: str
    x: np.ndarray
    objective: float
    duals: np.ndarray
    reduced_costs: np.ndarray
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class Standardized:
    """Equality-form data A x = b with bounds; slacks then artificials.

    Column layout: structural variables, one slack per inequality row,
    one artificial per row. Artificial bounds are [0, 0]; they only
    ever carry value while a cold start works off its infeasibility.
    """

    def __init__(self, lp: LinearProgram):
        m, ns = lp.n_rows, lp.n_vars
        n_slack = sum(1 for s in lp.row_sense if s != "=")
        n = ns + n_slack + m
        a = np.zeros((m, n))
        for i, row in enumerate(lp.rows):
            for j, v in row:
                a[i, j] += v
        lb = np.zeros(n)
        ub = np.zeros(n)
        lb[:ns] = lp.lb
        ub[:ns] = lp.ub
        sign = 1.0 if lp.sense == "min" else -1.0
        cost = np.zeros(n)
        cost[:ns] = np.asarray(lp.cost) * sign
        k = ns
        self.slack_of_row = np.full(m, -1, dtype=np.int64)
        for i, s in enumerate(lp.row_sense):
            if s == "=":
                continue
            a[i, k] = 1.0 if s == "<=" else -1.0
            ub[k] = INF
            self.slack_of_row[i] = k
            k += 1
        self.art0 = k
        for i in range(m):
            a[i, k + i] = 1.0 if lp.rhs[i] >= 0 else -1.0
        self.a = a
        self.b = np.asarray(lp.rhs, dtype=float)
        self.cost = cost
        self.lb = lb
        self.ub = ub
        self.n_struct = ns
        self.n = n
        self.m = m
        self.sign = sign
        # pricing multiplies y through A^T every iteration, and the basis
        # factorization scales with fill; large models here are almost
        # empty, so keep sparse copies for both
        nnz = np.count_nonzero(a)
        self.at_sparse = None
        self.a_csc = None
        if a.size > 200_000 and nnz < 0.2 * a.size:
            self.at_sparse = sp.csr_matrix(a.T)
            self.a_csc = sp.csc_matrix(a)

    def price(self, c, y):
        if self.at_sparse is not None:
            return c - self.at_sparse @ y
        return c - y @ self.a

    def set_objective(self, cost) -> None:
        """Swap structural costs in place; any held basis stays valid."""
        cost = np.asarray(cost, dtype=float)
        if cost.shape != (self.n_struct,) or not np.all(np.isfinite(cost)):
            raise LpError("objective must be finite and cover every variable")
        self.cost[: self.n_struct] = cost * self.sign


class _DenseInverse:
    """Explicit basis inverse, eta-updated in place."""

    def __init__(self, std: Standardized):
        self.std = std
        self.binv = None

    @property
    def ready(self) -> bool:
        return self.binv is not None

    def crash(self, basis) -> None:
        diag = self.std.a[np.arange(self.std.m), basis]
        self.binv = np.diag(1.0 / diag)

    def refactor(self, basis) -> None:
        try:
            self.binv = np.linalg.inv(self.std.a[:, basis])
        except np.linalg.LinAlgError as exc:
            raise LpError("singular basis during refactorization") from exc

    def ftran(self, v):
        return self.binv @ v

    def btran(self, c):
        return c @ self.binv

    def inv_row(self, r):
        return self.binv[r]

    def update(self, r, w) -> None:
        piv = w[r]
        col = w / piv
        col[r] = 1.0 - 1.0 / piv
        self.binv -= np.outer(col, self.binv[r])


class _SparseLU:
    """Sparse LU of the basis plus a product-form eta file.

    Each pivot appends one eta (leaving row r, entering column's ftran
    image w); solves replay the file around the factor. The file is
    bounded by the refactor cadence, so applications stay O(etas * m).
    """

    def __init__(self, std: Standardized):
        self.std = std
        self._lu = None
        self._eta_r: list[int] = []
        self._eta_w: list[np.ndarray] = []

    @property
    def ready(self) -> bool:
        return self._lu is not None

    def crash(self, basis) -> None:
        self.refactor(basis)

    def refactor(self, basis) -> None:
        mat = self.std.a_csc[:, np.asarray(basis, dtype=np.int64)]
        try:
            self._lu = spla.splu(mat.tocsc())
        except RuntimeError as exc:
            raise LpError("singular basis during refactorization") from exc
        self._eta_r.clear()
        self._eta_w.clear()

    def ftran(self, v):
        t = self._lu.solve(np.asarray(v, dtype=float))
        for r, w in zip(self._eta_r, self._eta_w):
            tr = t[r] / w[r]
            t -= w * tr
            t[r] = tr
        return t

    def btran(self, c):
        u = np.array(c, dtype=float)
        for r, w in zip(reversed(self._eta_r), reversed(self._eta_w)):
            u[r] -= (w @ u - u[r]) / w[r]
        return self._lu.solve(u, trans="T")

    def inv_row(self, r):
        e = np.zeros(self.std.m)
        e[r] = 1.0
        return self.btran(e)

    def update(self, r, w) -> None:
        self._eta_r.append(int(r))
        self._eta_w.append(np.array(w, dtype=float))


class SimplexEngine:
    """Bounded-variable primal simplex over a Standardized model.

    One engine serves many solves with different bound arrays (branch
    and bound) and can adopt a caller-kept basis snapshot.
    """

    def __init__(self, std: Standardized):
        self.std = std
        self.basis = None
        self.vstat = None
        self._fac = _SparseLU(std) if std.a_csc is not None else _DenseInverse(std)
        # the eta file both slows solves and loses accuracy as it grows;
        # refactorizing is cheap for the sparse factor, so do it sooner
        self._refactor_every = (
            40 if isinstance(self._fac, _SparseLU) else _REFACTOR_EVERY
        )
        self._etas = 0
        self._devex = np.ones(std.n)
        self._fixed = np.zeros(std.n, dtype=bool)

    # ------------------------------------------------------------ state

    def _cold_start(self, lb, ub):
        # crash: slacks basic where rows have them, artificials elsewhere
        std = self.std
        arts = np.arange(std.art0, std.art0 + std.m, dtype=np.int64)
        self.basis = np.where(std.slack_of_row >= 0, std.slack_of_row, arts)
        self.vstat = np.where(
            np.isfinite(lb), AT_LB, np.where(np.isfinite(ub), AT_UB, NB_FREE)
        ).astype(np.int8)
        self.vstat[self.basis] = BASIC
        self._fac.crash(self.basis)
        self._etas = 0
        self._devex = np.ones(std.n)

    def load_basis(self, basis: np.ndarray, vstat: np.ndarray) -> None:
        """Adopt a snapshot from an earlier solve.

        When the engine already holds a factorized basis that differs
        from the target in only a few columns, the switch is applied as
        a short run of exchange pivots on the existing factorization
        instead of a from-scratch refactorization.
        """
        target = basis.copy()
        if self._fac.ready and self.basis is not None:
            if self._swap_toward(target):
                self.vstat = vstat.copy()
                self.vstat[self.basis] = BASIC
                self._devex = np.ones(self.std.n)
                return
        self.basis = target
        self.vstat = vstat.copy()
        self._devex = np.ones(self.std.n)
        self._refactor()

    def _swap_toward(self, target: np.ndarray) -> bool:
        """Pivot the current factorization onto the target basis set.

        Returns False when the difference is too large or a pivot is
        too small to trust, leaving current state untouched enough for
        the caller to refactorize instead.
        """
        std = self.std
        have = set(self.basis.tolist())
        want = set(target.tolist())
        incoming = sorted(want - have)
        if not incoming:
            self.basis = target
            return True
        if len(incoming) > max(20, std.m // 8):
            return False
        outgoing = have - want
        out_rows = [r for r in range(std.m) if self.basis[r] in outgoing]
        for j in incoming:
            w = self._fac.ftran(std.a[:, j])
            r_best, p_best = -1, 0.0
            for r in out_rows:
                if abs(w[r]) > p_best:
                    r_best, p_best = r, abs(w[r])
            if p_best < max(1e-7, 1e-9 * float(np.max(np.abs(w)))):
                return False
            self._fac.update(r_best, w)
            self.basis[r_best] = j
            out_rows.remove(r_best)
            self._etas += 1
        if self._etas >= self._refactor_every:
            try:
                self._refactor()
            except LpError:
                return False
        return True

    def snapshot(self) -> tuple[np.ndarray, np.ndarray]:
        return self.basis.copy(), self.vstat.copy()

    def _refactor(self):
        self._fac.refactor(self.basis)
        self._etas = 0

    def _full_x(self, lb, ub):
        """Nonbasic entries at their bounds, basic from the factors."""
        std = self.std
        x = np.where(self.vstat == AT_UB, ub, np.where(self.vstat == AT_LB, lb, 0.0))
        x[~np.isfinite(x)] = 0.0
        x[self.basis] = 0.0
        ax = std.a_csc @ x if std.a_csc is not None else std.a @ x
        x[self.basis] = self._fac.ftran(std.b - ax)
        return x

    # ------------------------------------------------------------ solve

    def solve(
        self,
        lb: np.ndarray | None = None,
        ub: np.ndarray | None = None,
        warm: bool = False,
        max_iter: int | None = None,
    ) -> LpSolution:
        std = self.std
        lb = std.lb if lb is None else lb
        ub = std.ub if ub is None else ub
        if not warm or self.basis is None:
            self._cold_start(lb, ub)
        else:
            # bounds may have moved under a reused snapshot; repin any
            # nonbasic status that no longer refers to a finite bound
            nb = self.vstat != BASIC
            bad_lb = nb & (self.vstat == AT_LB) & ~np.isfinite(lb)
            bad_ub = nb & (self.vstat == AT_UB) & ~np.isfinite(ub)
            self.vstat[bad_lb] = np.where(
                np.isfinite(ub[bad_lb]), AT_UB, NB_FREE
            ).astype(np.int8)
            self.vstat[bad_ub] = np.where(
                np.isfinite(lb[bad_ub]), AT_LB, NB_FREE
            ).astype(np.int8)
        if max_iter is None:
            max_iter = 500 * (std.m + 40)
        self._fixed = np.isfinite(lb) & (ub - lb <= 0.0)
        it = 0
        for attempt in range(4):
            try:
                careful = attempt > 0
                x = self._full_x(lb, ub)
                status, it = self._iterate(
                    x, lb, ub, phase=1, it=it, max_iter=max_iter, careful=careful
                )
                if self._infeasibility(x, lb, ub) > 1e-7:
                    return self._finish("infeasible", x, it)
                status, it = self._iterate(
                    x, lb, ub, phase=2, it=it, max_iter=max_iter, careful=careful
                )
                return self._finish(status, x, it)
            except _Restart:
                if attempt == 3:
                    raise LpError("basis kept going singular after restarts")
                # a worn eta file let a bad pivot through; redo from the
                # crash basis (always factorizable), stepping cautiously
                # so the deterministic path does not repeat itself
                self._cold_start(lb, ub)
        raise LpError("unreachable")

    def _infeasibility(self, x, lb, ub):
        xb = x[self.basis]
        bl = lb[self.basis]
        bu = ub[self.basis]
        low = np.where(np.isfinite(bl), np.maximum(bl - xb, 0.0), 0.0)
        high = np.where(np.isfinite(bu), np.maximum(xb - bu, 0.0), 0.0)
        return float(low.sum() + high.sum())

    def _phase1_cost(self, x, lb, ub):
        c = np.zeros(self.std.n)
        xb = x[self.basis]
        below = np.isfinite(lb[self.basis]) & (xb < lb[self.basis] - _TOL_FEAS)
        above = np.isfinite(ub[self.basis]) & (xb > ub[self.basis] + _TOL_FEAS)
        c[self.basis[below]] = -1.0
        c[self.basis[above]] = 1.0
        return c, bool(below.any() or above.any())

    def _iterate(self, x, lb, ub, phase, it, max_iter, careful=False):
        std = self.std
        bland = careful
        stall = 0
        while True:
            if it >= max_iter:
                raise LpError(f"simplex iteration limit in phase {phase}")
            if phase == 1:
                c, any_viol = self._phase1_cost(x, lb, ub)
                if not any_viol:
                    return "feasible", it
            else:
                c = std.cost
            y = self._fac.btran(c[self.basis])
            d = std.price(c, y)
            j, direction = self._entering(d, bland)
            if j < 0:
                return ("stuck" if phase == 1 else "optimal"), it
            w = self._fac.ftran(std.a[:, j])
            step, r, new_stat = self._ratio(j, direction, w, x, lb, ub, phase, bland)
            if step is None:
                if phase == 2:
                    return "unbounded", it
                return "stuck", it
            it += 1
            if step <= _TOL_RATIO:
                stall += 1
                if stall >= _STALL_LIMIT:
                    bland = True
            else:
                stall = 0
                bland = careful
            self._pivot(j, direction, w, step, r, new_stat, x, lb, ub)
            if self._etas == 0 and r >= 0:
                # refactorization just happened inside _pivot
                x[:] = self._full_x(lb, ub)

    def _entering(self, d, bland):
        elig = (
            ((self.vstat == AT_LB) & (d < -_TOL_COST))
            | ((self.vstat == AT_UB) & (d > _TOL_COST))
            | ((self.vstat == NB_FREE) & (np.abs(d) > _TOL_COST))
        )
        elig[self.std.art0 :] = False  # artificials never re-enter
        elig[self._fixed] = False  # pinned variables cannot move
        idx = np.flatnonzero(elig)
        if idx.size == 0:
            return -1, 0.0
        if bland:
            j = int(idx[0])
        else:
            # devex pricing: steepest-edge surrogate weights
            score = d[idx] ** 2 / self._devex[idx]
            best = score.max()
            j = int(idx[np.flatnonzero(score >= best * (1.0 - 1e-12))[0]])
        if self.vstat[j] == AT_LB:
            return j, 1.0
        if self.vstat[j] == AT_UB:
            return j, -1.0
        return j, (1.0 if d[j] < 0 else -1.0)

    def _ratio(self, j, direction, w, x, lb, ub, phase, bland=False):
        """Step length, leaving row, and the leaving variable's new status.

        Returns (None, -1, 0) when the direction is unblocked. A leaving
        row of -1 with a finite step encodes a bound flip of the
        entering variable.
        """
        basis = self.basis
        delta = -direction * w
        limit = np.full(len(w), INF)
        stat = np.zeros(len(w), dtype=np.int8)
        xb = x[basis]
        bl = lb[basis]
        bu = ub[basis]
        # entries below the column's own noise floor are arithmetic
        # residue, not blocking rows; pivoting on one makes the basis
        # numerically singular
        wmax = float(np.max(np.abs(w))) if len(w) else 1.0
        act = np.abs(w) > max(_TOL_PIVOT, 1e-10 * wmax)
        if phase == 1:
            below = np.isfinite(bl) & (xb < bl - _TOL_FEAS)
            above = np.isfinite(bu) & (xb > bu + _TOL_FEAS)
        else:
            below = np.zeros(len(w), dtype=bool)
            above = below
        up = act & (delta > 0)
        dn = act & (delta < 0)
        # interior basics block at the bound they approach
        sel = up & ~below & ~above & np.isfinite(bu)
        limit[sel] = (bu[sel] - xb[sel]) / delta[sel]
        stat[sel] = AT_UB
        sel = dn & ~below & ~above & np.isfinite(bl)
        limit[sel] = (bl[sel] - xb[sel]) / delta[sel]
        stat[sel] = AT_LB
        # phase-1 violators block where they regain feasibility
        sel = up & below
        limit[sel] = (bl[sel] - xb[sel]) / delta[sel]
        stat[sel] = AT_LB
        sel = dn & above
        limit[sel] = (bu[sel] - xb[sel]) / delta[sel]
        stat[sel] = AT_UB
        np.maximum(limit, 0.0, out=limit)
        best = float(limit.min()) if len(limit) else INF
        flip_range = ub[j] - lb[j]
        if np.isfinite(flip_range) and flip_range <= best + _TOL_RATIO:
            if not np.isfinite(best) or flip_range < best - _TOL_RATIO:
                return flip_range, -1, 0
        if not np.isfinite(best):
            return None, -1, 0
        if bland:
            # anti-cycling: strict lowest variable index
            ties = np.flatnonzero(limit <= best + _TOL_RATIO)
            r = int(ties[np.argmin(basis[ties])])
        else:
            # near-ties resolved toward the biggest pivot: with mixed
            # big-M and per-unit columns a 1e-8 pivot is numerically a
            # dependency, and taking it walks the basis into singularity
            ties = np.flatnonzero(limit <= best + 1e-9)
            piv = np.abs(w[ties])
            strong = ties[piv >= piv.max() * 0.5]
            r = int(strong[np.argmin(basis[strong])])
        return float(max(limit[r], 0.0)), r, int(stat[r])

    def _pivot(self, j, direction, w, step, r, new_stat, x, lb, ub):
        if r < 0:
            # bound flip, basis unchanged
            x[self.basis] -= direction * step * w
            x[j] = ub[j] if self.vstat[j] == AT_LB else lb[j]
            self.vstat[j] = AT_UB if self.vstat[j] == AT_LB else AT_LB
            return
        leaving = int(self.basis[r])
        x[self.basis] -= direction * step * w
        x[j] = x[j] + direction * step
        # pin the leaving variable exactly onto its blocking bound
        x[leaving] = lb[leaving] if new_stat == AT_LB else ub[leaving]
        self.vstat[leaving] = new_stat
        piv = w[r]
        self._devex_update(j, r, piv, leaving)
        self.basis[r] = j
        self.vstat[j] = BASIC
        self._fac.update(r, w)
        self._etas += 1
        if self._etas >= self._refactor_every:
            try:
                self._refactor()
            except LpError:
                raise _Restart() from None

    def _devex_update(self, j, r, piv, leaving):
        std = self.std
        row = self._fac.inv_row(r)
        z = std.at_sparse @ row if std.at_sparse is not None else row @ std.a
        gamma_q = self._devex[j]
        cand = (z / piv) ** 2 * gamma_q
        peak = cand.max()
        if peak > 1e7:
            # reference framework worn out, restart weights
            self._devex[:] = 1.0
            return
        np.maximum(self._devex, cand, out=self._devex)
        self._devex[leaving] = max(gamma_q / piv**2, 1.0)

    def _finish(self, status, x, it):
        std = self.std
        y = self._fac.btran(std.cost[self.basis])
        d = std.price(std.cost, y)
        obj = float(std.cost[: std.n_struct] @ x[: std.n_struct]) * std.sign
        if status == "unbounded":
            obj = -INF if std.sign > 0 else INF
        return LpSolution(
            status=status,
            x=x[: std.n_struct].copy(),
            objective=obj,
            duals=y * std.sign,
            reduced_costs=d[: std.n_struct] * std.sign,
            iterations=it,
        )


def solve_lp(lp: LinearProgram) -> LpSolution:
    """Solve a LinearProgram to a basic optimum with duals."""
    std = Standardized(lp)
    engine = SimplexEngine(std)
    return engine.solve()


def write_lp_text(lp: LinearProgram, path: str) -> None:
    """Line-oriented model dump for checking against outside tools.

    One entity per line:
      obj min 2*x0 + -1*x3
      row r0: 2*x0 + 1*x1 <= 4
      bnd x0 [0, 10]
    """
    terms = " + ".join(
        f"{lp.cost[j]:g}*{lp.var_names[j]}" for j in range(lp.n_vars) if lp.cost[j]
    )
    lines = [f"obj {lp.sense} {terms or '0'}"]
    for i, row in enumerate(lp.rows):
        body = " + ".join(f"{v:g}*{lp.var_names[j]}" for j, v in row) or "0"
        lines.append(f"row {lp.row_names[i]}: {body} {lp.row_sense[i]} {lp.rhs[i]:g}")
    for j in range(lp.n_vars):
        lines.append(f"bnd {lp.var_names[j]} [{lp.lb[j]:g}, {lp.ub[j]:g}]")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
