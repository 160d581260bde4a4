"""Grid case records and a parser for the standard matrix-block case format.

Cases are plain text files holding bus, generator, branch, and generator
cost matrices. Quantities stay in physical units here (MW, MVAr, MVA);
computational modules convert to per-unit on the system base.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np


class CaseError(ValueError):
    """Raised for unreadable or internally inconsistent case data."""


@dataclass
class Bus:
    number: int
    bus_type: int  # 1 load, 2 generator, 3 slack
    p_load_mw: float
    q_load_mvar: float
    gs_mw: float
    bs_mvar: float
    base_kv: float
    vmax: float
    vmin: float


@dataclass
class Generator:
    bus: int  # internal bus index
    p_set_mw: float
    q_set_mvar: float
    qmax_mvar: float
    qmin_mvar: float
    v_set: float
    status: int
    pmax_mw: float
    pmin_mw: float


@dataclass
class Branch:
    from_bus: int  # internal bus index
    to_bus: int
    r: float
    x: float
    charging_b: float
    rating_mva: float
    tap: float
    shift_deg: float
    status: int


@dataclass
class CostCurve:
    """Polynomial production cost c2*P^2 + c1*P + c0 in $/h, P in MW."""

    c2: float
    c1: float
    c0: float

    def value(self, p_mw: float) -> float:
        return self.c2 * p_mw * p_mw + self.c1 * p_mw + self.c0

    def marginal(self, p_mw: float) -> float:
        return 2.0 * self.c2 * p_mw + self.c1


@dataclass
class GridCase:
    name: str
    base_mva: float
    buses: list[Bus]
    generators: list[Generator]
    branches: list[Branch]
    costs: list[CostCurve]
    slack_bus: int = field(init=False)

    def __post_init__(self) -> None:
        slack = [i for i, b in enumerate(self.buses) if b.bus_type == 3]
        if len(slack) != 1:
            raise CaseError(
                f"case must contain exactly one slack bus, found {len(slack)}"
            )
        self.slack_bus = slack[0]

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    def p_load_mw(self) -> np.ndarray:
        return np.array([b.p_load_mw for b in self.buses])

    def q_load_mvar(self) -> np.ndarray:
        return np.array([b.q_load_mvar for b in self.buses])

    def load_buses(self) -> list[int]:
        """Indices of buses with nonzero active load."""
        return [i for i, b in enumerate(self.buses) if b.p_load_mw > 0.0]

    def gens_at(self, bus: int) -> list[int]:
        return [g for g, gen in enumerate(self.generators) if gen.bus == bus]

    def branches_at(self, bus: int) -> list[int]:
        return [
            k
            for k, br in enumerate(self.branches)
            if br.from_bus == bus or br.to_bus == bus
        ]

    def gen_bus_matrix(self) -> np.ndarray:
        """Bus-by-generator connection matrix."""
        a = np.zeros((self.n_bus, self.n_gen))
        for g, gen in enumerate(self.generators):
            a[gen.bus, g] = 1.0
        return a


_BLOCK_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[")
_SCALAR_RE = re.compile(r"mpc\.(\w+)\s*=\s*([^;\[]+);")

_REQUIRED_BLOCKS = ("bus", "gen", "branch", "gencost")

# minimum column counts for each matrix block
_MIN_COLS = {"bus": 13, "gen": 10, "branch": 11, "gencost": 4}


def _strip_comment(line: str) -> str:
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def parse_case(text: str, name: str = "case") -> GridCase:
    """Parse case text in the standard matrix-block format into a GridCase.

    Raises CaseError with a line number for syntax problems and for
    inconsistent data (dangling bus references, duplicate slack, missing
    cost rows).
    """
    blocks: dict[str, list[list[float]]] = {}
    scalars: dict[str, str] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        raw = _strip_comment(lines[i])
        m = _BLOCK_RE.search(raw)
        if m:
            field_name = m.group(1)
            rows: list[list[float]] = []
            i += 1
            closed = False
            while i < len(lines):
                row_text = _strip_comment(lines[i]).strip()
                if row_text.startswith("]"):
                    closed = True
                    break
                if row_text:
                    row_text = row_text.rstrip(";").strip()
                    if row_text:
                        try:
                            rows.append([float(tok) for tok in row_text.split()])
                        except ValueError as exc:
                            raise CaseError(
                                f"line {i + 1}: bad numeric row in mpc.{field_name}: "
                                f"{row_text!r}"
                            ) from exc
                i += 1
            if not closed:
                raise CaseError(f"unterminated matrix block mpc.{field_name}")
            blocks[field_name] = rows
        else:
            s = _SCALAR_RE.search(raw)
            if s:
                scalars[s.group(1)] = s.group(2).strip().strip("'\"")
        i += 1

    for block in _REQUIRED_BLOCKS:
        if block not in blocks:
            raise CaseError(f"missing required block mpc.{block}")
        # a single-bus system has an explicitly empty branch matrix
        if not blocks[block] and block != "branch":
            raise CaseError(f"empty block mpc.{block}")
        for r, row in enumerate(blocks[block]):
            if len(row) < _MIN_COLS[block]:
                raise CaseError(
                    f"mpc.{block} row {r + 1} has {len(row)} columns, "
                    f"expected at least {_MIN_COLS[block]}"
                )

    if "baseMVA" not in scalars:
        raise CaseError("missing mpc.baseMVA")
    base_mva = float(scalars["baseMVA"])
    if base_mva <= 0:
        raise CaseError("baseMVA must be positive")

    buses = []
    number_to_index: dict[int, int] = {}
    for r, row in enumerate(blocks["bus"]):
        number = int(row[0])
        if number in number_to_index:
            raise CaseError(f"mpc.bus row {r + 1}: duplicate bus number {number}")
        number_to_index[number] = r
        bus_type = int(row[1])
        if bus_type not in (1, 2, 3):
            raise CaseError(f"mpc.bus row {r + 1}: unknown bus type {bus_type}")
        buses.append(
            Bus(
                number=number,
                bus_type=bus_type,
                p_load_mw=row[2],
                q_load_mvar=row[3],
                gs_mw=row[4],
                bs_mvar=row[5],
                base_kv=row[9],
                vmax=row[11],
                vmin=row[12],
            )
        )

    gens = []
    for r, row in enumerate(blocks["gen"]):
        number = int(row[0])
        if number not in number_to_index:
            raise CaseError(f"mpc.gen row {r + 1} references nonexistent bus {number}")
        gens.append(
            Generator(
                bus=number_to_index[number],
                p_set_mw=row[1],
                q_set_mvar=row[2],
                qmax_mvar=row[3],
                qmin_mvar=row[4],
                v_set=row[5],
                status=int(row[7]),
                pmax_mw=row[8],
                pmin_mw=row[9],
            )
        )

    branches = []
    for r, row in enumerate(blocks["branch"]):
        f_num, t_num = int(row[0]), int(row[1])
        for num in (f_num, t_num):
            if num not in number_to_index:
                raise CaseError(
                    f"mpc.branch row {r + 1} references nonexistent bus {num}"
                )
        if row[3] <= 0:
            raise CaseError(f"mpc.branch row {r + 1}: reactance must be positive")
        branches.append(
            Branch(
                from_bus=number_to_index[f_num],
                to_bus=number_to_index[t_num],
                r=row[2],
                x=row[3],
                charging_b=row[4],
                rating_mva=row[5],
                tap=row[8] if row[8] != 0 else 1.0,
                shift_deg=row[9],
                status=int(row[10]),
            )
        )

    if len(blocks["gencost"]) != len(gens):
        raise CaseError(
            f"mpc.gencost has {len(blocks['gencost'])} rows for {len(gens)} generators"
        )
    costs = []
    for r, row in enumerate(blocks["gencost"]):
        model, ncost = int(row[0]), int(row[3])
        if model != 2:
            raise CaseError(
                f"mpc.gencost row {r + 1}: only polynomial cost model 2 is supported"
            )
        coeffs = row[4 : 4 + ncost]
        if len(coeffs) != ncost:
            raise CaseError(f"mpc.gencost row {r + 1}: expected {ncost} coefficients")
        # pad to quadratic form
        padded = [0.0] * (3 - ncost) + list(coeffs) if ncost < 3 else list(coeffs)
        if ncost > 3:
            raise CaseError(
                f"mpc.gencost row {r + 1}: polynomial degree above 2 is not supported"
            )
        costs.append(CostCurve(c2=padded[0], c1=padded[1], c0=padded[2]))

    return GridCase(
        name=name,
        base_mva=base_mva,
        buses=buses,
        generators=gens,
        branches=branches,
        costs=costs,
    )


def parse_case_file(path: str) -> GridCase:
    """Read and parse a case file from disk."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    name = re.sub(r"\.m$", "", path.rsplit("/", 1)[-1])
    return parse_case(text, name=name)


def load_bundled_case(name: str) -> GridCase:
    """Load one of the cases shipped with the package.

    Available names include "case24_ieee_rts", "case3_loop" and "case5_ring".
    """
    ref = resources.files("gridveil.data").joinpath(f"{name}.m")
    try:
        text = ref.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise CaseError(f"no bundled case named {name!r}") from exc
    return parse_case(text, name=name)
