"""Linear network model and graph services on top of a GridCase.

Builds the nodal and branch susceptance matrices used by the DC power
flow, the DC OPF, and the attack optimization. All matrices are dense
and per-unit on the case base.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gridveil.cases import GridCase


class TopologyError(ValueError):
    """Raised for disconnected networks or invalid status vectors."""


@dataclass
class LineStatus:
    """Per-branch in-service vector, 1 in service and 0 out."""

    s: np.ndarray

    @classmethod
    def all_in_service(cls, case: GridCase) -> "LineStatus":
        return cls(np.array([br.status for br in case.branches], dtype=np.int8))

    def with_tripped(self, *branches: int) -> "LineStatus":
        s = self.s.copy()
        for k in branches:
            s[k] = 0
        return LineStatus(s)

    def in_service(self) -> list[int]:
        return [int(k) for k in np.flatnonzero(self.s == 1)]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, LineStatus) and np.array_equal(self.s, other.s)


@dataclass
class DcModel:
    """Dense DC network matrices for one topology.

    h2 maps bus angles to branch flows for every branch of the case
    regardless of status; h1 is the nodal susceptance matrix with the
    status applied, so h1 = a_kn @ diag(s) @ h2 holds by construction.
    """

    case: GridCase
    status: LineStatus
    h1: np.ndarray  # n_bus x n_bus
    h2: np.ndarray  # n_branch x n_bus
    a_kn: np.ndarray  # n_bus x n_branch incidence
    a_gn: np.ndarray  # n_bus x n_gen
    b_series: np.ndarray  # per-branch susceptance 1/x
    ratings_pu: np.ndarray  # per-branch MVA rating on the case base

    @property
    def n_bus(self) -> int:
        return self.case.n_bus

    @property
    def n_branch(self) -> int:
        return self.case.n_branch

    def solve_angles(self, injections_pu: np.ndarray) -> np.ndarray:
        """Bus angles for given net injections, slack angle pinned to zero.

        The slack row and column are removed before inverting, which
        requires the in-service network to be connected.
        """
        if not is_connected(self.case, self.status):
            raise TopologyError("in-service network is disconnected")
        n = self.n_bus
        slack = self.case.slack_bus
        keep = [i for i in range(n) if i != slack]
        reduced = self.h1[np.ix_(keep, keep)]
        try:
            theta_red = np.linalg.solve(reduced, injections_pu[keep])
        except np.linalg.LinAlgError as exc:
            raise TopologyError("singular network, check connectivity") from exc
        theta = np.zeros(n)
        theta[keep] = theta_red
        return theta

    def branch_flows(self, theta: np.ndarray) -> np.ndarray:
        """Per-branch DC flows diag(s) h2 theta in per-unit."""
        return self.status.s * (self.h2 @ theta)


def build_dc_model(case: GridCase, status: LineStatus | None = None) -> DcModel:
    """Assemble the DC matrices for a case under a line status."""
    if status is None:
        status = LineStatus.all_in_service(case)
    s = np.asarray(status.s)
    if s.shape != (case.n_branch,):
        raise TopologyError(
            f"status vector has shape {s.shape}, expected ({case.n_branch},)"
        )
    if not np.isin(s, (0, 1)).all():
        raise TopologyError("status entries must be 0 or 1")

    n_bus, n_br = case.n_bus, case.n_branch
    b_series = np.array([1.0 / br.x for br in case.branches])
    h2 = np.zeros((n_br, n_bus))
    a_kn = np.zeros((n_bus, n_br))
    for k, br in enumerate(case.branches):
        h2[k, br.from_bus] = b_series[k]
        h2[k, br.to_bus] = -b_series[k]
        a_kn[br.from_bus, k] = 1.0
        a_kn[br.to_bus, k] = -1.0
    h1 = a_kn @ (s[:, None] * h2)
    ratings = np.array([br.rating_mva for br in case.branches]) / case.base_mva
    return DcModel(
        case=case,
        status=LineStatus(s.astype(np.int8)),
        h1=h1,
        h2=h2,
        a_kn=a_kn,
        a_gn=case.gen_bus_matrix(),
        b_series=b_series,
        ratings_pu=ratings,
    )


def _adjacency(case: GridCase, s: np.ndarray) -> list[list[tuple[int, int]]]:
    """In-service (branch, other_bus) pairs per bus, ascending branch index."""
    adj: list[list[tuple[int, int]]] = [[] for _ in range(case.n_bus)]
    for k, br in enumerate(case.branches):
        if s[k] != 1:
            continue
        adj[br.from_bus].append((k, br.to_bus))
        adj[br.to_bus].append((k, br.from_bus))
    return adj


def bfs_shortest_path(
    case: GridCase, status: LineStatus, start: int, goal: int
) -> tuple[list[int], list[int]]:
    """Shortest bus path and its branches between two buses.

    Breadth first search over in-service branches; ties between equal
    length paths resolve by ascending branch index at each expansion.
    Raises TopologyError when the pair is disconnected.
    """
    if start == goal:
        return [start], []
    adj = _adjacency(case, status.s)
    parent: dict[int, tuple[int, int]] = {}  # bus -> (parent bus, branch)
    seen = {start}
    frontier = [start]
    while frontier:
        nxt: list[int] = []
        for bus in frontier:
            for k, other in adj[bus]:
                if other in seen:
                    continue
                seen.add(other)
                parent[other] = (bus, k)
                if other == goal:
                    buses = [goal]
                    branches = []
                    cur = goal
                    while cur != start:
                        prev, br = parent[cur]
                        branches.append(br)
                        buses.append(prev)
                        cur = prev
                    return buses[::-1], branches[::-1]
                nxt.append(other)
        frontier = nxt
    raise TopologyError(f"buses {start} and {goal} are not connected")


def is_connected(case: GridCase, status: LineStatus) -> bool:
    """True when every bus is reachable over in-service branches."""
    adj = _adjacency(case, status.s)
    seen = {0}
    stack = [0]
    while stack:
        bus = stack.pop()
        for _, other in adj[bus]:
            if other not in seen:
                seen.add(other)
                stack.append(other)
    return len(seen) == case.n_bus


def islanding_lines(case: GridCase, status: LineStatus | None = None) -> list[int]:
    """Branches whose single removal disconnects the network."""
    if status is None:
        status = LineStatus.all_in_service(case)
    out = []
    for k in status.in_service():
        if not is_connected(case, status.with_tripped(k)):
            out.append(k)
    return out
