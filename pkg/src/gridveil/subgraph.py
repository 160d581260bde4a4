"""Attack sub-graph identification.

The tampered region has to be self-consistent from the outside: any bus
whose state the plan shifts must sit strictly inside the region, the rim
of the region must consist of load buses only (their states stay put, so
telemetry crossing the rim still checks out), and the tripped line's two
end buses must be joined by a live path inside the region so their states
can be reconstructed from tampered measurements alone.

Growth procedure, run to a fixed point:

  1. collect the center buses (load buses the state shift touches),
  2. seed the region with them,
  3. pull in every neighbouring bus and branch,
  4. while some rim bus carries no load, absorb its neighbours too,
  5. check for an in-region live path between the tripped line's ends,
     completing it with a breadth-first shortest path when missing, and
  6. re-run the rim expansion since the path may end on non-load buses.

A region that cannot be completed (the trip split the network) is a
planning failure, reported as SubgraphError.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cases import GridCase
from .dcmodel import LineStatus, TopologyError, bfs_shortest_path

CENTER_TOL = 1e-6

__all__ = ["CENTER_TOL", "SubGraph", "SubgraphError", "identify_subgraph"]


class SubgraphError(RuntimeError):
    """No usable attack sub-graph exists for this plan."""


@dataclass
class SubGraph:
    """Bus/branch region a plan is allowed to tamper with.

    buses holds the sorted member buses, branches the induced branch
    set (both ends inside). boundary buses have at least one neighbour
    outside the region; the remaining members are interior.
    """

    buses: list[int]
    branches: list[int]
    boundary: list[int]
    center: list[int]
    complement: list[int]
    switching_buses: tuple[int, int]
    path_buses: list[int]
    path_branches: list[int]
    contains_switching_path: bool

    @property
    def interior(self) -> list[int]:
        rim = set(self.boundary)
        return [b for b in self.buses if b not in rim]

    def __contains__(self, bus: int) -> bool:
        return bus in set(self.buses)

    def to_json(self) -> dict:
        return {
            "buses": [int(b) for b in self.buses],
            "branches": [int(k) for k in self.branches],
            "boundary": [int(b) for b in self.boundary],
            "center": [int(b) for b in self.center],
            "complement": [int(b) for b in self.complement],
            "switching_buses": [int(b) for b in self.switching_buses],
            "path_buses": [int(b) for b in self.path_buses],
            "path_branches": [int(k) for k in self.path_branches],
            "contains_switching_path": bool(self.contains_switching_path),
        }


def _static_adjacency(case: GridCase) -> list[set[int]]:
    # status-blind: the region is defined on the full network because the
    # control center holds (spoofed) telemetry for every branch of it
    adj: list[set[int]] = [set() for _ in range(case.n_bus)]
    for br in case.branches:
        adj[br.from_bus].add(br.to_bus)
        adj[br.to_bus].add(br.from_bus)
    return adj


def _rim(members: set[int], adj: list[set[int]]) -> list[int]:
    return sorted(b for b in members if adj[b] - members)


def _absorb_nonload_rim(
    members: set[int], adj: list[set[int]], is_load: np.ndarray
) -> None:
    # rim buses without load leak state changes into outside telemetry,
    # so their whole neighbourhood joins the region; repeat until clean
    while True:
        bad = [b for b in _rim(members, adj) if not is_load[b]]
        if not bad:
            return
        for b in bad:
            members |= adj[b]


def identify_subgraph(
    case: GridCase,
    c: np.ndarray,
    t: int,
    s_post: LineStatus,
) -> SubGraph:
    """Grow the tamper region for attack vector c and tripped line t.

    c is the bus-indexed state shift from the planner, t the physical
    trip, s_post the post-trip line status. Raises SubgraphError when
    the trip leaves the end buses of t disconnected.
    """
    c = np.asarray(c, dtype=float)
    if c.shape != (case.n_bus,):
        raise SubgraphError("attack vector must be bus-indexed")
    if not 0 <= t < case.n_branch:
        raise SubgraphError(f"unknown switching line {t}")
    if s_post.s[t] != 0:
        raise SubgraphError(f"switching line {t} is not tripped in s_post")

    is_load = np.zeros(case.n_bus, dtype=bool)
    is_load[case.load_buses()] = True
    center = [int(b) for b in np.flatnonzero(np.abs(c) > CENTER_TOL)]
    for b in center:
        if not is_load[b]:
            raise SubgraphError(f"state shift on non-load bus {b}")

    adj = _static_adjacency(case)
    members: set[int] = set(center)
    for b in list(members):
        members |= adj[b]
    _absorb_nonload_rim(members, adj, is_load)

    br = case.branches[t]
    ends = (br.from_bus, br.to_bus)

    def induced_status() -> LineStatus:
        s = s_post.s.copy()
        for k, b in enumerate(case.branches):
            if b.from_bus not in members or b.to_bus not in members:
                s[k] = 0
        return LineStatus(s)

    path_buses: list[int] = []
    path_branches: list[int] = []
    if ends[0] in members and ends[1] in members:
        try:
            path_buses, path_branches = bfs_shortest_path(
                case, induced_status(), ends[0], ends[1]
            )
        except TopologyError:
            path_buses = []
    if not path_buses:
        try:
            path_buses, path_branches = bfs_shortest_path(
                case, s_post, ends[0], ends[1]
            )
        except TopologyError as exc:
            raise SubgraphError(
                f"tripping line {t} disconnects buses {ends[0]} and {ends[1]}"
            ) from exc
        members |= set(path_buses)
        _absorb_nonload_rim(members, adj, is_load)

    buses = sorted(members)
    inside = set(buses)
    branches = [
        k
        for k, b in enumerate(case.branches)
        if b.from_bus in inside and b.to_bus in inside
    ]
    boundary = _rim(inside, adj)
    assert all(is_load[b] for b in boundary), "rim ended up with a non-load bus"
    assert ends[0] in inside and ends[1] in inside
    complement = [b for b in range(case.n_bus) if b not in inside]

    return SubGraph(
        buses=buses,
        branches=branches,
        boundary=boundary,
        center=center,
        complement=complement,
        switching_buses=(int(ends[0]), int(ends[1])),
        path_buses=[int(b) for b in path_buses],
        path_branches=[int(k) for k in path_branches],
        contains_switching_path=True,
    )
