"""Synthesis and simulation of unobservable state-and-topology grid attacks.

The package bundles a grid case parser, AC/DC power flow, weighted least
squares state estimation with bad data checks, a self-contained LP/MILP
engine, a DC optimal power flow, and the two-stage attack optimization
plus the multi-period attack timeline built on top of them.
"""

from gridveil.cases import (
    Branch,
    Bus,
    CaseError,
    CostCurve,
    Generator,
    GridCase,
    load_bundled_case,
    parse_case,
    parse_case_file,
)
from gridveil.dcmodel import (
    DcModel,
    LineStatus,
    TopologyError,
    bfs_shortest_path,
    build_dc_model,
    is_connected,
    islanding_lines,
)

__version__ = "0.1.0"
