"""Offline k-server chaining via minimum-cost partial bipartite matching."""

from .geometry import (
    CostModel,
    KspInstance,
    KspiInstance,
    generate,
    load_instance,
    save_instance,
)
from .reduction import (
    GateGraph,
    Matching,
    Partitioning,
    build_gate_graph,
    build_matching_graph,
    matching_to_partitioning,
    partitioning_cost,
    partitioning_to_matching,
)
from .nk_solver import solve_nk, solve_nk_kspi
from .subquadratic import SolveResult, solve, solve_grs
from .oracle import (
    OracleResult,
    brute_force_ksp,
    brute_force_kspi,
    hungarian_explicit,
    verify_certificate,
)

__version__ = "0.1.0"

__all__ = [
    "CostModel",
    "KspInstance",
    "KspiInstance",
    "GateGraph",
    "Matching",
    "Partitioning",
    "SolveResult",
    "OracleResult",
    "generate",
    "load_instance",
    "save_instance",
    "build_gate_graph",
    "build_matching_graph",
    "matching_to_partitioning",
    "partitioning_to_matching",
    "partitioning_cost",
    "solve_nk",
    "solve_nk_kspi",
    "solve",
    "solve_grs",
    "brute_force_ksp",
    "brute_force_kspi",
    "hungarian_explicit",
    "verify_certificate",
]
