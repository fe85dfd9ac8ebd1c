"""Primal-dual state for partial matching on a gate graph.

Two flavors share one class.  Plain mode keeps a matching plus dual
weights constrained by: y(b) - y(a) <= d(a,b) on every edge, equality
on matching edges, y(a) = 0 on free exit gates.  Extended mode adds a
partition of space into live cells; entry gates may be matched to a
cell boundary, paying their distance to it, with two extra conditions:
y(b) <= d(b, boundary) for all b, with equality for boundary-matched b.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hierarchy import boundary_distance
from .reduction import GateGraph, Matching


class StateError(ValueError):
    pass


def default_eps(graph: GateGraph) -> float:
    """Absolute tolerance: 1e-9 scaled by the largest edge cost; 0 if exact."""
    if graph.exact:
        return 0.0
    scale = 1.0
    for a in range(graph.n_a):
        row = graph.costs_from_a(a)
        if row.size:
            scale = max(scale, float(row.max()))
    return 1e-9 * scale


@dataclass
class PathRecord:
    """An alternating path, stored as its gate sequence.

    nodes is a list of ("a"|"b", gate index) starting at an entry gate.
    kind: "free_a" augments to a free exit gate; "boundary_b" augments
    to an entry gate that becomes boundary-matched; "alt_to_b" is an
    alternating path whose terminal entry gate becomes free.
    """

    nodes: list
    kind: str
    net_cost: float = 0.0

    def arcs(self):
        """Yield (edge (a, b), in_matching) along the path."""
        for (s0, g0), (s1, g1) in zip(self.nodes, self.nodes[1:]):
            if s0 == "b" and s1 == "a":
                yield (g1, g0), False
            elif s0 == "a" and s1 == "b":
                yield (g0, g1), True
            else:
                raise StateError("path does not alternate sides")


class ExtendedMatchingState:
    """Matching, boundary assignments, duals, and the live-cell partition."""

    def __init__(self, graph: GateGraph, cells=None, cell_of_a=None, cell_of_b=None, eps=None):
        self.graph = graph
        self.matching = Matching.empty(graph.n_a, graph.n_b)
        self.boundary_matched = np.zeros(graph.n_b, dtype=bool)
        dtype = np.int64 if (graph.exact and cells is None) else np.float64
        self.y_a = np.zeros(graph.n_a, dtype=dtype)
        self.y_b = np.zeros(graph.n_b, dtype=dtype)
        self.cells = cells  # dict cell_id -> (d, 2) bounds; None = plain mode
        self.cell_of_a = cell_of_a
        self.cell_of_b = cell_of_b
        self.phi = 0.0
        self.eps = default_eps(graph) if eps is None else eps

    # -- basic views --------------------------------------------------------

    @property
    def extended(self) -> bool:
        return self.cells is not None

    @property
    def q(self) -> float:
        return self.graph.model.q

    def free_b_mask(self) -> np.ndarray:
        return (self.matching.match_of_b < 0) & ~self.boundary_matched

    def free_a_mask(self) -> np.ndarray:
        return self.matching.match_of_a < 0

    def extended_size(self) -> int:
        return self.matching.size + int(self.boundary_matched.sum())

    def slack_edge(self, a: int, b: int):
        if not self.graph.has_edge(a, b):
            raise StateError(f"({a}, {b}) is not an edge")
        return self.graph.cost(a, b) - self.y_b[b] + self.y_a[a]

    def boundary_dist(self, b: int):
        if not self.extended:
            raise StateError("no cell partition in plain mode")
        bounds = self.cells[int(self.cell_of_b[b])]
        return boundary_distance(self.graph.b_pts[b], bounds, self.q)

    def slack_point(self, b: int):
        return self.boundary_dist(b) - self.y_b[b]

    def extended_cost(self):
        total = self.matching.cost(self.graph)
        for b in np.flatnonzero(self.boundary_matched):
            total = total + self.boundary_dist(int(b))
        return total

    # -- path application ---------------------------------------------------

    def apply_path(self, path: PathRecord) -> None:
        side0, b0 = path.nodes[0]
        if side0 != "b":
            raise StateError("paths must start at an entry gate")
        if self.matching.match_of_b[b0] >= 0 or self.boundary_matched[b0]:
            raise StateError("path must start at a free entry gate")
        add, remove = [], []
        for (a, b), in_m in path.arcs():
            cur = int(self.matching.match_of_a[a])
            if in_m != (cur == b):
                raise StateError("path arcs disagree with the matching")
            (remove if in_m else add).append((a, b))
        for a, b in remove:
            self.matching.match_of_a[a] = -1
            self.matching.match_of_b[b] = -1
        for a, b in add:
            if self.matching.match_of_a[a] >= 0 or self.matching.match_of_b[b] >= 0:
                raise StateError("path is not vertex-disjoint against the matching")
            self.matching.match_of_a[a] = b
            self.matching.match_of_b[b] = a
        side_t, g_t = path.nodes[-1]
        if path.kind == "boundary_b":
            if side_t != "b":
                raise StateError("boundary path must end at an entry gate")
            self.boundary_matched[g_t] = True
            self.y_b[g_t] = self.boundary_dist(g_t)
        elif path.kind == "free_a":
            if side_t != "a":
                raise StateError("free_a path must end at an exit gate")
        elif path.kind == "alt_to_b":
            if side_t != "b":
                raise StateError("alternating path must end at an entry gate")
        else:
            raise StateError(f"unknown path kind {path.kind!r}")

    def net_cost_direct(self, path: PathRecord):
        total = 0.0
        for (a, b), in_m in path.arcs():
            c = self.graph.cost(a, b)
            total = total - c if in_m else total + c
        if path.kind == "boundary_b":
            total = total + self.boundary_dist(path.nodes[-1][1])
        return total

    def net_cost_slack(self, path: PathRecord):
        """Net cost via the slack identity; equals the direct formula."""
        total = self.y_b[path.nodes[0][1]]
        for (a, b), in_m in path.arcs():
            if not in_m:
                total = total + self.slack_edge(a, b)
        if path.kind == "boundary_b":
            total = total + self.slack_point(path.nodes[-1][1])
        return total

    # -- feasibility audit ---------------------------------------------------

    def check_feasibility(self, eps=None) -> list:
        """Audit the dual conditions; returns violations, never raises.

        O(nA * nB): iterates every implicit edge.  Meant for tests and
        for the verify command, not for timed runs.
        """
        eps = self.eps if eps is None else eps
        g = self.graph
        bad = []

        def flag(cond, detail, mag):
            bad.append({"condition": cond, "detail": detail, "magnitude": float(mag)})

        if float(self.y_a.min() if self.y_a.size else 0) < -eps:
            a = int(np.argmin(self.y_a))
            flag("nonnegative", f"y(a{a}) < 0", -self.y_a[a])
        if float(self.y_b.min() if self.y_b.size else 0) < -eps:
            b = int(np.argmin(self.y_b))
            flag("nonnegative", f"y(b{b}) < 0", -self.y_b[b])

        orders_b = np.asarray(g.b_order)
        for a in range(g.n_a):
            d_row = g.costs_from_a(a)
            edge_mask = int(g.a_order[a]) < orders_b
            viol = (self.y_b - self.y_a[a] - d_row > eps) & edge_mask
            for b in np.flatnonzero(viol):
                flag(
                    "edge",
                    f"y(b{b}) - y(a{a}) > d on edge ({a}, {b})",
                    self.y_b[b] - self.y_a[a] - d_row[b],
                )
        for a, b in self.matching.pairs():
            gap = abs(self.y_b[b] - self.y_a[a] - g.cost(a, b))
            if gap > eps:
                flag("matching-edge", f"matching edge ({a}, {b}) not tight", gap)
        for a in np.flatnonzero(self.free_a_mask()):
            if abs(self.y_a[a]) > eps:
                flag("free-a", f"free a{a} has nonzero dual", abs(self.y_a[a]))

        if self.extended:
            for b in range(g.n_b):
                s = self.slack_point(b)
                if s < -eps:
                    flag("point", f"y(b{b}) exceeds its boundary distance", -s)
                if self.boundary_matched[b] and abs(s) > eps:
                    flag(
                        "boundary-matched",
                        f"boundary-matched b{b} not tight against its cell",
                        abs(s),
                    )
            for a, b in self.matching.pairs():
                if int(self.cell_of_a[a]) != int(self.cell_of_b[b]):
                    flag("no-cross", f"matching edge ({a}, {b}) spans two cells", 0.0)
        return bad

    def to_json(self) -> dict:
        return {
            "matching": self.matching.to_json(),
            "boundary_matched": np.flatnonzero(self.boundary_matched).tolist(),
            "y_a": self.y_a.tolist(),
            "y_b": self.y_b.tolist(),
            "phi": float(self.phi),
            "violations": self.check_feasibility(),
        }
