"""Gate graph construction and conversions between matchings and partitionings.

Each request r_i contributes an exit gate a_i and an entry gate b_i at the
same location.  Edges run from a_i to b_j exactly when j > i, so matchings
trace out order-preserving chains.  Server gates (initial locations) connect
to every entry gate.  The graph is implicit: the edge predicate plus the
cost function define it, and edges are never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    CostModel,
    KspInstance,
    KspiInstance,
    cost,
    cost_to_many,
    is_exact,
)


class ReductionError(ValueError):
    pass


# a-gate order for server gates and for all-pairs (matching-mode) graphs:
# compares below every entry-gate order, so such gates connect to all of B.
ALL = -1


@dataclass(frozen=True)
class GateGraph:
    """Implicit bipartite graph between exit gates (A) and entry gates (B)."""

    a_pts: np.ndarray  # (nA, d)
    b_pts: np.ndarray  # (nB, d)
    a_order: np.ndarray  # request index of each a-gate, or ALL
    b_order: np.ndarray  # request index of each b-gate
    model: CostModel
    n_requests: int
    n_servers: int = 0

    @property
    def n_a(self) -> int:
        return int(self.a_pts.shape[0])

    @property
    def n_b(self) -> int:
        return int(self.b_pts.shape[0])

    @property
    def exact(self) -> bool:
        return (
            self.model.p == 1
            and self.model.q == 1
            and np.issubdtype(self.a_pts.dtype, np.integer)
            and np.issubdtype(self.b_pts.dtype, np.integer)
        )

    def has_edge(self, a: int, b: int) -> bool:
        return int(self.a_order[a]) < int(self.b_order[b])

    def cost(self, a: int, b: int):
        c = cost(self.a_pts[a], self.b_pts[b], self.model)
        return int(c) if self.exact else float(c)

    def costs_from_a(self, a: int) -> np.ndarray:
        return cost_to_many(self.a_pts[a], self.b_pts, self.model)

    def costs_from_b(self, b: int) -> np.ndarray:
        return cost_to_many(self.b_pts[b], self.a_pts, self.model)

    def edge_count(self) -> int:
        orders_a = np.asarray(self.a_order)[:, None]
        orders_b = np.asarray(self.b_order)[None, :]
        return int((orders_a < orders_b).sum())

    def edges(self):
        """Iterate all (a, b) index pairs.  Test/oracle use only: Θ(nA·nB)."""
        for a in range(self.n_a):
            oa = int(self.a_order[a])
            for b in range(self.n_b):
                if oa < int(self.b_order[b]):
                    yield a, b


def build_gate_graph(instance) -> GateGraph:
    """Gate graph for a KspInstance or KspiInstance."""
    if isinstance(instance, KspiInstance):
        reqs = instance.requests
        n = instance.n
        a_pts = np.concatenate([reqs, instance.servers], axis=0)
        a_order = np.concatenate(
            [np.arange(n), np.full(instance.k, ALL, dtype=np.int64)]
        )
        return GateGraph(
            a_pts=a_pts,
            b_pts=reqs,
            a_order=a_order,
            b_order=np.arange(n),
            model=instance.model,
            n_requests=n,
            n_servers=instance.k,
        )
    if isinstance(instance, KspInstance):
        n = instance.n
        return GateGraph(
            a_pts=instance.requests,
            b_pts=instance.requests,
            a_order=np.arange(n),
            b_order=np.arange(n),
            model=instance.model,
            n_requests=n,
        )
    raise ReductionError(f"unsupported instance type {type(instance)!r}")


def build_matching_graph(a_pts, b_pts, model: CostModel) -> GateGraph:
    """Complete bipartite graph between two point sets (all-pairs mode)."""
    a_pts = np.asarray(a_pts)
    b_pts = np.asarray(b_pts)
    return GateGraph(
        a_pts=a_pts,
        b_pts=b_pts,
        a_order=np.full(a_pts.shape[0], ALL, dtype=np.int64),
        b_order=np.zeros(b_pts.shape[0], dtype=np.int64),
        model=model,
        n_requests=b_pts.shape[0],
    )


@dataclass
class Matching:
    """Vertex-disjoint edge set stored as two partner arrays (-1 = free)."""

    match_of_a: np.ndarray
    match_of_b: np.ndarray

    @classmethod
    def empty(cls, n_a: int, n_b: int) -> "Matching":
        return cls(
            match_of_a=np.full(n_a, -1, dtype=np.int64),
            match_of_b=np.full(n_b, -1, dtype=np.int64),
        )

    @classmethod
    def from_pairs(cls, pairs, n_a: int, n_b: int) -> "Matching":
        m = cls.empty(n_a, n_b)
        for a, b in pairs:
            if m.match_of_a[a] != -1 or m.match_of_b[b] != -1:
                raise ReductionError(f"pair ({a}, {b}) is not vertex-disjoint")
            m.match_of_a[a] = b
            m.match_of_b[b] = a
        return m

    @property
    def size(self) -> int:
        return int((self.match_of_a >= 0).sum())

    def pairs(self):
        return [(int(a), int(b)) for a, b in enumerate(self.match_of_a) if b >= 0]

    def validate(self, g: GateGraph) -> None:
        for a, b in self.pairs():
            if not g.has_edge(a, b):
                raise ReductionError(f"matching pair ({a}, {b}) is not a graph edge")
            if self.match_of_b[b] != a:
                raise ReductionError("partner arrays inconsistent")

    def cost(self, g: GateGraph):
        total = 0
        for a, b in self.pairs():
            total = total + g.cost(a, b)
        return total

    def copy(self) -> "Matching":
        return Matching(self.match_of_a.copy(), self.match_of_b.copy())

    def to_json(self, g: GateGraph | None = None) -> dict:
        out = {"pairs": [[a, b] for a, b in self.pairs()]}
        if g is not None:
            out["cost"] = g.cost(0, 0) * 0 + self.cost(g)
        return out


@dataclass
class Partitioning:
    """Order-preserving split of request indices into k chains.

    For k-SPI, servers[j] is the server index heading subsequence j; for
    plain k-SP every entry is None.
    """

    subsequences: list
    servers: list | None = None

    @property
    def k(self) -> int:
        return len(self.subsequences)

    def validate(self, n: int) -> None:
        seen = set()
        for chain in self.subsequences:
            if any(chain[i] >= chain[i + 1] for i in range(len(chain) - 1)):
                raise ReductionError(f"subsequence {chain} not strictly increasing")
            seen.update(chain)
        if seen != set(range(n)):
            raise ReductionError("subsequences do not partition the requests")
        if self.servers is not None and len(self.servers) != self.k:
            raise ReductionError("one server per subsequence required")

    def to_json(self, cost_value=None) -> dict:
        return {
            "subsequences": [list(map(int, c)) for c in self.subsequences],
            "servers": (
                [None] * self.k
                if self.servers is None
                else [None if s is None else int(s) for s in self.servers]
            ),
            "cost": cost_value,
        }


def partitioning_cost(p: Partitioning, instance):
    """Sum of consecutive costs along each chain (k-SPI: server leg included)."""
    model = instance.model
    reqs = instance.requests
    exact = is_exact(instance)
    total = 0
    for j, chain in enumerate(p.subsequences):
        prev = None
        if p.servers is not None and p.servers[j] is not None:
            prev = instance.servers[p.servers[j]]
        for idx in chain:
            cur = reqs[idx]
            if prev is not None:
                c = cost(prev, cur, model)
                total = total + (int(c) if exact else float(c))
            prev = cur
    return total


def partitioning_to_matching(p: Partitioning, g: GateGraph) -> Matching:
    """One matching edge per consecutive pair inside each chain."""
    m = Matching.empty(g.n_a, g.n_b)
    n = g.n_requests
    for j, chain in enumerate(p.subsequences):
        prev_a = None
        if p.servers is not None and p.servers[j] is not None:
            prev_a = n + p.servers[j]
        for idx in chain:
            if prev_a is not None:
                m.match_of_a[prev_a] = idx
                m.match_of_b[idx] = prev_a
            prev_a = idx
    return m


def matching_to_partitioning(g: GateGraph, m: Matching) -> Partitioning:
    """Walk matching chains into a partitioning of the same cost.

    For k-SP, chains start at free entry gates; for k-SPI, at server gates
    (the matching must cover all of B).
    """
    n = g.n_requests
    if g.n_servers > 0:
        if int((m.match_of_b >= 0).sum()) != n:
            raise ReductionError("k-SPI conversion needs a matching covering all of B")
        subsequences = []
        servers = []
        for srv in range(g.n_servers):
            a_gate = n + srv
            chain = []
            b = int(m.match_of_a[a_gate])
            while b >= 0:
                chain.append(b)
                b = int(m.match_of_a[b])
            subsequences.append(chain)
            servers.append(srv)
        p = Partitioning(subsequences=subsequences, servers=servers)
        p.validate(n)
        return p
    k = n - m.size
    subsequences = []
    for b0 in range(n):
        if m.match_of_b[b0] >= 0:
            continue
        chain = [b0]
        nxt = int(m.match_of_a[b0])
        while nxt >= 0:
            chain.append(nxt)
            nxt = int(m.match_of_a[nxt])
        subsequences.append(chain)
    if len(subsequences) != k:
        raise ReductionError(
            f"matching of size {m.size} produced {len(subsequences)} chains, expected {k}"
        )
    p = Partitioning(subsequences=subsequences)
    p.validate(n)
    return p


# ---------------------------------------------------------------------------
# Lifting a bipartite matching instance to an n-SPI instance.


def l1_diameter(a_pts: np.ndarray, b_pts: np.ndarray):
    pts = np.concatenate([a_pts, b_pts], axis=0)
    exact = np.issubdtype(pts.dtype, np.integer)
    best = 0
    for i in range(pts.shape[0] - 1):
        row = np.abs(pts[i + 1 :] - pts[i]).sum(axis=1)
        m = row.max()
        if m > best:
            best = m
    return int(best) if exact else float(best)


def matching_to_nspi_instance(a_pts, b_pts, model: CostModel) -> KspiInstance:
    """Lift an n-point bipartite matching instance to (d+1)-dim n-SPI.

    Servers are the B points with last coordinate 0; request i is the i-th
    A point with last coordinate 3**(n-i+1) * D for D the l1 diameter of
    A u B.  Solving the n-SPI instance optimally pairs each server with one
    request, recovering a minimum-cost perfect matching of A and B.
    """
    a_pts = np.asarray(a_pts)
    b_pts = np.asarray(b_pts)
    if a_pts.shape != b_pts.shape:
        raise ReductionError("A and B must have the same shape")
    n, d = a_pts.shape
    if model.p != 1:
        raise ReductionError("the lift is stated for l1 costs (p=1)")
    if model.q != 1:
        import warnings

        warnings.warn(
            "q > 1 lift is experimental: no correctness guarantee", stacklevel=2
        )
    if n > 30:
        raise OverflowError(
            "lifted coordinate 3**n overflows doubles for n > 30; use exact "
            "integer inputs at smaller n"
        )
    diam = l1_diameter(a_pts, b_pts)
    exact = np.issubdtype(a_pts.dtype, np.integer)
    dtype = np.int64 if exact else np.float64
    lifted_reqs = np.zeros((n, d + 1), dtype=dtype)
    lifted_srv = np.zeros((n, d + 1), dtype=dtype)
    lifted_reqs[:, :d] = a_pts
    lifted_srv[:, :d] = b_pts
    for i in range(n):
        lifted_reqs[i, d] = 3 ** (n - i + 1) * diam
    base = KspInstance(d=d + 1, model=model, requests=lifted_reqs, k=n)
    return KspiInstance(base=base, servers=lifted_srv)


def nspi_lift_offset(n: int, diam):
    """Constant cost gap between the lifted partitioning and the matching.

    Equals the sum of the altitudes given to the lifted requests: in the
    optimum every chain is a single request, so each chain pays its
    request's altitude once on top of the original server-request cost.
    """
    return sum(3 ** (n - i + 1) * diam for i in range(n))


def matching_from_nspi_partitioning(p: Partitioning) -> list:
    """Read the server -> request assignment off an optimal lifted solution."""
    pairs = []
    for j, chain in enumerate(p.subsequences):
        if len(chain) != 1:
            raise ReductionError(
                "lifted optimum must assign exactly one request per server"
            )
        pairs.append((chain[0], p.servers[j]))  # (A index, B index)
    return sorted(pairs)
