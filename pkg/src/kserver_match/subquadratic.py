"""Hierarchical primal-dual solver for partial matching on gate graphs.

The solver partitions space into the leaf cells of a hierarchy and
maintains a minimum-cost extended matching: entry gates may match to a
cell boundary instead of an exit gate.  A priority queue keys each live
cell by the net-cost of its cheapest augmenting path; the global
threshold phi is the last extracted key and never decreases.  When the
free entry gates are down to the target count, the two mergeable live
cells of smallest perimeter are replaced by their parent, the erased
divider releases its boundary-matched gates, and a local loop re-lifts
their duals to phi.  When only the root cell remains, no gate can
afford its boundary and the matching is an ordinary optimum.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    CostModel,
    KspInstance,
    KspiInstance,
    normalize,
)
from .hierarchy import (
    Hierarchy,
    boundary_distance,
    boundary_distances,
    build_hierarchy,
    default_lambda,
)
from .matching_state import ExtendedMatchingState, PathRecord
from .reduction import (
    GateGraph,
    Matching,
    Partitioning,
    build_gate_graph,
    build_matching_graph,
    matching_to_partitioning,
    partitioning_cost,
)
from .search_engine import INF, cell_view, run_dijkstra

from .nk_solver import InvariantError


@dataclass
class SolverTrace:
    """Exact event counters, recorded on every run."""

    n: int = 0
    mode: str = "ksp"
    engine: str = "explicit"
    lam: float = 0.0
    lambda_clamped: bool = False
    phi_history: list = field(default_factory=list)
    dijkstra_runs: int = 0
    nn_queries: int = 0
    dijkstra_per_cell: dict = field(default_factory=dict)
    searches_per_cell: dict = field(default_factory=dict)
    low_searches_per_cell: dict = field(default_factory=dict)
    high_searches_per_cell: dict = field(default_factory=dict)
    merge_iters_per_cell: dict = field(default_factory=dict)
    divider_freed_per_cell: dict = field(default_factory=dict)
    top_divider_freed: int = 0
    top_gate_count: int = 0
    audit_failures: int = 0

    def bump(self, table: dict, cell: int, amount: int = 1) -> None:
        table[cell] = table.get(cell, 0) + amount

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "mode": self.mode,
            "engine": self.engine,
            "lambda": self.lam,
            "lambda_clamped": self.lambda_clamped,
            "phi_history": self.phi_history,
            "dijkstra_runs": self.dijkstra_runs,
            "nn_queries": self.nn_queries,
            "dijkstra_per_cell": {str(k): v for k, v in self.dijkstra_per_cell.items()},
            "searches_per_cell": {str(k): v for k, v in self.searches_per_cell.items()},
            "low_searches_per_cell": {
                str(k): v for k, v in self.low_searches_per_cell.items()
            },
            "high_searches_per_cell": {
                str(k): v for k, v in self.high_searches_per_cell.items()
            },
            "merge_iters_per_cell": {
                str(k): v for k, v in self.merge_iters_per_cell.items()
            },
            "divider_freed_per_cell": {
                str(k): v for k, v in self.divider_freed_per_cell.items()
            },
            "top_divider_freed": self.top_divider_freed,
            "top_gate_count": self.top_gate_count,
        }


@dataclass
class SolveResult:
    solution: object  # Partitioning (ksp/kspi) or Matching (grs)
    cost: object
    trace: SolverTrace
    state: ExtendedMatchingState
    hierarchy: Hierarchy


class _Solver:
    def __init__(
        self,
        graph: GateGraph,
        hierarchy: Hierarchy,
        gate_loc_a: np.ndarray,
        gate_loc_b: np.ndarray,
        k_target: int,
        engine: str,
        nn_backend: str,
        audit: bool,
        trace: SolverTrace,
    ):
        self.graph = graph
        self.h = hierarchy
        self.k_target = k_target
        self.engine = engine
        self.nn_backend = nn_backend
        self.audit = audit
        self.trace = trace
        self.qc = {"queries": 0}

        leaf_of_loc = {}
        for c in hierarchy.leaves():
            for pid in c.point_ids:
                leaf_of_loc[int(pid)] = c.id
        cell_of_a = np.array([leaf_of_loc[int(l)] for l in gate_loc_a], dtype=np.int64)
        cell_of_b = np.array([leaf_of_loc[int(l)] for l in gate_loc_b], dtype=np.int64)
        cells = {c.id: c.bounds for c in hierarchy.leaves()}
        self.state = ExtendedMatchingState(
            graph, cells=cells, cell_of_a=cell_of_a, cell_of_b=cell_of_b
        )
        self.cell_a = {cid: [] for cid in cells}
        self.cell_b = {cid: [] for cid in cells}
        for a in range(graph.n_a):
            self.cell_a[int(cell_of_a[a])].append(a)
        for b in range(graph.n_b):
            self.cell_b[int(cell_of_b[b])].append(b)
        self.live = set(cells)
        self.keys = {}
        self.pq = []
        self.eps = self.state.eps
        # the meaningful top divider: the deepest cell that still holds every
        # point but splits them in two (above it, empty halves were discarded)
        self._top_parent = None
        cur = hierarchy.cell(hierarchy.root)
        n_pts = hierarchy.points.shape[0]
        while cur is not None and len(cur.point_ids) == n_pts:
            if len(cur.children) >= 2:
                self._top_parent = cur.id
                break
            if not cur.children:
                break
            cur = hierarchy.cell(cur.children[0])

    # -- priority queue ------------------------------------------------------

    def _push(self, cid: int, key: float) -> None:
        self.keys[cid] = key
        heapq.heappush(self.pq, (key, cid))

    def _pop_min(self):
        while self.pq:
            key, cid = heapq.heappop(self.pq)
            if cid in self.keys and self.keys[cid] == key and cid in self.live:
                del self.keys[cid]
                return key, cid
        return None

    def _drop(self, cid: int) -> None:
        self.keys.pop(cid, None)

    # -- searches ------------------------------------------------------------

    def _cell_dijkstra(self, cid: int, extra_b_mode: str, complete: bool):
        """One Dijkstra on a cell's forward residual view.

        extra_b_mode picks the stopping functional's b-side addend:
        "boundary" uses s(b); "merge" uses min(s(b), phi - y(b)).
        """
        a_ids = np.asarray(self.cell_a[cid], dtype=np.int64)
        b_ids = np.asarray(self.cell_b[cid], dtype=np.int64)
        view = cell_view(self.state, a_ids, b_ids)
        free_a = self.state.free_a_mask()[a_ids] if a_ids.size else np.zeros(0, bool)
        extra_a = np.where(free_a, 0.0, INF)
        bounds = self.state.cells[cid]
        y_b = np.asarray(self.state.y_b, dtype=np.float64)[b_ids]
        s_b = (
            boundary_distances(self.graph.b_pts[b_ids], bounds, self.graph.model.q)
            - y_b
        )
        s_b = np.where((s_b < 0) & (s_b >= -max(self.eps, 1e-12)), 0.0, s_b)
        if extra_b_mode == "merge":
            third = np.maximum(self.state.phi - y_b, 0.0)
            extra_b = np.minimum(s_b, third)
        else:
            extra_b = s_b
        self.trace.dijkstra_runs += 1
        self.trace.bump(self.trace.dijkstra_per_cell, cid)
        res = run_dijkstra(
            view,
            engine=self.engine,
            nn_backend=self.nn_backend,
            extra_a=extra_a,
            extra_b=extra_b,
            complete=complete or self.audit,
            eps=max(self.eps, 1e-12),
            query_counter=self.qc,
        )
        return view, res, s_b, y_b

    def _apply_duals(self, view, res, kappa: float) -> None:
        st = self.state
        for i, gid in enumerate(view.a_ids):
            ku = res.kappa_a[i]
            if ku < kappa:
                st.y_a[int(gid)] += kappa - ku
        for j, gid in enumerate(view.b_ids):
            ku = res.kappa_b[j]
            if ku < kappa:
                st.y_b[int(gid)] += kappa - ku

    def _path_record(self, view, res, s_b, y_b_pre, merge_mode: bool):
        """Classify the realized stop node and build the path to apply.

        s_b and y_b_pre are the cell's point slacks and entry duals as
        they were when the search ran, before the dual update.
        """
        if res.stop_side == "a":
            nodes = res.path_nodes(view, "a", res.stop_index)
            return PathRecord(nodes=nodes, kind="free_a", net_cost=res.stop_value)
        j = res.stop_index
        nodes = res.path_nodes(view, "b", j)
        if merge_mode:
            phi_term = self.state.phi - float(y_b_pre[j])
            if phi_term < float(s_b[j]):
                return PathRecord(nodes=nodes, kind="alt_to_b", net_cost=res.stop_value)
        return PathRecord(nodes=nodes, kind="boundary_b", net_cost=res.stop_value)

    def _apply_record(self, rec: PathRecord, cid: int) -> None:
        st = self.state
        if self.audit:
            # path locality and the two net-cost formulas must agree
            for side, gid in rec.nodes:
                c = st.cell_of_a[gid] if side == "a" else st.cell_of_b[gid]
                if int(c) != cid:
                    raise InvariantError(f"path leaves cell {cid}")
            if rec.kind != "alt_to_b":
                direct = float(st.net_cost_direct(rec))
                ident = float(st.net_cost_slack(rec))
                tol = 1e-9 * max(1.0, abs(direct))
                if abs(direct - ident) > tol:
                    raise InvariantError(
                        f"net-cost identity off by {direct - ident}"
                    )
        st.apply_path(rec)

    def _audit_state(self, where: str, strict_free: bool = True) -> None:
        st = self.state
        bad = st.check_feasibility()
        if bad:
            self.trace.audit_failures += 1
            raise InvariantError(f"{where}: {bad[:3]}")
        tol = max(self.eps, 1e-9) * max(1.0, abs(st.phi))
        for cid in self.live:
            b_ids = self.cell_b.get(cid, [])
            if not b_ids:
                continue
            y = np.asarray(st.y_b, dtype=np.float64)[b_ids]
            if float(y.max()) > st.phi + tol:
                raise InvariantError(f"{where}: cell {cid} dual above phi")
            free = st.free_b_mask()[b_ids]
            # mid-merge, freed gates sit below the threshold by design
            if strict_free and free.any():
                vals = y[free]
                if float(vals.max() - vals.min()) > tol:
                    raise InvariantError(
                        f"{where}: free duals differ inside cell {cid}"
                    )
                if abs(float(vals.max()) - float(y.max())) > tol:
                    raise InvariantError(
                        f"{where}: free dual below the cell max in {cid}"
                    )

    def update_cell_key(self, cid: int) -> None:
        st = self.state
        free_b = st.free_b_mask()
        if not any(free_b[b] for b in self.cell_b[cid]):
            self._drop(cid)
            return
        view, res, s_b, y_b_pre = self._cell_dijkstra(cid, "boundary", complete=False)
        if not math.isfinite(res.stop_value):
            raise InvariantError(f"cell {cid} has free gates but no path")
        self._push(cid, float(res.stop_value))

    def extended_hungarian_search(self, cid: int, phi: float) -> None:
        st = self.state
        view, res, s_b, y_b_pre = self._cell_dijkstra(cid, "boundary", complete=False)
        kappa = res.stop_value
        if self.audit and abs(kappa - phi) > max(self.eps, 1e-9) * max(1.0, abs(phi)):
            raise InvariantError(
                f"extracted key {phi} disagrees with recomputed {kappa}"
            )
        self._apply_duals(view, res, kappa)
        rec = self._path_record(view, res, s_b, y_b_pre, merge_mode=False)
        self._apply_record(rec, cid)
        self.trace.bump(self.trace.searches_per_cell, cid)
        ell = float((self.state.cells[cid][:, 1] - self.state.cells[cid][:, 0]).max())
        thresh = ell * self.trace.n ** (-1.0 / (2 * self.h.d + 1))
        table = (
            self.trace.low_searches_per_cell
            if phi <= thresh
            else self.trace.high_searches_per_cell
        )
        self.trace.bump(table, cid)
        if self.audit:
            self._audit_state(f"search in cell {cid}")
        self.update_cell_key(cid)

    # -- merging -------------------------------------------------------------

    def _is_mergeable(self, cid: int) -> bool:
        if cid not in self.live:
            return False
        cell = self.h.cell(cid)
        if cell.parent is None:
            return False
        sibs = self.h.cell(cell.parent).children
        return all(s == cid or s in self.live for s in sibs)

    def _push_merge_candidate(self, cid: int) -> None:
        if self._is_mergeable(cid):
            heapq.heappush(self._merge_heap, (self._perim[cid], cid))

    def _mergeable(self):
        """Cheapest live cell whose sibling is live or absent, by (perimeter, id).

        Candidates sit in a lazy heap: a cell's mergeability only switches
        on when a sibling enters the live set, and every such event pushes
        the affected cells, so the heap always covers the mergeable set.
        """
        heap = getattr(self, "_merge_heap", None)
        if heap is None:
            self._perim = {c.id: float(c.perimeter) for c in self.h.cells}
            self._merge_heap = []
            for cid in self.live:
                self._push_merge_candidate(cid)
            heap = self._merge_heap
        while heap:
            perim, cid = heapq.heappop(heap)
            if self._is_mergeable(cid):
                return perim, cid
        raise InvariantError("no mergeable cell found")

    def fresh_duals(self, cid: int) -> None:
        """Raise the cell's duals so every free entry gate sits at phi."""
        view, res, s_b, y_b_pre = self._cell_dijkstra(cid, "boundary", complete=True)
        self._apply_duals(view, res, self.state.phi)

    def merge_step(self) -> None:
        st = self.state
        phi = st.phi
        _, child = self._mergeable()
        parent_id = self.h.cell(child).parent
        parent = self.h.cell(parent_id)
        children = list(parent.children)
        for c in children:
            if self.cell_b.get(c) or self.cell_a.get(c):
                self.fresh_duals(c)
        # replace the children by the parent
        a_ids, b_ids = [], []
        for c in children:
            a_ids.extend(self.cell_a.pop(c, []))
            b_ids.extend(self.cell_b.pop(c, []))
            self.live.discard(c)
            self._drop(c)
            del st.cells[c]
        a_ids.sort()
        b_ids.sort()
        self.cell_a[parent_id] = a_ids
        self.cell_b[parent_id] = b_ids
        st.cells[parent_id] = parent.bounds
        for a in a_ids:
            st.cell_of_a[a] = parent_id
        for b in b_ids:
            st.cell_of_b[b] = parent_id
        self.live.add(parent_id)
        if hasattr(self, "_merge_heap"):
            self._push_merge_candidate(parent_id)
            if parent.parent is not None:
                for s in self.h.cell(parent.parent).children:
                    if s != parent_id:
                        self._push_merge_candidate(s)

        # gates matched to the erased divider come free
        freed = 0
        for b in b_ids:
            if st.boundary_matched[b]:
                d_parent = boundary_distance(
                    self.graph.b_pts[b], parent.bounds, self.graph.model.q
                )
                if d_parent > float(st.y_b[b]) + max(self.eps, 1e-12):
                    st.boundary_matched[b] = False
                    freed += 1
        self.trace.bump(self.trace.divider_freed_per_cell, parent_id, freed)
        if parent_id == self._top_parent:
            self.trace.top_divider_freed += freed
            self.trace.top_gate_count = len(b_ids)
        if self.audit:
            self._audit_state(f"divider erase at {parent_id}", strict_free=False)

        # lift the released gates back to the threshold
        guard = 0
        while True:
            free_b = st.free_b_mask()
            low = [
                b
                for b in b_ids
                if free_b[b] and float(st.y_b[b]) < phi - max(self.eps, 1e-12)
            ]
            if not low:
                break
            guard += 1
            if guard > 4 * len(b_ids) + 8:
                raise InvariantError("merge loop failed to terminate")
            view, res, s_b, y_b_pre = self._cell_dijkstra(
                parent_id, "merge", complete=False
            )
            kappa = res.stop_value
            if not math.isfinite(kappa):
                raise InvariantError("merge loop found no usable path")
            self._apply_duals(view, res, kappa)
            rec = self._path_record(view, res, s_b, y_b_pre, merge_mode=True)
            self._apply_record(rec, parent_id)
            if rec.kind == "alt_to_b":
                b = rec.nodes[-1][1]
                st.y_b[b] = phi  # released gate rejoins the free pool at phi
            self.trace.bump(self.trace.merge_iters_per_cell, parent_id)
            if self.audit:
                self._audit_state(
                    f"merge iteration at {parent_id}", strict_free=False
                )
        if self.audit:
            self._audit_state(f"merge finished at {parent_id}")
        self.update_cell_key(parent_id)

    # -- driver --------------------------------------------------------------

    def run(self) -> None:
        st = self.state
        for cid in sorted(self.live):
            self.update_cell_key(cid)
        last_phi = 0.0
        while True:
            while int(st.free_b_mask().sum()) > self.k_target:
                popped = self._pop_min()
                if popped is None:
                    raise InvariantError("free gates remain but the queue is empty")
                phi, cid = popped
                tol = max(self.eps, 1e-9) * max(1.0, abs(phi))
                if phi < last_phi - tol:
                    raise InvariantError(
                        f"threshold decreased: {last_phi} -> {phi}"
                    )
                last_phi = max(last_phi, phi)
                st.phi = max(st.phi, phi)
                self.trace.phi_history.append(float(phi))
                self.extended_hungarian_search(cid, phi)
            if self.live == {self.h.root}:
                self._drop(self.h.root)
                break
            self.merge_step()
        self.trace.nn_queries = self.qc["queries"]
        if st.boundary_matched.any():
            raise InvariantError("boundary-matched gates remain at the root")


def _prepare(instance, mode: str, lam):
    """Normalize, build the gate graph and hierarchy, map gates to points."""
    if mode in ("ksp", "kspi"):
        norm = normalize(instance).instance
        graph = build_gate_graph(norm)
        n = norm.n
        if mode == "kspi":
            if not isinstance(norm, KspiInstance):
                raise ValueError("kspi mode needs server locations")
            pts = np.concatenate([norm.requests, norm.servers], axis=0)
            weights = np.concatenate(
                [np.full(n, 2, dtype=np.int64), np.ones(norm.k, dtype=np.int64)]
            )
            gate_loc_a = np.arange(n + norm.k)
            gate_loc_b = np.arange(n)
            k_target = 0
        else:
            pts = norm.requests
            weights = np.full(n, 2, dtype=np.int64)
            gate_loc_a = np.arange(n)
            gate_loc_b = np.arange(n)
            k_target = instance.k
        lam_val, clamped = (lam, False) if lam else default_lambda(n, norm.d, "ksp")
        h = build_hierarchy(pts, lam_val, weights=weights)
        return graph, h, gate_loc_a, gate_loc_b, k_target, lam_val, clamped
    raise ValueError(f"unknown mode {mode!r}")


def solve(
    instance,
    mode: str = "ksp",
    engine: str = "explicit",
    nn_backend: str = "linear",
    audit: bool = False,
    lam: float | None = None,
) -> SolveResult:
    """Solve k-SP or k-SPI via the hierarchical extended-matching loop."""
    if mode == "kspi" and not isinstance(instance, KspiInstance):
        raise ValueError("kspi mode needs a server-location instance")
    if mode == "ksp" and isinstance(instance, KspiInstance):
        instance = instance.base
    graph, h, loc_a, loc_b, k_target, lam_val, clamped = _prepare(instance, mode, lam)
    trace = SolverTrace(
        n=instance.n, mode=mode, engine=engine, lam=lam_val, lambda_clamped=clamped
    )
    solver = _Solver(
        graph, h, loc_a, loc_b, k_target, engine, nn_backend, audit, trace
    )
    solver.run()
    part = matching_to_partitioning(graph, solver.state.matching)
    cost_value = partitioning_cost(part, instance)
    return SolveResult(
        solution=part, cost=cost_value, trace=trace, state=solver.state, hierarchy=h
    )


def solve_grs(
    a_pts,
    b_pts,
    model: CostModel | None = None,
    engine: str = "explicit",
    nn_backend: str = "linear",
    audit: bool = False,
    lam: float | None = None,
) -> SolveResult:
    """Minimum-cost perfect matching between two point sets.

    Runs the same loop on the all-pairs bipartite graph with a free-gate
    target of zero; the root cell cannot hold boundary-matched gates, so
    the result is a perfect matching.
    """
    model = model or CostModel(p=2, q=2)
    a_pts = np.asarray(a_pts, dtype=np.float64)
    b_pts = np.asarray(b_pts, dtype=np.float64)
    n = a_pts.shape[0]
    if b_pts.shape != a_pts.shape:
        raise ValueError("point sets must have equal shape")
    allpts = np.concatenate([a_pts, b_pts], axis=0)
    lo = allpts.min(axis=0)
    span = float((allpts.max(axis=0) - lo).max()) or 1.0
    a_n = (a_pts - lo) / span
    b_n = (b_pts - lo) / span
    graph = build_matching_graph(a_n, b_n, model)
    pts = np.concatenate([a_n, b_n], axis=0)
    if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
        raise ValueError("point sets share a location; perturb the input first")
    weights = np.ones(2 * n, dtype=np.int64)
    lam_val, clamped = (lam, False) if lam else default_lambda(n, a_pts.shape[1], "grs")
    h = build_hierarchy(pts, lam_val, weights=weights)
    trace = SolverTrace(
        n=n, mode="grs", engine=engine, lam=lam_val, lambda_clamped=clamped
    )
    solver = _Solver(
        graph,
        h,
        gate_loc_a=np.arange(n),
        gate_loc_b=np.arange(n, 2 * n),
        k_target=0,
        engine=engine,
        nn_backend=nn_backend,
        audit=audit,
        trace=trace,
    )
    solver.run()
    m = solver.state.matching
    raw_graph = build_matching_graph(a_pts, b_pts, model)
    return SolveResult(
        solution=m,
        cost=m.cost(raw_graph),
        trace=trace,
        state=solver.state,
        hierarchy=h,
    )
