"""Partial-matching solver that peels edges off the single-chain optimum.

Start from the maximum matching that chains all requests behind one
server, with duals making it a dual-optimal (n-1)-matching.  Each
iteration runs Dijkstra on the reversed residual graph (matching edges
b -> a at weight 0, others a -> b at their slack, source arcs to every
entry gate at weight y_max - y(b)), lowers duals by kappa - kappa_u,
and removes one matching edge along the admissible reverse path.  After
k - 1 removals the matching is an optimal (n-k)-matching.

The variant with fixed server start locations instead keeps the
matching size at n: each new server enters with a tight dual and an
alternating path hands one chain head over to it.
"""

from __future__ import annotations

import numpy as np

from .geometry import KspInstance, KspiInstance
from .matching_state import ExtendedMatchingState
from .oracle import dual_cost_identity, verify_certificate
from .reduction import (
    GateGraph,
    Partitioning,
    build_gate_graph,
    matching_to_partitioning,
    partitioning_cost,
)
from .search_engine import INF, ResidualView, run_dijkstra


class InvariantError(RuntimeError):
    """An audited solver state failed its dual conditions."""


def _audit(state: ExtendedMatchingState, where: str, active_a=None) -> None:
    g = state.graph
    ok, report = verify_certificate(
        g, state.matching, state.y_a, state.y_b, mode="plain",
        eps=max(state.eps, 1e-9), active_a=active_a,
    )
    if not ok:
        raise InvariantError(f"{where}: " + "; ".join(report[:5]))
    resid = dual_cost_identity(g, state.matching, state.y_a, state.y_b)
    tol = 0 if g.exact else max(state.eps, 1e-9) * max(1.0, float(state.y_b.max()))
    if abs(resid) > tol:
        raise InvariantError(f"{where}: dual cost identity residual {resid}")


def _apply_delta(state, side, idx, delta):
    arr = state.y_a if side == "a" else state.y_b
    if np.issubdtype(arr.dtype, np.integer):
        arr[idx] += int(round(delta))
    else:
        arr[idx] += delta


def init_one_server(instance, graph: GateGraph | None = None) -> ExtendedMatchingState:
    """Dual-optimal single-chain matching.

    For plain request sequences the chain is r_1, ..., r_n; with servers
    present, the first server heads the chain and the remaining server
    gates stay free at dual 0 until they are introduced.
    """
    g = graph if graph is not None else build_gate_graph(instance)
    state = ExtendedMatchingState(g)
    n = g.n_requests
    m = state.matching
    for i in range(n - 1):
        m.match_of_a[i] = i + 1
        m.match_of_b[i + 1] = i
    # duals, from the back: free a_n at 0, each earlier exit gate raised
    # just enough that all its forward edges keep nonnegative slack
    for i in range(n - 2, -1, -1):
        row = g.costs_from_a(i)
        if i + 2 < n:
            gap = (state.y_b[i + 2 :] - row[i + 2 : n]).max()
            state.y_a[i] = max(0, gap)
        state.y_b[i + 1] = row[i + 1] + state.y_a[i]
    if isinstance(instance, KspiInstance):
        srv = n  # gate id of the first server
        row = g.costs_from_a(srv)
        gap = (state.y_b - row).max() if n else 0
        state.y_a[srv] = max(0, gap)
        state.y_b[0] = row[0] + state.y_a[srv]
        m.match_of_a[srv] = 0
        m.match_of_b[0] = srv
    elif n > 1:
        state.y_b[0] = state.y_b[1:].max()
    return state


def _reversed_view(state, a_ids, b_ids, source_a=None, source_b=None) -> ResidualView:
    a_ids = np.asarray(a_ids, dtype=np.int64)
    b_ids = np.asarray(b_ids, dtype=np.int64)
    if source_a is None:
        source_a = np.full(a_ids.size, INF)
    if source_b is None:
        source_b = np.full(b_ids.size, INF)
    return ResidualView(
        state=state,
        a_ids=a_ids,
        b_ids=b_ids,
        direction="reversed",
        source_a=source_a,
        source_b=source_b,
    )


def reverse_hungarian_search(
    state: ExtendedMatchingState,
    a_ids,
    b_ids,
    source_a=None,
    source_b=None,
    engine: str = "explicit",
    nn_backend: str = "linear",
    complete: bool = False,
):
    """One dual update plus the admissible path to the cheapest exit gate.

    Returns (kappa, node list of the path).  Duals drop by kappa -
    kappa_u wherever kappa_u < kappa, which zeroes the terminal gate's
    dual and keeps every condition tight along the path.
    """
    view = _reversed_view(state, a_ids, b_ids, source_a, source_b)
    extra_a = np.asarray(state.y_a, dtype=np.float64)[view.a_ids]
    res = run_dijkstra(
        view,
        engine=engine,
        nn_backend=nn_backend,
        extra_a=extra_a,
        complete=complete,
        eps=max(state.eps, 0.0),
    )
    if res.stop_side != "a":
        raise InvariantError("reverse search found no reachable exit gate")
    kappa = res.stop_value
    for i, gid in enumerate(view.a_ids):
        ku = res.kappa_a[i]
        if ku < kappa:
            _apply_delta(state, "a", int(gid), ku - kappa)
    for j, gid in enumerate(view.b_ids):
        ku = res.kappa_b[j]
        if ku < kappa:
            _apply_delta(state, "b", int(gid), ku - kappa)
    nodes = res.path_nodes(view, "a", res.stop_index)
    return kappa, nodes


def _toggle_path(state: ExtendedMatchingState, nodes) -> None:
    m = state.matching
    add, remove = [], []
    for (s0, g0), (s1, g1) in zip(nodes, nodes[1:]):
        if s0 == "b" and s1 == "a":
            remove.append((g1, g0))  # reversed matching arc
        else:
            add.append((g0, g1))
    for a, b in remove:
        if m.match_of_a[a] != b:
            raise InvariantError("reverse path removes a non-matching edge")
        m.match_of_a[a] = -1
        m.match_of_b[b] = -1
    for a, b in add:
        if m.match_of_a[a] >= 0 or m.match_of_b[b] >= 0:
            raise InvariantError("reverse path adds a conflicting edge")
        m.match_of_a[a] = b
        m.match_of_b[b] = a


def solve_nk(
    instance: KspInstance,
    engine: str = "explicit",
    nn_backend: str = "linear",
    audit: bool = False,
):
    """Optimal order-preserving split into k chains; k - 1 reductions."""
    g = build_gate_graph(instance)
    n, k = instance.n, instance.k
    state = init_one_server(instance, g)
    trace = {"algo": "nk", "mode": "ksp", "iterations": [], "n": n, "k": k}
    if audit:
        _audit(state, "init")
    a_ids = np.arange(n)
    b_ids = np.arange(n)
    for t in range(k - 1):
        y_b = np.asarray(state.y_b, dtype=np.float64)
        y_max = float(y_b.max()) if n else 0.0
        source_b = y_max - y_b
        kappa, nodes = reverse_hungarian_search(
            state, a_ids, b_ids, source_b=source_b,
            engine=engine, nn_backend=nn_backend, complete=audit,
        )
        _toggle_path(state, nodes)
        trace["iterations"].append(
            {"t": t + 1, "kappa": float(kappa), "size": state.matching.size}
        )
        if audit:
            _audit(state, f"reduction {t + 1}")
    if state.matching.size != n - k:
        raise InvariantError(
            f"expected a {n - k}-matching, got size {state.matching.size}"
        )
    part = matching_to_partitioning(g, state.matching)
    trace["cost"] = partitioning_cost(part, instance)
    return part, trace, state


def solve_nk_kspi(
    instance: KspiInstance,
    engine: str = "explicit",
    nn_backend: str = "linear",
    audit: bool = False,
):
    """Optimal chains behind fixed server start locations.

    Servers enter one at a time; each entry flips an alternating path
    so the matching always covers every entry gate.
    """
    g = build_gate_graph(instance)
    n, k = instance.n, instance.k
    state = init_one_server(instance, g)
    trace = {"algo": "nk", "mode": "kspi", "iterations": [], "n": n, "k": k}

    def active_mask(n_servers):
        mask = np.zeros(g.n_a, dtype=bool)
        mask[:n] = True
        mask[n : n + n_servers] = True
        return mask

    if audit:
        _audit(state, "init", active_a=active_mask(1))
    b_ids = np.arange(n)
    for t in range(k - 1):
        new_gate = n + t + 1
        row = g.costs_from_a(new_gate)
        y_b = np.asarray(state.y_b, dtype=np.float64)
        gap = float((y_b - row).max()) if n else 0.0
        if gap > 0:
            _apply_delta(state, "a", new_gate, gap)
        active_a = np.arange(n + t + 2)
        source_a = np.full(active_a.size, INF)
        source_a[new_gate] = 0.0
        kappa, nodes = reverse_hungarian_search(
            state, active_a, b_ids, source_a=source_a,
            engine=engine, nn_backend=nn_backend, complete=audit,
        )
        _toggle_path(state, nodes)
        trace["iterations"].append(
            {"t": t + 1, "kappa": float(kappa), "size": state.matching.size}
        )
        if audit:
            _audit(state, f"server {t + 2}", active_a=active_mask(t + 2))
    if state.matching.size != n:
        raise InvariantError(f"expected an {n}-matching, got {state.matching.size}")
    part = matching_to_partitioning(g, state.matching)
    trace["cost"] = partitioning_cost(part, instance)
    return part, trace, state
