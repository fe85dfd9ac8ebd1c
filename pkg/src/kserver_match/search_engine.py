"""Shortest-path engines over residual graphs of a partial matching.

A residual view restricts the gate graph to a subset of gates (one live
cell, or everything) and fixes a direction.  Forward views route each
matching edge a -> b with weight 0 and each non-matching edge b -> a
with its slack; reversed views flip both.  Source arcs are supplied by
the caller as per-gate weights (inf = no arc).

Two engines produce identical labels: a dense vectorized Dijkstra that
relaxes whole cost rows, and a bichromatic-closest-pair engine that
organizes the implicit edges into O(n log n) cliques over the request
order and answers cut-edge queries with weighted nearest-neighbor
indexes.  Ties break on (label, gate id) with exit gates numbered
before entry gates, so both engines settle gates in the same sequence.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import cost, cost_to_many
from .matching_state import ExtendedMatchingState

INF = math.inf


class EngineError(ValueError):
    pass


@dataclass
class ResidualView:
    """A directed residual graph over a subset of gates."""

    state: ExtendedMatchingState
    a_ids: np.ndarray
    b_ids: np.ndarray
    direction: str  # "forward" | "reversed"
    source_a: np.ndarray  # weight of source arc per local a (inf = none)
    source_b: np.ndarray

    def __post_init__(self):
        if self.direction not in ("forward", "reversed"):
            raise EngineError(f"bad direction {self.direction!r}")
        g = self.state.graph
        self.a_ids = np.asarray(self.a_ids, dtype=np.int64)
        self.b_ids = np.asarray(self.b_ids, dtype=np.int64)
        self.pts_a = g.a_pts[self.a_ids]
        self.pts_b = g.b_pts[self.b_ids]
        self.y_a = np.asarray(self.state.y_a, dtype=np.float64)[self.a_ids]
        self.y_b = np.asarray(self.state.y_b, dtype=np.float64)[self.b_ids]
        self.order_a = np.asarray(g.a_order)[self.a_ids]
        self.order_b = np.asarray(g.b_order)[self.b_ids]
        loc_a = {int(gid): i for i, gid in enumerate(self.a_ids)}
        loc_b = {int(gid): i for i, gid in enumerate(self.b_ids)}
        self.loc_a, self.loc_b = loc_a, loc_b
        # local partner indices, -1 when free or matched outside the view
        self.match_a = np.full(self.a_ids.size, -1, dtype=np.int64)
        self.match_b = np.full(self.b_ids.size, -1, dtype=np.int64)
        m = self.state.matching
        for i, gid in enumerate(self.a_ids):
            p = int(m.match_of_a[gid])
            if p >= 0 and p in loc_b:
                self.match_a[i] = loc_b[p]
        for j, gid in enumerate(self.b_ids):
            p = int(m.match_of_b[gid])
            if p >= 0 and p in loc_a:
                self.match_b[j] = loc_a[p]

    @property
    def n_a(self) -> int:
        return int(self.a_ids.size)

    @property
    def n_b(self) -> int:
        return int(self.b_ids.size)

    def slack_row_from_b(self, j: int) -> np.ndarray:
        """Slacks s(a, b_j) over all local a; inf where no edge."""
        g = self.state.graph
        d = cost_to_many(self.pts_b[j], self.pts_a, g.model).astype(np.float64)
        s = d - self.y_b[j] + self.y_a
        s[self.order_a >= self.order_b[j]] = INF
        return s

    def slack_row_from_a(self, i: int) -> np.ndarray:
        g = self.state.graph
        d = cost_to_many(self.pts_a[i], self.pts_b, g.model).astype(np.float64)
        s = d - self.y_b + self.y_a[i]
        s[self.order_b <= self.order_a[i]] = INF
        return s


def cell_view(state: ExtendedMatchingState, a_ids, b_ids) -> ResidualView:
    """Forward view of one cell: source arcs to its free entry gates."""
    a_ids = np.asarray(a_ids, dtype=np.int64)
    b_ids = np.asarray(b_ids, dtype=np.int64)
    free_b = state.free_b_mask()[b_ids]
    source_b = np.where(free_b, np.asarray(state.y_b, dtype=np.float64)[b_ids], INF)
    return ResidualView(
        state=state,
        a_ids=a_ids,
        b_ids=b_ids,
        direction="forward",
        source_a=np.full(a_ids.size, INF),
        source_b=source_b,
    )


@dataclass
class DijkstraResult:
    kappa_a: np.ndarray
    kappa_b: np.ndarray
    pred_a: np.ndarray  # local b index feeding each a (-1 none)
    pred_b: np.ndarray  # local a index feeding each b (-2 source, -1 none)
    source_pred_b: np.ndarray  # True where b was reached directly from source
    source_pred_a: np.ndarray
    stop_value: float = INF
    stop_side: str | None = None
    stop_index: int = -1
    settle_sequence: list = field(default_factory=list)

    def path_nodes(self, view: ResidualView, side: str, idx: int) -> list:
        """Walk predecessors back to the source; returns [("a"|"b", gate)]."""
        nodes = []
        while True:
            if side == "a":
                nodes.append(("a", int(view.a_ids[idx])))
                if self.source_pred_a[idx]:
                    break
                nxt = int(self.pred_a[idx])
                if nxt < 0:
                    raise EngineError("broken predecessor chain at an exit gate")
                side, idx = "b", nxt
            else:
                nodes.append(("b", int(view.b_ids[idx])))
                if self.source_pred_b[idx]:
                    break
                nxt = int(self.pred_b[idx])
                if nxt < 0:
                    raise EngineError("broken predecessor chain at an entry gate")
                side, idx = "a", nxt
        nodes.reverse()
        return nodes


def _check_nonnegative(view: ResidualView, eps: float) -> None:
    for arr in (view.source_a, view.source_b):
        finite = arr[np.isfinite(arr)]
        if finite.size and float(finite.min()) < -eps:
            raise EngineError(f"negative source arc weight {float(finite.min())}")


def _clamp(arr: np.ndarray, eps: float) -> np.ndarray:
    bad = arr[np.isfinite(arr)]
    if bad.size and float(bad.min()) < -eps:
        raise EngineError(f"negative slack {float(bad.min())}: state is infeasible")
    return np.where((arr < 0) & (arr >= -eps), 0.0, arr)


def dijkstra_explicit(
    view: ResidualView,
    extra_a=None,
    extra_b=None,
    complete: bool = False,
    eps: float = 0.0,
) -> DijkstraResult:
    """Dense single-source Dijkstra relaxing full slack rows.

    extra_a / extra_b are nonnegative per-gate addends of the caller's
    stopping functional (inf = not a stop candidate).  Unless complete
    is set, the run ends once no unsettled label can beat the best stop
    value seen so far.
    """
    mA, mB = view.n_a, view.n_b
    _check_nonnegative(view, eps)
    extra_a = np.full(mA, INF) if extra_a is None else np.asarray(extra_a, dtype=np.float64)
    extra_b = np.full(mB, INF) if extra_b is None else np.asarray(extra_b, dtype=np.float64)
    dist_a = np.full(mA, INF)
    dist_b = np.asarray(view.source_b, dtype=np.float64).copy()
    src_a = np.asarray(view.source_a, dtype=np.float64)
    dist_a[:] = np.minimum(dist_a, src_a)
    pred_a = np.full(mA, -1, dtype=np.int64)
    pred_b = np.full(mB, -1, dtype=np.int64)
    source_pred_a = np.isfinite(src_a)
    source_pred_b = np.isfinite(dist_b)
    done_a = np.zeros(mA, dtype=bool)
    done_b = np.zeros(mB, dtype=bool)
    best = DijkstraResult(
        kappa_a=dist_a,
        kappa_b=dist_b,
        pred_a=pred_a,
        pred_b=pred_b,
        source_pred_a=source_pred_a,
        source_pred_b=source_pred_b,
    )
    forward = view.direction == "forward"
    for _ in range(mA + mB):
        # combined argmin; ties go to the smallest gate id, a-gates first
        ca = np.where(done_a, INF, dist_a)
        cb = np.where(done_b, INF, dist_b)
        ia = int(np.argmin(ca)) if mA else 0
        ib = int(np.argmin(cb)) if mB else 0
        va = ca[ia] if mA else INF
        vb = cb[ib] if mB else INF
        if min(va, vb) == INF:
            break
        side = "a" if va <= vb else "b"
        if not complete and min(va, vb) >= best.stop_value:
            break
        if side == "a":
            done_a[ia] = True
            best.settle_sequence.append(("a", int(view.a_ids[ia])))
            if dist_a[ia] + extra_a[ia] < best.stop_value:
                best.stop_value = dist_a[ia] + extra_a[ia]
                best.stop_side, best.stop_index = "a", ia
            if forward:
                # only outgoing arc: the matching edge to its partner, weight 0
                j = int(view.match_a[ia])
                if j >= 0 and not done_b[j] and dist_a[ia] < dist_b[j]:
                    dist_b[j] = dist_a[ia]
                    pred_b[j] = ia
                    source_pred_b[j] = False
            else:
                s = _clamp(view.slack_row_from_a(ia), eps)
                j = int(view.match_a[ia])
                if j >= 0:
                    s[j] = INF  # matching edge runs b -> a in reversed views
                cand = dist_a[ia] + s
                upd = (cand < dist_b) & ~done_b
                dist_b[upd] = cand[upd]
                pred_b[upd] = ia
                source_pred_b[upd] = False
        else:
            done_b[ib] = True
            best.settle_sequence.append(("b", int(view.b_ids[ib])))
            if dist_b[ib] + extra_b[ib] < best.stop_value:
                best.stop_value = dist_b[ib] + extra_b[ib]
                best.stop_side, best.stop_index = "b", ib
            if forward:
                s = _clamp(view.slack_row_from_b(ib), eps)
                i = int(view.match_b[ib])
                if i >= 0:
                    s[i] = INF  # matching edge runs a -> b in forward views
                cand = dist_b[ib] + s
                upd = (cand < dist_a) & ~done_a
                dist_a[upd] = cand[upd]
                pred_a[upd] = ib
                source_pred_a[upd] = False
            else:
                i = int(view.match_b[ib])
                if i >= 0 and not done_a[i] and dist_b[ib] < dist_a[i]:
                    dist_a[i] = dist_b[ib]
                    pred_a[i] = ib
                    source_pred_a[i] = False
    return best


# ---------------------------------------------------------------------------
# Weighted nearest-neighbor indexes


class LinearNNIndex:
    """Reference backend: exact argmin of weight + cost(point, q) by scan."""

    def __init__(self, pts: np.ndarray, model):
        self.pts = np.asarray(pts, dtype=np.float64)
        self.model = model
        self.weights = np.full(self.pts.shape[0], INF)
        self.live = np.zeros(self.pts.shape[0], dtype=bool)

    def insert(self, idx: int, weight: float) -> None:
        self.weights[idx] = weight
        self.live[idx] = True

    def remove(self, idx: int) -> None:
        self.live[idx] = False

    @property
    def size(self) -> int:
        return int(self.live.sum())

    def query(self, q, exclude: int = -1):
        """Best (index, value); ties to the smallest index.  None if empty."""
        mask = self.live.copy()
        if exclude >= 0:
            mask[exclude] = False
        if not mask.any():
            return None
        vals = np.full(self.pts.shape[0], INF)
        idx = np.flatnonzero(mask)
        vals[idx] = self.weights[idx] + cost_to_many(
            np.asarray(q, dtype=np.float64), self.pts[idx], self.model
        ).astype(np.float64)
        best = int(np.argmin(vals))
        return best, float(vals[best])


class _KdNode:
    __slots__ = ("axis", "split", "left", "right", "members")

    def __init__(self, axis, split, left, right, members):
        self.axis = axis
        self.split = split
        self.left = left
        self.right = right
        self.members = members  # leaf only


class KdTreeNNIndex:
    """Kd-tree backend with weighted pruning; rebuilt as entries churn.

    The pruning bound for a subtree is (distance from the query point to
    the bounding box) ** q plus the smallest live weight in the subtree,
    which never overestimates any member's value.
    """

    LEAF = 8

    def __init__(self, pts: np.ndarray, model):
        self.pts = np.asarray(pts, dtype=np.float64)
        self.model = model
        self.weights = np.full(self.pts.shape[0], INF)
        self.live = np.zeros(self.pts.shape[0], dtype=bool)
        self._root = None
        self._built_count = 0
        self._in_tree = np.zeros(self.pts.shape[0], dtype=bool)
        self._pending = []  # live indices not yet in the built tree

    def insert(self, idx: int, weight: float) -> None:
        self.weights[idx] = weight
        self.live[idx] = True
        if not self._in_tree[idx]:
            self._pending.append(idx)
        self._maybe_rebuild()

    def remove(self, idx: int) -> None:
        self.live[idx] = False

    @property
    def size(self) -> int:
        return int(self.live.sum())

    def _maybe_rebuild(self) -> None:
        if self._root is None or len(self._pending) > max(self._built_count, self.LEAF):
            self._rebuild()

    def _rebuild(self) -> None:
        idx = np.flatnonzero(self.live)
        self._built_count = idx.size
        self._in_tree[:] = False
        self._in_tree[idx] = True
        self._pending = []
        self._root = self._build(idx)

    def _build(self, idx: np.ndarray):
        if idx.size == 0:
            return None
        if idx.size <= self.LEAF:
            return _KdNode(None, None, None, None, idx)
        spans = self.pts[idx].max(axis=0) - self.pts[idx].min(axis=0)
        axis = int(np.argmax(spans))
        coords = self.pts[idx, axis]
        split = float(np.median(coords))
        left_mask = coords <= split
        if left_mask.all() or not left_mask.any():
            return _KdNode(None, None, None, None, idx)
        return _KdNode(
            axis, split, self._build(idx[left_mask]), self._build(idx[~left_mask]), None
        )

    def _box_gap(self, q, node_idx):
        lo = self.pts[node_idx].min(axis=0)
        hi = self.pts[node_idx].max(axis=0)
        gap = np.maximum(np.maximum(lo - q, q - hi), 0.0)
        return gap

    def query(self, q, exclude: int = -1):
        if self._root is None or self.size == 0:
            self._rebuild()
        q = np.asarray(q, dtype=np.float64)
        best = [INF, -1]
        model = self.model

        def visit(node):
            if node is None:
                return
            if node.members is not None:
                mask = self.live[node.members]
                if exclude >= 0:
                    mask = mask & (node.members != exclude)
                mem = node.members[mask]
                if mem.size == 0:
                    return
                vals = self.weights[mem] + cost_to_many(q, self.pts[mem], model).astype(
                    np.float64
                )
                j = int(np.argmin(vals))
                v, idx = float(vals[j]), int(mem[j])
                if v < best[0] or (v == best[0] and idx < best[1]):
                    best[0], best[1] = v, idx
                return
            for child in self._order_children(node, q):
                if child is None:
                    continue
                if self._bound(child, q) <= best[0]:
                    visit(child)

        def collect(node, out):
            if node.members is not None:
                out.append(node.members)
            else:
                collect(node.left, out)
                collect(node.right, out)

        # per-subtree bound: min live weight + lp gap to the member bbox, ** q
        def _bound(node, qq):
            out = []
            collect(node, out)
            mem = np.concatenate(out)
            mem = mem[self.live[mem]]
            if mem.size == 0:
                return INF
            gap = self._box_gap(qq, mem)
            p, qexp = model.p, model.q
            if p == 1:
                dist = float(gap.sum())
            elif p == INF:
                dist = float(gap.max())
            elif p == 2:
                dist = float(np.sqrt((gap * gap).sum()))
            else:
                dist = float((gap ** p).sum() ** (1.0 / p))
            return float(self.weights[mem].min()) + dist ** qexp

        self._bound = _bound

        def order_children(node, qq):
            if qq[node.axis] <= node.split:
                return (node.left, node.right)
            return (node.right, node.left)

        self._order_children = order_children
        visit(self._root)
        if self._pending:
            pend = np.unique(np.asarray(self._pending, dtype=np.int64))
            pend = pend[self.live[pend]]
            if exclude >= 0:
                pend = pend[pend != exclude]
            if pend.size:
                vals = self.weights[pend] + cost_to_many(
                    q, self.pts[pend], model
                ).astype(np.float64)
                j = int(np.argmin(vals))
                v, idx = float(vals[j]), int(pend[j])
                if v < best[0] or (v == best[0] and idx < best[1]):
                    best[0], best[1] = v, idx
        if best[1] < 0:
            # stale tree (all members dead); fall back to a scan over live
            idx = np.flatnonzero(self.live)
            if exclude >= 0:
                idx = idx[idx != exclude]
            if idx.size == 0:
                return None
            vals = self.weights[idx] + cost_to_many(q, self.pts[idx], model).astype(
                np.float64
            )
            j = int(np.argmin(vals))
            return int(idx[j]), float(vals[j])
        return best[1], best[0]


def make_nn_index(pts, model, backend: str = "linear"):
    if backend == "linear":
        return LinearNNIndex(pts, model)
    if backend == "kdtree":
        return KdTreeNNIndex(pts, model)
    raise EngineError(f"unknown nn backend {backend!r}")


# ---------------------------------------------------------------------------
# Clique decomposition of the order predicate


class CliqueTree:
    """Balanced split of edges a -> b with order(a) < order(b) into cliques.

    A balanced tree over the distinct order values assigns every valid
    (a, b) pair to exactly one node: the first split that separates the
    two orders.  Each gate therefore appears in O(log n) node cliques.
    """

    def __init__(self, view: ResidualView):
        self.view = view
        orders = np.unique(np.concatenate([view.order_a, view.order_b]))
        self.nodes = []  # each: (a_members, b_members) local index arrays
        self.a_membership = [[] for _ in range(view.n_a)]
        self.b_membership = [[] for _ in range(view.n_b)]

        def rec(vals, a_idx, b_idx):
            if vals.size <= 1 or a_idx.size == 0 or b_idx.size == 0:
                return
            mid = vals[(vals.size - 1) // 2]
            a_left = a_idx[view.order_a[a_idx] <= mid]
            b_right = b_idx[view.order_b[b_idx] > mid]
            if a_left.size and b_right.size:
                node_id = len(self.nodes)
                self.nodes.append((a_left, b_right))
                for i in a_left:
                    self.a_membership[int(i)].append(node_id)
                for j in b_right:
                    self.b_membership[int(j)].append(node_id)
            rec(
                vals[vals <= mid],
                a_idx[view.order_a[a_idx] <= mid],
                b_idx[view.order_b[b_idx] <= mid],
            )
            rec(
                vals[vals > mid],
                a_idx[view.order_a[a_idx] > mid],
                b_idx[view.order_b[b_idx] > mid],
            )

        rec(orders, np.arange(view.n_a), np.arange(view.n_b))

    def max_membership(self) -> int:
        counts = [len(m) for m in self.a_membership] + [len(m) for m in self.b_membership]
        return max(counts) if counts else 0


def dijkstra_bcp(
    view: ResidualView,
    extra_a=None,
    extra_b=None,
    complete: bool = False,
    eps: float = 0.0,
    nn_backend: str = "linear",
    query_counter: dict | None = None,
) -> DijkstraResult:
    """Dijkstra where cut edges come from per-clique closest-pair queries.

    Forward views settle entry gates and push them into the insert side
    of each clique they belong to, with additive weight kappa_b - y(b);
    unsettled exit gates form the alive side with additive weight y(a).
    The cheapest live candidate over all cliques is the cheapest cut
    edge.  Reversed views swap the roles of the two sides.
    """
    mA, mB = view.n_a, view.n_b
    _check_nonnegative(view, eps)
    extra_a = np.full(mA, INF) if extra_a is None else np.asarray(extra_a, dtype=np.float64)
    extra_b = np.full(mB, INF) if extra_b is None else np.asarray(extra_b, dtype=np.float64)
    forward = view.direction == "forward"
    g = view.state.graph
    model = g.model
    tree = CliqueTree(view)
    nq = {"queries": 0}

    # per-clique indexes: insert side (settled) and alive side (unsettled)
    if forward:
        ins_pts, alive_pts = view.pts_b, view.pts_a
        alive_weight = view.y_a.astype(np.float64)
        ins_membership, alive_membership = tree.b_membership, tree.a_membership
    else:
        ins_pts, alive_pts = view.pts_a, view.pts_b
        alive_weight = -view.y_b.astype(np.float64)
        ins_membership, alive_membership = tree.a_membership, tree.b_membership
    ins_idx = [make_nn_index(ins_pts, model, nn_backend) for _ in tree.nodes]
    alive_idx = [make_nn_index(alive_pts, model, nn_backend) for _ in tree.nodes]
    for t, (a_mem, b_mem) in enumerate(tree.nodes):
        for u in (a_mem if forward else b_mem):
            alive_idx[t].insert(int(u), float(alive_weight[int(u)]))

    dist_a = np.minimum(np.full(mA, INF), np.asarray(view.source_a, dtype=np.float64))
    dist_b = np.asarray(view.source_b, dtype=np.float64).copy()
    pred_a = np.full(mA, -1, dtype=np.int64)
    pred_b = np.full(mB, -1, dtype=np.int64)
    source_pred_a = np.isfinite(dist_a)
    source_pred_b = np.isfinite(dist_b)
    done_a = np.zeros(mA, dtype=bool)
    done_b = np.zeros(mB, dtype=bool)
    res = DijkstraResult(
        kappa_a=dist_a,
        kappa_b=dist_b,
        pred_a=pred_a,
        pred_b=pred_b,
        source_pred_a=source_pred_a,
        source_pred_b=source_pred_b,
    )

    # heaps: tentative labels from direct arcs; cut candidates from cliques
    label_heap = []  # (dist, global gate id, side, local idx, pred, from_source)
    cand_heap = []  # (value, global id of target, clique, ins_local, target_local)
    n_a_global = g.n_a

    def gid(side, idx):
        return int(view.a_ids[idx]) if side == "a" else n_a_global + int(view.b_ids[idx])

    for i in range(mA):
        if np.isfinite(dist_a[i]):
            heapq.heappush(label_heap, (float(dist_a[i]), gid("a", i), "a", i, -1, True))
    for j in range(mB):
        if np.isfinite(dist_b[j]):
            heapq.heappush(label_heap, (float(dist_b[j]), gid("b", j), "b", j, -1, True))

    def push_candidate(t, ins_local):
        """(Re)query the alive side of clique t for an inserted gate."""
        partner = -1
        if forward:
            # matching edge (a, b) has no b -> a arc; skip the partner
            partner = int(view.match_b[ins_local])
        else:
            partner = int(view.match_a[ins_local])
        nq["queries"] += 1
        out = alive_idx[t].query(ins_pts[ins_local], exclude=partner)
        if out is None:
            return
        tgt, val = out
        value = float(ins_weight[ins_local] + val)
        heapq.heappush(
            cand_heap,
            (value, gid("a" if forward else "b", tgt), t, ins_local, tgt),
        )

    ins_weight = np.full(ins_pts.shape[0], INF)

    def settle(side, idx, dist, pred, from_source):
        if side == "a":
            done_a[idx] = True
            dist_a[idx] = dist
            pred_a[idx] = pred
            source_pred_a[idx] = from_source
        else:
            done_b[idx] = True
            dist_b[idx] = dist
            pred_b[idx] = pred
            source_pred_b[idx] = from_source
        res.settle_sequence.append(
            (side, int(view.a_ids[idx]) if side == "a" else int(view.b_ids[idx]))
        )
        extra = extra_a[idx] if side == "a" else extra_b[idx]
        if dist + extra < res.stop_value:
            res.stop_value = dist + extra
            res.stop_side, res.stop_index = side, idx

        if forward:
            if side == "b":
                # remove nothing from alive (alive side is A); insert b
                w = dist - view.y_b[idx]
                ins_weight[idx] = w
                for t in ins_membership[idx]:
                    ins_idx[t].insert(idx, float(w))
                    push_candidate(t, idx)
                # direct matching arc a -> b was the way in; outgoing none
            else:
                # settled a leaves the alive side; its matching arc relaxes b
                for t in alive_membership[idx]:
                    alive_idx[t].remove(idx)
                jj = int(view.match_a[idx])
                if jj >= 0 and not done_b[jj]:
                    heapq.heappush(
                        label_heap, (float(dist), gid("b", jj), "b", jj, idx, False)
                    )
        else:
            if side == "a":
                w = dist + view.y_a[idx]
                ins_weight[idx] = w
                for t in ins_membership[idx]:
                    ins_idx[t].insert(idx, float(w))
                    push_candidate(t, idx)
            else:
                for t in alive_membership[idx]:
                    alive_idx[t].remove(idx)
                ii = int(view.match_b[idx])
                if ii >= 0 and not done_a[ii]:
                    heapq.heappush(
                        label_heap, (float(dist), gid("a", ii), "a", ii, idx, False)
                    )

    while True:
        # drop dead heap tops
        while label_heap and (
            done_a[label_heap[0][3]] if label_heap[0][2] == "a" else done_b[label_heap[0][3]]
        ):
            heapq.heappop(label_heap)
        while cand_heap:
            value, _, t, ins_local, tgt = cand_heap[0]
            tgt_done = done_a[tgt] if forward else done_b[tgt]
            if tgt_done:
                heapq.heappop(cand_heap)
                # the inserted gate needs a fresh best candidate in t
                push_candidate(t, ins_local)
                continue
            break
        lbl = label_heap[0][0] if label_heap else INF
        cnd = cand_heap[0][0] if cand_heap else INF
        if lbl == INF and cnd == INF:
            break
        # deterministic tie-break on (value, target gate id)
        use_label = (lbl, label_heap[0][1] if label_heap else INF) <= (
            cnd,
            cand_heap[0][1] if cand_heap else INF,
        )
        if use_label:
            dist, _, side, idx, pred, from_source = heapq.heappop(label_heap)
        else:
            value, _, t, ins_local, tgt = heapq.heappop(cand_heap)
            dist = value
            ins_dist = float(dist_b[ins_local] if forward else dist_a[ins_local])
            if dist - ins_dist < -eps:
                raise EngineError(
                    f"negative slack {dist - ins_dist}: state is infeasible"
                )
            dist = max(dist, ins_dist, 0.0)
            side = "a" if forward else "b"
            idx, pred, from_source = tgt, ins_local, False
            push_candidate(t, ins_local)
        if not complete and dist >= res.stop_value:
            break
        settle(side, idx, dist, pred, from_source)

    if query_counter is not None:
        query_counter["queries"] = query_counter.get("queries", 0) + nq["queries"]
    return res


def run_dijkstra(
    view: ResidualView,
    engine: str = "explicit",
    nn_backend: str = "linear",
    extra_a=None,
    extra_b=None,
    complete: bool = False,
    eps: float = 0.0,
    query_counter: dict | None = None,
) -> DijkstraResult:
    if engine == "explicit":
        return dijkstra_explicit(view, extra_a, extra_b, complete, eps)
    if engine == "bcp":
        return dijkstra_bcp(
            view, extra_a, extra_b, complete, eps, nn_backend, query_counter
        )
    raise EngineError(f"unknown engine {engine!r}")
