"""Ground-truth solvers and certificate checkers.

Everything here is independent of the production solvers: the partition
enumeration works over subsets of request indices, and the explicit
Hungarian implementation materializes the edge list and runs classical
successive shortest paths with potentials.  Slow on purpose; used to
pin down expected values in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import KspInstance, KspiInstance, cost, is_exact
from .hierarchy import boundary_distance
from .reduction import GateGraph, Matching, Partitioning, partitioning_cost

INF = math.inf


class OracleError(ValueError):
    pass


@dataclass
class OracleResult:
    cost: float
    solution: object
    method: str


ENUMERATION_GUARD = 10**7


@lru_cache(maxsize=8)
def _subset_transitions(n: int):
    """All (S, B, S \\ B) with B a subset of S containing S's lowest bit."""
    s_list, b_list, r_list = [], [], []
    for s in range(1, 1 << n):
        low = s & (-s)
        rest_bits = s ^ low
        # enumerate subsets of rest_bits, each unioned with the low bit
        sub = rest_bits
        while True:
            b = sub | low
            s_list.append(s)
            b_list.append(b)
            r_list.append(s ^ b)
            if sub == 0:
                break
            sub = (sub - 1) & rest_bits
    return (
        np.array(s_list, dtype=np.int64),
        np.array(b_list, dtype=np.int64),
        np.array(r_list, dtype=np.int64),
    )


def _chain_costs(instance) -> np.ndarray:
    """cost[S] = consecutive-pair cost of serving subset S in index order."""
    n = instance.n
    reqs = instance.requests
    model = instance.model
    d_mat = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d_mat[i, j] = cost(reqs[i], reqs[j], model)
    out = np.zeros(1 << n)
    highest = [0] * (1 << n)
    for s in range(1, 1 << n):
        h = s.bit_length() - 1
        highest[s] = h
        rest = s ^ (1 << h)
        if rest:
            out[s] = out[rest] + d_mat[highest[rest], h]
    return out


def brute_force_ksp_all(instance: KspInstance) -> np.ndarray:
    """Optimal k-SP cost for every k in 1..n, by exhaustive partition DP.

    g[j][S] is the cheapest way to split subset S into exactly j chains;
    chains are index-ordered, so any set partition is a valid solution.
    Splitting a chain never raises the cost, so the exactly-k optimum
    equals the best over at most k chains.
    """
    n = instance.n
    if 3**n / 2 > ENUMERATION_GUARD:
        raise OracleError(f"enumeration over {n} requests exceeds the guard")
    s_idx, b_idx, r_idx = _subset_transitions(n)
    chain = _chain_costs(instance)
    full = (1 << n) - 1
    add = chain[b_idx]
    g_prev = np.full(1 << n, INF)
    g_prev[0] = 0.0
    best_exact = np.full(n + 1, INF)
    for j in range(1, n + 1):
        g = np.full(1 << n, INF)
        np.minimum.at(g, s_idx, g_prev[r_idx] + add)
        g[0] = INF
        best_exact[j] = g[full]
        g_prev = g
    return np.minimum.accumulate(best_exact[1:])


def _recover_partition(instance: KspInstance, k: int, target: float, tol: float):
    """Rebuild one optimal chain decomposition matching the DP optimum."""
    n = instance.n
    chain = _chain_costs(instance)

    def solve(s, j):
        # cheapest split of subset s into at most j chains
        if s == 0:
            return 0.0, None, None
        if j == 0:
            return INF, None, None
        key = (s, j)
        if key in memo:
            return memo[key]
        low = s & (-s)
        rest_bits = s ^ low
        best_v, best_b = INF, None
        sub = rest_bits
        while True:
            b = sub | low
            v = chain[b] + solve(s ^ b, j - 1)[0]
            if v < best_v:
                best_v, best_b = v, b
            if sub == 0:
                break
            sub = (sub - 1) & rest_bits
        memo[key] = (best_v, best_b, key)
        return memo[key]

    memo = {}
    full = (1 << n) - 1
    v, _, _ = solve(full, k)
    if abs(v - target) > tol:
        raise OracleError("partition recovery disagrees with the DP optimum")
    chains = []
    s, j = full, k
    while s:
        _, b, _ = solve(s, j)
        chains.append([i for i in range(n) if b >> i & 1])
        s ^= b
        j -= 1
    while len(chains) < k:
        # split the longest chain; cost can only go down, optimum is ties
        longest = max(range(len(chains)), key=lambda i: len(chains[i]))
        c = chains[longest]
        if len(c) < 2:
            raise OracleError("cannot split singleton chains further")
        chains[longest] = c[:-1]
        chains.append(c[-1:])
    p = Partitioning(subsequences=sorted(chains))
    p.validate(n)
    return p


def brute_force_ksp(instance: KspInstance) -> OracleResult:
    costs = brute_force_ksp_all(instance)
    target = float(costs[instance.k - 1])
    tol = 0.0 if is_exact(instance) else 1e-9 * max(1.0, abs(target))
    part = _recover_partition(instance, instance.k, target, tol)
    check = partitioning_cost(part, instance)
    if abs(float(check) - target) > max(tol, 1e-9):
        raise OracleError("recovered partitioning cost mismatch")
    value = check if is_exact(instance) else target
    return OracleResult(cost=value, solution=part, method="enumeration")


def brute_force_kspi(instance: KspiInstance) -> OracleResult:
    """Exhaustive assignment of requests to labeled servers, in order."""
    n, k = instance.n, instance.k
    if k**n > ENUMERATION_GUARD:
        raise OracleError(f"{k}^{n} assignments exceed the guard")
    reqs = instance.requests
    model = instance.model
    # d_srv[j][i]: server j start -> request i; d_req[i][j]: request i -> j
    d_srv = np.array(
        [[cost(instance.servers[j], reqs[i], model) for i in range(n)] for j in range(k)]
    )
    d_req = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d_req[i, j] = cost(reqs[i], reqs[j], model)
    best = [INF, None]

    def rec(i, last, acc, assign):
        if acc >= best[0]:
            return
        if i == n:
            best[0] = acc
            best[1] = list(assign)
            return
        for j in range(k):
            prev = last[j]
            step = d_srv[j][i] if prev < 0 else d_req[prev][i]
            last[j] = i
            assign.append(j)
            rec(i + 1, last, acc + step, assign)
            assign.pop()
            last[j] = prev

    rec(0, [-1] * k, 0.0, [])
    chains = [[] for _ in range(k)]
    for i, j in enumerate(best[1]):
        chains[j].append(i)
    part = Partitioning(subsequences=chains, servers=list(range(k)))
    part.validate(n)
    value = partitioning_cost(part, instance)
    return OracleResult(cost=value, solution=part, method="enumeration")


def hungarian_explicit(g: GateGraph, t: int) -> OracleResult:
    """Minimum-cost t-matching by successive shortest paths with potentials.

    Self-contained dense implementation over the materialized cost
    matrix; every intermediate matching is optimal at its size.
    """
    n_a, n_b = g.n_a, g.n_b
    if t > min(n_a, n_b):
        raise OracleError(f"no {t}-matching exists on a {n_a}x{n_b} graph")
    c = np.full((n_a, n_b), INF)
    for a in range(n_a):
        row = g.costs_from_a(a).astype(np.float64)
        mask = np.asarray(g.a_order[a] < np.asarray(g.b_order))
        c[a, mask] = row[mask]
    u = np.zeros(n_a)  # potentials; reduced cost rc = c - u[a] - v[b] >= 0
    v = np.zeros(n_b)
    match_a = np.full(n_a, -1, dtype=np.int64)
    match_b = np.full(n_b, -1, dtype=np.int64)
    for _ in range(t):
        dist_a = np.full(n_a, INF)
        dist_b = np.full(n_b, INF)
        dist_a[match_a == -1] = 0.0
        pred_b = np.full(n_b, -1, dtype=np.int64)  # the a that relaxed b
        done_a = np.zeros(n_a, dtype=bool)
        done_b = np.zeros(n_b, dtype=bool)
        while True:
            ca = np.where(done_a, INF, dist_a)
            cb = np.where(done_b, INF, dist_b)
            ia, ib = int(np.argmin(ca)), int(np.argmin(cb))
            if min(ca[ia], cb[ib]) == INF:
                break
            if ca[ia] <= cb[ib]:
                done_a[ia] = True
                rc = dist_a[ia] + c[ia] - u[ia] - v
                upd = (rc < dist_b) & ~done_b
                if match_a[ia] >= 0:
                    upd[match_a[ia]] = False
                dist_b[upd] = rc[upd]
                pred_b[upd] = ia
            else:
                done_b[ib] = True
                a2 = int(match_b[ib])
                if a2 >= 0 and not done_a[a2] and dist_b[ib] < dist_a[a2]:
                    dist_a[a2] = dist_b[ib]
        free_b = np.flatnonzero(match_b == -1)
        if free_b.size == 0 or not np.isfinite(dist_b[free_b]).any():
            raise OracleError(
                f"no augmenting path at size {int((match_a >= 0).sum())}"
            )
        end = int(free_b[np.argmin(dist_b[free_b])])
        delta = float(dist_b[end])
        u += delta - np.minimum(dist_a, delta)
        v -= delta - np.minimum(dist_b, delta)
        b = end
        while True:
            a = int(pred_b[b])
            prev_b = int(match_a[a])
            match_a[a] = b
            match_b[b] = a
            if prev_b == -1:
                break
            match_b[prev_b] = -1
            b = prev_b
    m = Matching(match_of_a=match_a, match_of_b=match_b)
    total = m.cost(g)
    return OracleResult(cost=total, solution=m, method="explicit-hungarian")


def verify_certificate(
    g: GateGraph,
    matching: Matching,
    y_a,
    y_b,
    mode: str = "plain",
    cell_bounds_of_b=None,
    boundary_matched=None,
    eps: float = 1e-9,
    require_dual_optimal: bool = True,
    active_a=None,
) -> tuple:
    """Check the dual conditions that certify optimality at the current size.

    plain mode: y(b) - y(a) <= d on edges, tight on matching edges, free
    exit duals zero, and (if required) every free entry gate at the max
    entry dual.  extended mode adds y(b) <= d(b, boundary of b's cell),
    tight for boundary-matched b.  Returns (ok, report list).
    """
    y_a = np.asarray(y_a, dtype=np.float64)
    y_b = np.asarray(y_b, dtype=np.float64)
    report = []
    q = g.model.q
    if active_a is None:
        active = range(g.n_a)
    else:
        active = [a for a in range(g.n_a) if active_a[a]]
    for a in active:
        d_row = g.costs_from_a(a).astype(np.float64)
        for b in np.flatnonzero(np.asarray(g.a_order[a] < np.asarray(g.b_order))):
            gap = y_b[b] - y_a[a] - d_row[b]
            if gap > eps:
                report.append(f"edge ({a}, {b}): y(b) - y(a) exceeds d by {gap:.3g}")
    for a, b in matching.pairs():
        gap = abs(y_b[b] - y_a[a] - g.cost(a, b))
        if gap > eps:
            report.append(f"matching edge ({a}, {b}): not tight, off by {gap:.3g}")
    for a in range(g.n_a):
        if matching.match_of_a[a] < 0 and abs(y_a[a]) > eps:
            report.append(f"free exit gate {a}: dual {y_a[a]:.3g} != 0")
    if float(np.minimum(y_a.min(initial=0.0), y_b.min(initial=0.0))) < -eps:
        report.append("negative dual weight")
    if mode == "extended":
        bm = (
            np.zeros(g.n_b, dtype=bool)
            if boundary_matched is None
            else np.asarray(boundary_matched, dtype=bool)
        )
        for b in range(g.n_b):
            bd = boundary_distance(g.b_pts[b], cell_bounds_of_b[b], q)
            if y_b[b] - bd > eps:
                report.append(f"entry gate {b}: dual exceeds boundary distance")
            if bm[b] and abs(y_b[b] - bd) > eps:
                report.append(f"boundary-matched gate {b}: not tight")
        free_mask = (matching.match_of_b < 0) & ~bm
    else:
        free_mask = matching.match_of_b < 0
    if require_dual_optimal and free_mask.any() and g.n_b:
        y_max = float(y_b.max())
        for b in np.flatnonzero(free_mask):
            if y_max - y_b[b] > eps:
                report.append(
                    f"free entry gate {b}: dual {y_b[b]:.3g} below the max {y_max:.3g}"
                )
    return (not report), report


def dual_cost_identity(g: GateGraph, matching: Matching, y_a, y_b, eps=None):
    """w(M) = sum_B y - sum_A y - |B_F| * y_max for dual-optimal states.

    Returns the residual (lhs - rhs); 0 for a dual-optimal matching.
    """
    y_a = np.asarray(y_a)
    y_b = np.asarray(y_b)
    free_b = int((matching.match_of_b < 0).sum())
    y_max = y_b.max() if y_b.size else 0
    lhs = matching.cost(g)
    rhs = y_b.sum() - y_a[: g.n_a].sum() - free_b * y_max
    return lhs - rhs
