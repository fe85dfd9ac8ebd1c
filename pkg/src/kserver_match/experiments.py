"""Randomly-colored matching runs, witness-matching diagnostics, reports."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import CostModel
from .oracle import hungarian_explicit
from .reduction import build_matching_graph
from .subquadratic import SolveResult, solve_grs


class ExperimentError(ValueError):
    pass


def random_color_split(points, seed: int):
    """Split an even point set into two equal halves, uniformly at random."""
    pts = np.asarray(points)
    m = pts.shape[0]
    if m % 2:
        raise ExperimentError("need an even number of points")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(m)
    a_idx = np.sort(perm[: m // 2])
    b_idx = np.sort(perm[m // 2 :])
    return pts[a_idx], pts[b_idx]


@dataclass
class GrsRun:
    n: int
    d: int
    q: float
    seed: int
    cost: float
    oracle_cost: float | None
    top_boundary_fraction: float
    divider_freed: dict
    wall_time: float
    result: SolveResult = None


ORACLE_GUARD = 64


def run_grs(
    n: int,
    d: int = 2,
    q: float = 2.0,
    seed: int = 0,
    engine: str = "explicit",
    nn_backend: str = "linear",
    audit: bool = False,
    check_oracle: bool | None = None,
) -> GrsRun:
    """One randomly-colored perfect-matching run on 2n uniform points."""
    if n < 1:
        raise ExperimentError("n must be >= 1")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, 1.0, size=(2 * n, d))
    while np.unique(pts, axis=0).shape[0] != 2 * n:
        pts = rng.uniform(0.0, 1.0, size=(2 * n, d))
    a_pts, b_pts = random_color_split(pts, seed + 1)
    model = CostModel(p=2, q=q)
    t0 = time.perf_counter()
    res = solve_grs(
        a_pts, b_pts, model=model, engine=engine, nn_backend=nn_backend, audit=audit
    )
    wall = time.perf_counter() - t0
    if res.state.boundary_matched.any() or res.state.matching.size != n:
        raise ExperimentError("run did not end with a perfect matching")
    oracle_cost = None
    if check_oracle is None:
        check_oracle = n <= ORACLE_GUARD
    if check_oracle:
        g = build_matching_graph(a_pts, b_pts, model)
        oracle_cost = float(hungarian_explicit(g, n).cost)
    top = res.trace.top_gate_count or 1
    return GrsRun(
        n=n,
        d=d,
        q=q,
        seed=seed,
        cost=float(res.cost),
        oracle_cost=oracle_cost,
        top_boundary_fraction=res.trace.top_divider_freed / top,
        divider_freed=dict(res.trace.divider_freed_per_cell),
        wall_time=wall,
        result=res,
    )


def witness_matching(
    points,
    orders,
    ell: float,
    n_box: int | None = None,
    grid_exponent: float = 0.4,
):
    """Chain requests that share a grid square, in request order.

    The grid side is ell * n ** -grid_exponent.  Each nonempty square
    leaves exactly one entry gate unmatched (the first of its chain);
    every matched pair pays at most the square's diameter.  Returns
    (pairs, stats) where pairs are (earlier index, later index).
    """
    pts = np.asarray(points, dtype=np.float64)
    orders = np.asarray(orders)
    m = pts.shape[0]
    if n_box is None:
        n_box = m
    side = ell * n_box ** (-grid_exponent) if n_box else ell
    if side <= 0:
        raise ExperimentError("grid side must be positive")
    keys = np.floor(pts / side).astype(np.int64)
    buckets = {}
    for i in np.argsort(orders, kind="stable"):
        buckets.setdefault(tuple(keys[i]), []).append(int(i))
    pairs = []
    total = 0.0
    for chain in buckets.values():
        for u, v in zip(chain, chain[1:]):
            pairs.append((u, v))
            total += float(np.abs(pts[u] - pts[v]).sum())
    d = pts.shape[1]
    diag = side * d  # l1 diameter of one square
    stats = {
        "squares": len(buckets),
        "unmatched": len(buckets),
        "matched_pairs": len(pairs),
        "cost": total,
        "cost_bound": diag * len(pairs),
        "side": side,
    }
    if total > stats["cost_bound"] + 1e-9:
        raise ExperimentError("witness cost exceeds its bound")
    return pairs, stats


REPORT_COLUMNS = [
    "n",
    "d",
    "mode",
    "engine",
    "lambda",
    "dijkstra_runs",
    "nn_queries",
    "max_searches_per_cell",
    "total_merge_iters",
    "phi_final",
    "cost",
    "wall_time",
]


def trace_row(trace, d: int, cost=None, wall_time=None) -> dict:
    per_cell = trace.searches_per_cell.values()
    return {
        "n": trace.n,
        "d": d,
        "mode": trace.mode,
        "engine": trace.engine,
        "lambda": trace.lam,
        "dijkstra_runs": trace.dijkstra_runs,
        "nn_queries": trace.nn_queries,
        "max_searches_per_cell": max(per_cell, default=0),
        "total_merge_iters": sum(trace.merge_iters_per_cell.values()),
        "phi_final": trace.phi_history[-1] if trace.phi_history else 0.0,
        "cost": cost,
        "wall_time": wall_time,
    }


def emit_report(rows, csv_path, json_path=None) -> None:
    """Write run summaries as CSV (and optionally the full rows as JSON)."""
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump(list(rows), fh, indent=1, default=str)
            fh.write("\n")


def load_report(csv_path) -> list:
    with open(csv_path, newline="") as fh:
        return list(csv.DictReader(fh))
