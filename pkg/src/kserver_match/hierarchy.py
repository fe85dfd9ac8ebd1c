"""Hierarchical partitioning of space into axis-parallel cells.

The tree is built top-down: each non-leaf cell splits along its longest
side at a divider chosen in the middle third to minimize the number of
points within a slab of half-width (longest side) * lambda around it.
Splitting inside the middle third keeps every cell's aspect ratio at
most 3, and the slab minimization bounds how many points sit close to
any divider.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class HierarchyError(ValueError):
    pass


@dataclass
class Cell:
    id: int
    bounds: np.ndarray  # (d, 2) low/high
    parent: int | None = None
    children: list = field(default_factory=list)
    divider: tuple | None = None  # (axis, coordinate)
    point_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def sides(self) -> np.ndarray:
        return self.bounds[:, 1] - self.bounds[:, 0]

    @property
    def longest_side(self) -> float:
        return float(self.sides.max())

    @property
    def shortest_side(self) -> float:
        return float(self.sides.min())

    @property
    def perimeter(self) -> float:
        return float(self.sides.sum())

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def contains(self, u: np.ndarray) -> bool:
        return bool(
            np.all(u >= self.bounds[:, 0]) and np.all(u <= self.bounds[:, 1])
        )


@dataclass
class Hierarchy:
    cells: list
    root: int
    lam: float
    d: int
    points: np.ndarray  # (m, d) locations the tree was built over
    weights: np.ndarray  # gates per location (2 for a request, 1 for a server)
    lambda_clamped: bool = False

    def cell(self, cid: int) -> Cell:
        return self.cells[cid]

    def leaves(self):
        return [c for c in self.cells if c.is_leaf]

    @property
    def height(self) -> int:
        depth = {self.root: 0}
        best = 0
        stack = [self.root]
        while stack:
            cid = stack.pop()
            for ch in self.cells[cid].children:
                depth[ch] = depth[cid] + 1
                best = max(best, depth[ch])
                stack.append(ch)
        return best

    def to_json(self) -> dict:
        return {
            "lambda": self.lam,
            "lambda_clamped": self.lambda_clamped,
            "root": self.root,
            "cells": [
                {
                    "id": c.id,
                    "parent": c.parent,
                    "children": list(c.children),
                    "bounds": c.bounds.tolist(),
                    "divider": None
                    if c.divider is None
                    else [int(c.divider[0]), float(c.divider[1])],
                    "n_points": int(c.point_ids.size),
                    "n_gates": int(self.weights[c.point_ids].sum()),
                }
                for c in self.cells
            ],
        }


def default_lambda(n: int, d: int, mode: str = "ksp"):
    """Slab-width parameter, clamped so the slab fits the middle third.

    Returns (lambda, clamped_flag).
    """
    if n < 1:
        raise HierarchyError("n must be >= 1")
    if mode in ("ksp", "kspi"):
        raw = 9.0 * n ** (-1.0 / (2 * d + 1))
    elif mode == "grs":
        raw = 9.0 * n ** (-1.0 / (d + 2))
    else:
        raise HierarchyError(f"unknown mode {mode!r}")
    if raw > 1.0 / 3.0:
        return 1.0 / 3.0, True
    return raw, False


def slab_count(coords: np.ndarray, weights: np.ndarray, x: float, half: float):
    """Total weight of points with coordinate within half of x (closed)."""
    mask = np.abs(coords - x) <= half
    return float(weights[mask].sum())


def choose_divider(bounds: np.ndarray, pts: np.ndarray, weights: np.ndarray, lam: float):
    """Pick (axis, x*) for a split.

    Axis is the longest side (lowest index on ties).  x* minimizes the
    weight inside the slab of half-width (longest side) * lam, over the
    middle third of that side; ties go to the smaller coordinate.  The
    evaluated candidates are slab entry/exit events of each point, the
    midpoints between consecutive events, the window endpoints, and a
    fixed grid of stride 3 * side * lam, which guarantees the minimum
    weight is at most 9 * lam * (total weight) by pigeonhole.
    """
    sides = bounds[:, 1] - bounds[:, 0]
    axis = int(np.argmax(sides))
    ell = float(sides[axis])
    half = ell * lam
    lo = float(bounds[axis, 0])
    w_lo = lo + ell / 3.0
    w_hi = lo + 2.0 * ell / 3.0

    coords = pts[:, axis].astype(np.float64)
    events = np.concatenate([coords - half, coords + half])
    events = events[(events >= w_lo) & (events <= w_hi)]
    events.sort()
    cands = [w_lo, w_hi]
    if events.size:
        cands.append(events)
        cands.append((events[:-1] + events[1:]) / 2.0)
    if half > 0:
        n_grid = int(np.floor((w_hi - w_lo) / (3.0 * half))) + 1
        cands.append(w_lo + 3.0 * half * np.arange(n_grid))
    cand = np.unique(np.concatenate([np.atleast_1d(np.asarray(c)) for c in cands]))

    order = np.argsort(coords, kind="stable")
    sorted_coords = coords[order]
    prefix = np.concatenate([[0.0], np.cumsum(weights[order].astype(np.float64))])
    lo_idx = np.searchsorted(sorted_coords, cand - half, side="left")
    hi_idx = np.searchsorted(sorted_coords, cand + half, side="right")
    counts = prefix[hi_idx] - prefix[lo_idx]
    best = int(np.argmin(counts))  # argmin takes the first, i.e. smallest x
    return axis, float(cand[best])


def build_hierarchy(
    points,
    lam: float,
    weights=None,
    root_extent: float | None = None,
) -> Hierarchy:
    """Build the partitioning tree over distinct point locations.

    weights[i] is the number of gates at location i (2 for a request's
    co-located entry and exit gates, 1 for a server gate).  The root cell
    is [-3n, 3n]^d for n = total gate weight, so every divider stays far
    from the points until cells shrink to the occupied region.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise HierarchyError("need a (m, d) array with m >= 1")
    m, d = pts.shape
    if weights is None:
        weights = np.full(m, 2, dtype=np.int64)
    else:
        weights = np.asarray(weights, dtype=np.int64)
    if np.unique(pts, axis=0).shape[0] != m:
        raise HierarchyError(
            "two distinct requests share a location; jitter the instance first"
        )
    n_total = float(weights.sum())
    extent = root_extent if root_extent is not None else 3.0 * n_total
    root_bounds = np.stack(
        [np.full(d, -extent), np.full(d, extent)], axis=1
    )

    cells: list[Cell] = []

    def new_cell(bounds, parent, ids) -> int:
        cid = len(cells)
        cells.append(Cell(id=cid, bounds=bounds, parent=parent, point_ids=ids))
        return cid

    root = new_cell(root_bounds, None, np.arange(m, dtype=np.int64))
    stack = [root]
    while stack:
        cid = stack.pop()
        cell = cells[cid]
        ids = cell.point_ids
        if ids.size <= 1:
            continue
        axis, x_star = choose_divider(cell.bounds, pts[ids], weights[ids], lam)
        cell.divider = (axis, x_star)
        low_mask = pts[ids, axis] <= x_star
        lo_bounds = cell.bounds.copy()
        lo_bounds[axis, 1] = x_star
        hi_bounds = cell.bounds.copy()
        hi_bounds[axis, 0] = x_star
        for child_bounds, child_ids in (
            (lo_bounds, ids[low_mask]),
            (hi_bounds, ids[~low_mask]),
        ):
            if child_ids.size == 0:
                continue
            ch = new_cell(child_bounds, cid, child_ids)
            cell.children.append(ch)
            stack.append(ch)
    return Hierarchy(
        cells=cells, root=root, lam=lam, d=d, points=pts, weights=weights
    )


def boundary_distance(u, bounds: np.ndarray, q: float = 1.0):
    """Distance from an interior point to the nearest cell face, to power q.

    For axis-parallel cells the nearest boundary point differs in one
    coordinate, so this does not depend on the norm parameter p.
    """
    u = np.asarray(u, dtype=np.float64)
    gaps = np.minimum(u - bounds[:, 0], bounds[:, 1] - u)
    g = float(gaps.min())
    if g < 0:
        raise HierarchyError("point lies outside the cell")
    if q == 1:
        return g
    if q == 2:
        return g * g
    return g ** q


def boundary_distances(pts: np.ndarray, bounds: np.ndarray, q: float = 1.0) -> np.ndarray:
    """Vectorized boundary_distance over the rows of pts."""
    pts = np.asarray(pts, dtype=np.float64)
    gaps = np.minimum(pts - bounds[:, 0], bounds[:, 1] - pts).min(axis=1)
    if gaps.size and float(gaps.min()) < 0:
        raise HierarchyError("point lies outside the cell")
    if q == 1:
        return gaps
    if q == 2:
        return gaps * gaps
    return gaps ** q


def audit_hierarchy(h: Hierarchy) -> list:
    """Structural invariant check; returns a list of violation strings."""
    bad = []
    for c in h.cells:
        if c.shortest_side > 0 and c.longest_side / c.shortest_side > 3.0 + 1e-9:
            bad.append(f"cell {c.id}: aspect ratio {c.longest_side / c.shortest_side:.3f} > 3")
        if c.is_leaf:
            if c.point_ids.size > 1:
                bad.append(f"leaf {c.id} holds {c.point_ids.size} locations")
            continue
        child_ids = np.concatenate([h.cells[ch].point_ids for ch in c.children])
        if sorted(child_ids.tolist()) != sorted(c.point_ids.tolist()):
            bad.append(f"cell {c.id}: children do not partition its points")
        axis, x_star = c.divider
        half = c.longest_side * h.lam
        w = slab_count(h.points[c.point_ids, axis], h.weights[c.point_ids], x_star, half)
        n_box = float(h.weights[c.point_ids].sum())
        if w > 9.0 * h.lam * n_box + 1e-9:
            bad.append(
                f"cell {c.id}: slab weight {w} exceeds 9*lambda*n = {9.0 * h.lam * n_box:.3f}"
            )
        lo = c.bounds[axis, 0]
        ell = c.longest_side
        if not (lo + ell / 3.0 - 1e-12 <= x_star <= lo + 2.0 * ell / 3.0 + 1e-12):
            bad.append(f"cell {c.id}: divider outside the middle third")
        for ch in c.children:
            cb = h.cells[ch].bounds
            pc = h.points[h.cells[ch].point_ids]
            if pc.size and not (
                np.all(pc >= cb[:, 0] - 1e-12) and np.all(pc <= cb[:, 1] + 1e-12)
            ):
                bad.append(f"cell {ch}: contains points outside its bounds")
    return bad
