"""Spatial hierarchy construction and its structural audit."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kserver_match.geometry import CostModel
from kserver_match.hierarchy import (
    HierarchyError,
    audit_hierarchy,
    boundary_distance,
    build_hierarchy,
    default_lambda,
    slab_count,
)


def unit_points(n, d=2, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, 1.0, size=(n, d))
    while np.unique(pts, axis=0).shape[0] != n:
        pts = rng.uniform(0.0, 1.0, size=(n, d))
    return pts


def test_single_point_tree():
    h = build_hierarchy(np.array([[0.5, 0.5]]), lam=0.1)
    root = h.cell(h.root)
    assert root.is_leaf
    assert root.contains(np.array([0.5, 0.5]))


def test_duplicate_locations_rejected():
    pts = np.array([[0.1, 0.1], [0.1, 0.1], [0.5, 0.5]])
    with pytest.raises(HierarchyError):
        build_hierarchy(pts, lam=0.1)


def test_default_lambda_values():
    lam, clamped = default_lambda(10**10, 2, "ksp")
    assert lam == pytest.approx(9 * (10**10) ** (-1 / 5))
    assert not clamped
    lam, clamped = default_lambda(16, 2, "ksp")
    assert lam == pytest.approx(1 / 3) and clamped
    lam_grs, _ = default_lambda(10**10, 2, "grs")
    assert lam_grs == pytest.approx(9 * (10**10) ** (-1 / 4))


@pytest.mark.parametrize("n", [16, 64, 200])
@pytest.mark.parametrize("d", [1, 2, 3])
def test_built_trees_pass_the_audit(n, d):
    pts = unit_points(n, d, seed=n + d)
    lam, _ = default_lambda(n, d, "ksp")
    h = build_hierarchy(pts, lam)
    assert audit_hierarchy(h) == []
    # every point sits in exactly one leaf
    seen = sorted(pid for c in h.leaves() for pid in c.point_ids)
    assert seen == list(range(n))


def test_leaves_hold_single_locations():
    pts = unit_points(40, 2, seed=5)
    h = build_hierarchy(pts, 0.2)
    for leaf in h.leaves():
        assert len(leaf.point_ids) == 1


def test_aspect_ratio_bound():
    pts = unit_points(120, 2, seed=9)
    h = build_hierarchy(pts, 0.15)
    for c in h.cells:
        if not np.all(np.isfinite(c.bounds)):
            continue
        sides = c.sides
        assert sides.max() <= 3 * sides.min() + 1e-9


def test_divider_strip_bound():
    # the chosen divider's half-width-lam slab holds at most 9 lam n_cell weight
    pts = unit_points(256, 2, seed=11)
    lam, _ = default_lambda(256, 2, "ksp")
    h = build_hierarchy(pts, lam)
    w = h.weights
    for c in h.cells:
        if c.divider is None:
            continue
        axis, x = c.divider
        ell = float(c.sides.max())
        inside = list(c.point_ids)
        total = sum(int(w[p]) for p in inside)
        strip = slab_count(
            h.points[inside, axis], np.asarray([int(w[p]) for p in inside]), x, ell * lam
        )
        assert strip <= 9 * lam * total + 1e-9


@given(st.integers(0, 1000), st.integers(2, 60))
@settings(max_examples=40, deadline=None)
def test_audit_accepts_random_trees(seed, n):
    pts = unit_points(n, 2, seed=seed)
    lam, _ = default_lambda(n, 2, "ksp")
    h = build_hierarchy(pts, lam)
    assert audit_hierarchy(h) == []


def test_boundary_distance_values():
    bounds = np.array([[0.0, 1.0], [0.0, 2.0]])
    assert boundary_distance(np.array([0.25, 1.0]), bounds, 1) == pytest.approx(0.25)
    assert boundary_distance(np.array([0.25, 1.0]), bounds, 2) == pytest.approx(0.0625)
    assert boundary_distance(np.array([0.5, 0.1]), bounds, 1) == pytest.approx(0.1)
    with pytest.raises(HierarchyError):
        boundary_distance(np.array([2.0, 0.5]), bounds, 1)


def test_weights_drive_the_split():
    # heavy points should push the divider away from them
    pts = np.array([[0.05, 0.5], [0.1, 0.5], [0.9, 0.5], [0.95, 0.45]])
    h = build_hierarchy(pts, 0.05, weights=np.array([5, 5, 1, 1]))
    assert audit_hierarchy(h) == []
