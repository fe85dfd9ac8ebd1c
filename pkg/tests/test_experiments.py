"""Colored-matching runs, witness chains, and report emission."""

import csv

import numpy as np
import pytest

from kserver_match.experiments import (
    ExperimentError,
    emit_report,
    load_report,
    random_color_split,
    run_grs,
    trace_row,
    witness_matching,
)


def test_random_color_split_is_a_partition():
    pts = np.arange(40).reshape(20, 2).astype(float)
    a, b = random_color_split(pts, seed=3)
    assert a.shape == b.shape == (10, 2)
    merged = np.concatenate([a, b], axis=0)
    assert np.array_equal(
        np.sort(merged.view([("x", float), ("y", float)]).ravel(), order=["x", "y"]),
        np.sort(pts.view([("x", float), ("y", float)]).ravel(), order=["x", "y"]),
    )
    a2, b2 = random_color_split(pts, seed=3)
    assert np.array_equal(a, a2)
    with pytest.raises(ExperimentError):
        random_color_split(pts[:3], seed=0)


def test_run_grs_matches_its_oracle():
    run = run_grs(12, seed=5)
    assert run.oracle_cost is not None
    assert run.cost == pytest.approx(run.oracle_cost, rel=1e-9)
    assert 0.0 <= run.top_boundary_fraction <= 1.0


def test_run_grs_is_seeded():
    r1 = run_grs(10, seed=2, check_oracle=False)
    r2 = run_grs(10, seed=2, check_oracle=False)
    assert r1.cost == r2.cost


def test_witness_matching_bounds():
    rng = np.random.default_rng(1)
    pts = rng.uniform(0, 1, size=(50, 2))
    orders = np.arange(50)
    pairs, stats = witness_matching(pts, orders, ell=1.0)
    assert stats["unmatched"] == stats["squares"]
    assert stats["matched_pairs"] + stats["unmatched"] == 50
    assert stats["cost"] <= stats["cost_bound"] + 1e-9
    for u, v in pairs:
        assert orders[u] < orders[v]


def test_witness_matching_respects_order_not_index():
    pts = np.array([[0.1, 0.1], [0.12, 0.11], [0.9, 0.9]])
    orders = np.array([5, 2, 7])
    pairs, _ = witness_matching(pts, orders, ell=1.0, grid_exponent=0.0)
    assert (1, 0) in pairs  # order 2 chains before order 5 in the same square


def test_emit_and_load_report(tmp_path):
    rows = [
        {
            "n": 8,
            "d": 2,
            "mode": "ksp",
            "engine": "explicit",
            "lambda": 0.3,
            "dijkstra_runs": 10,
            "nn_queries": 0,
            "max_searches_per_cell": 2,
            "total_merge_iters": 4,
            "phi_final": 0.5,
            "cost": 1.25,
            "wall_time": 0.01,
        }
    ]
    csv_path = tmp_path / "report.csv"
    json_path = tmp_path / "report.json"
    emit_report(rows, csv_path, json_path)
    back = load_report(csv_path)
    assert len(back) == 1
    assert back[0]["n"] == "8" and back[0]["cost"] == "1.25"
    assert json_path.exists()


def test_trace_row_shape():
    from kserver_match import subquadratic
    from kserver_match.geometry import CostModel, generate

    inst = generate("uniform", 16, 2, 4, seed=0, model=CostModel(p=1, q=1), integer_box=32)
    res = subquadratic.solve(inst)
    row = trace_row(res.trace, 2, cost=res.cost, wall_time=0.0)
    assert row["n"] == 16
    assert row["dijkstra_runs"] == res.trace.dijkstra_runs
    assert row["max_searches_per_cell"] >= 1
