"""Residual-graph Dijkstra engines, NN indexes, and the clique tree."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kserver_match.geometry import CostModel, KspInstance, generate
from kserver_match.matching_state import ExtendedMatchingState
from kserver_match.nk_solver import init_one_server
from kserver_match.reduction import build_gate_graph
from kserver_match.search_engine import (
    INF,
    CliqueTree,
    EngineError,
    KdTreeNNIndex,
    LinearNNIndex,
    ResidualView,
    cell_view,
    dijkstra_explicit,
    run_dijkstra,
)

M1 = CostModel(p=1, q=1)


def random_feasible_state(seed, n=8):
    """A dual-feasible state with free gates: run a few edge reductions."""
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, max(2, n // 2)))
    inst = generate("uniform", n, 2, k, seed=seed, model=M1, integer_box=16)
    from kserver_match.nk_solver import solve_nk

    _, _, st = solve_nk(inst)
    return st


def make_view(st, direction, seed):
    g = st.graph
    rng = np.random.default_rng(seed + 10_000)
    if direction == "forward":
        free_b = st.free_b_mask()
        source_b = np.where(free_b, np.asarray(st.y_b, dtype=np.float64), INF)
        source_a = np.full(g.n_a, INF)
    else:
        y = np.asarray(st.y_b, dtype=np.float64)
        source_b = y.max() - y
        source_a = np.full(g.n_a, INF)
    return ResidualView(
        state=st,
        a_ids=np.arange(g.n_a),
        b_ids=np.arange(g.n_b),
        direction=direction,
        source_a=source_a,
        source_b=source_b,
    )


def bellman_ford_labels(view):
    """Independent label oracle: relax every arc until fixpoint."""
    mA, mB = view.n_a, view.n_b
    da = np.asarray(view.source_a, dtype=np.float64).copy()
    db = np.asarray(view.source_b, dtype=np.float64).copy()
    forward = view.direction == "forward"
    for _ in range(mA + mB + 1):
        changed = False
        for j in range(mB):
            row = view.slack_row_from_b(j)
            i = int(view.match_b[j])
            if forward:
                if i >= 0:
                    row = row.copy()
                    row[i] = INF
                cand = db[j] + row
                better = cand < da - 1e-15
                if better.any():
                    da = np.minimum(da, cand)
                    changed = True
            else:
                if i >= 0 and db[j] < da[i] - 1e-15:
                    da[i] = db[j]
                    changed = True
        for i in range(mA):
            j = int(view.match_a[i])
            if forward:
                if j >= 0 and da[i] < db[j] - 1e-15:
                    db[j] = da[i]
                    changed = True
            else:
                row = view.slack_row_from_a(i)
                if j >= 0:
                    row = row.copy()
                    row[j] = INF
                cand = da[i] + row
                if (cand < db - 1e-15).any():
                    db = np.minimum(db, cand)
                    changed = True
        if not changed:
            break
    return da, db


@pytest.mark.parametrize("direction", ["forward", "reversed"])
@pytest.mark.parametrize("seed", range(8))
def test_explicit_labels_match_bellman_ford(direction, seed):
    st = random_feasible_state(seed)
    view = make_view(st, direction, seed)
    res = dijkstra_explicit(view, complete=True)
    da, db = bellman_ford_labels(view)
    assert np.allclose(res.kappa_a, da, atol=1e-12)
    assert np.allclose(res.kappa_b, db, atol=1e-12)


@pytest.mark.parametrize("direction", ["forward", "reversed"])
@pytest.mark.parametrize("nn", ["linear", "kdtree"])
@pytest.mark.parametrize("seed", range(6))
def test_bcp_engine_matches_explicit(direction, nn, seed):
    st = random_feasible_state(seed, n=10)
    view = make_view(st, direction, seed)
    ref = dijkstra_explicit(view, complete=True)
    got = run_dijkstra(view, engine="bcp", nn_backend=nn, complete=True)
    assert np.array_equal(ref.kappa_a, got.kappa_a)
    assert np.array_equal(ref.kappa_b, got.kappa_b)
    assert ref.settle_sequence == got.settle_sequence


def test_early_termination_agrees_on_the_stop():
    st = random_feasible_state(3, n=10)
    view = make_view(st, "reversed", 3)
    extra_a = np.asarray(st.y_a, dtype=np.float64)
    full = dijkstra_explicit(view, extra_a=extra_a, complete=True)
    short = dijkstra_explicit(view, extra_a=extra_a, complete=False)
    assert short.stop_value == full.stop_value
    assert short.stop_side == full.stop_side
    assert short.stop_index == full.stop_index


def test_negative_slack_raises():
    inst = KspInstance(d=1, model=M1, requests=np.array([[0], [5]]), k=1)
    st = ExtendedMatchingState(build_gate_graph(inst))
    st.y_b[1] = 9  # slack of edge (0, 1) is now -4
    view = cell_view(st, np.arange(2), np.arange(2))
    with pytest.raises(EngineError):
        dijkstra_explicit(view, extra_a=np.zeros(2), complete=True)


weights_st = st.lists(st.floats(0, 10), min_size=1, max_size=40)


@given(st.integers(0, 10_000), weights_st)
@settings(max_examples=60, deadline=None)
def test_kdtree_matches_linear_scan(seed, weights):
    rng = np.random.default_rng(seed)
    n = len(weights)
    pts = rng.uniform(0, 1, size=(n, 2))
    model = CostModel(p=2, q=2)
    lin = LinearNNIndex(pts, model)
    kd = KdTreeNNIndex(pts, model)
    alive = []
    for i, w in enumerate(weights):
        lin.insert(i, w)
        kd.insert(i, w)
        alive.append(i)
        if rng.random() < 0.3 and alive:
            victim = alive.pop(int(rng.integers(0, len(alive))))
            lin.remove(victim)
            kd.remove(victim)
        q = rng.uniform(0, 1, size=2)
        exclude = int(rng.integers(-1, n))
        got = kd.query(q, exclude=exclude)
        want = lin.query(q, exclude=exclude)
        if want is None:
            assert got is None
        else:
            assert got[0] == want[0]
            assert got[1] == pytest.approx(want[1], abs=1e-12)


def test_clique_tree_membership_bound():
    for seed in range(5):
        st_obj = random_feasible_state(seed, n=16)
        view = make_view(st_obj, "forward", seed)
        tree = CliqueTree(view)
        orders = np.unique(
            np.concatenate([view.order_a, view.order_b])
        )
        bound = math.ceil(math.log2(max(2, orders.size))) + 1
        assert tree.max_membership() <= bound


def test_clique_tree_covers_every_edge_once():
    st_obj = random_feasible_state(1, n=12)
    view = make_view(st_obj, "forward", 1)
    tree = CliqueTree(view)
    counts = {}
    for a_members, b_members in tree.nodes:
        for i in a_members:
            for j in b_members:
                if view.order_a[i] < view.order_b[j]:
                    counts[(int(i), int(j))] = counts.get((int(i), int(j)), 0) + 1
    expected = {
        (i, j)
        for i in range(view.n_a)
        for j in range(view.n_b)
        if view.order_a[i] < view.order_b[j]
    }
    assert set(counts) == expected
    assert all(v == 1 for v in counts.values())
