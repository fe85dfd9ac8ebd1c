"""Cost models, instances, generators, and JSON round-trips."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kserver_match.geometry import (
    CostModel,
    GeometryError,
    KspInstance,
    KspiInstance,
    cost,
    cost_to_many,
    generate,
    instance_from_json,
    instance_to_json,
    is_exact,
    jitter_duplicates,
    normalize,
    spread,
)


def test_cost_hand_values():
    m1 = CostModel(p=1, q=1)
    assert cost([0, 0], [3, 4], m1) == 7
    assert cost([0, 0], [3, 4], CostModel(p=2, q=1)) == pytest.approx(5.0)
    assert cost([0, 0], [3, 4], CostModel(p=2, q=2)) == pytest.approx(25.0)
    assert cost([0, 0], [3, 4], CostModel(p=math.inf, q=1)) == 4


def test_integer_l1_costs_stay_integer():
    m = CostModel(p=1, q=1)
    u = np.array([1, 2], dtype=np.int64)
    pts = np.array([[4, 6], [0, 0]], dtype=np.int64)
    row = cost_to_many(u, pts, m)
    assert np.issubdtype(row.dtype, np.integer)
    assert row.tolist() == [7, 3]


def test_bad_model_parameters_rejected():
    with pytest.raises(GeometryError):
        CostModel(p=0.5, q=1)
    with pytest.raises(GeometryError):
        CostModel(p=2, q=0.5)


coords = st.integers(min_value=-50, max_value=50)


@given(
    st.lists(st.tuples(coords, coords), min_size=2, max_size=12),
    st.tuples(coords, coords),
)
@settings(max_examples=100, deadline=None)
def test_cost_is_a_metric_when_q_is_one(pts, extra):
    m = CostModel(p=1, q=1)
    pts = [np.array(p) for p in pts]
    w = np.array(extra)
    for u in pts:
        for v in pts:
            assert cost(u, v, m) == cost(v, u, m)
            assert cost(u, v, m) <= cost(u, w, m) + cost(w, v, m)
    assert cost(pts[0], pts[0], m) == 0


@given(st.floats(1.0, 8.0), st.floats(1.0, 3.0))
@settings(max_examples=50, deadline=None)
def test_cost_to_many_matches_scalar(p, q):
    m = CostModel(p=p, q=q)
    rng = np.random.default_rng(0)
    u = rng.uniform(-1, 1, size=3)
    pts = rng.uniform(-1, 1, size=(7, 3))
    row = cost_to_many(u, pts, m)
    for i in range(7):
        assert row[i] == pytest.approx(cost(u, pts[i], m), rel=1e-12)


def test_instance_validation():
    m = CostModel(p=1, q=1)
    with pytest.raises(GeometryError):
        KspInstance(d=2, model=m, requests=np.zeros((3, 2)), k=4)
    inst = KspInstance(d=2, model=m, requests=np.arange(6).reshape(3, 2), k=2)
    assert inst.n == 3
    with pytest.raises(GeometryError):
        KspiInstance(base=inst, servers=np.zeros((3, 2)))


def test_is_exact_requires_integer_l1():
    reqs = np.array([[0, 0], [1, 2]])
    assert is_exact(KspInstance(d=2, model=CostModel(p=1, q=1), requests=reqs, k=1))
    assert not is_exact(KspInstance(d=2, model=CostModel(p=2, q=1), requests=reqs, k=1))
    assert not is_exact(
        KspInstance(d=2, model=CostModel(p=1, q=1), requests=reqs + 0.5, k=1)
    )


def test_spread_and_normalize():
    m = CostModel(p=2, q=1)
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [10.0, 0.0]])
    rep = spread(pts, m)
    assert rep.diameter == pytest.approx(10.0)
    assert rep.closest_pair == pytest.approx(1.0)
    assert rep.spread == pytest.approx(10.0)
    inst = KspInstance(d=2, model=m, requests=pts, k=1)
    norm = normalize(inst)
    out = norm.instance.requests
    assert out.min() >= 0.0 and out.max() <= 1.0 + 1e-12
    assert norm.scale == pytest.approx(10.0)


def test_jitter_only_touches_duplicates():
    m = CostModel(p=2, q=1)
    reqs = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    inst = KspInstance(d=2, model=m, requests=reqs, k=1)
    with pytest.warns(UserWarning):
        out = jitter_duplicates(inst)
    assert np.unique(out.requests, axis=0).shape[0] == 3
    assert np.abs(out.requests - reqs).max() < 1e-9


@pytest.mark.parametrize("kind", ["uniform", "clustered", "collinear"])
@pytest.mark.parametrize("servers", [False, True])
def test_generate_is_seeded_and_distinct(kind, servers):
    a = generate(kind, 20, 2, 3, seed=7, servers=servers)
    b = generate(kind, 20, 2, 3, seed=7, servers=servers)
    assert np.array_equal(a.all_points, b.all_points)
    assert np.unique(a.all_points, axis=0).shape[0] == a.all_points.shape[0]
    c = generate(kind, 20, 2, 3, seed=8, servers=servers)
    assert not np.array_equal(a.all_points, c.all_points)


def test_generate_integer_box():
    inst = generate("uniform", 10, 2, 2, seed=0, model=CostModel(p=1, q=1), integer_box=16)
    assert np.issubdtype(inst.requests.dtype, np.integer)
    assert inst.requests.min() >= 0 and inst.requests.max() <= 16
    assert is_exact(inst)


def test_json_round_trip(tmp_path):
    inst = generate("uniform", 8, 3, 2, seed=1, servers=True, model=CostModel(p=math.inf, q=2))
    blob = json.dumps(instance_to_json(inst))
    back = instance_from_json(json.loads(blob))
    assert isinstance(back, KspiInstance)
    assert back.model.p == math.inf and back.model.q == 2
    assert np.allclose(back.requests, inst.requests)
    assert np.allclose(back.servers, inst.servers)
