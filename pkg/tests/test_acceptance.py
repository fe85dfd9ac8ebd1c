"""Acceptance gate: optimality, invariants, certificates, scaling, experiments.

Each test states its tolerance inline.  The large-n tests at the bottom
are the slow part of the suite (several minutes each); everything above
them finishes in well under a minute per test.
"""

import math
import time

import numpy as np
import pytest

from kserver_match import subquadratic
from kserver_match.experiments import run_grs
from kserver_match.geometry import CostModel, generate
from kserver_match.hierarchy import audit_hierarchy, build_hierarchy, default_lambda
from kserver_match.nk_solver import init_one_server, solve_nk, solve_nk_kspi
from kserver_match.oracle import (
    brute_force_ksp_all,
    brute_force_kspi,
    dual_cost_identity,
    hungarian_explicit,
    verify_certificate,
)
from kserver_match.reduction import (
    build_gate_graph,
    build_matching_graph,
    l1_diameter,
    matching_from_nspi_partitioning,
    matching_to_nspi_instance,
    nspi_lift_offset,
)
from kserver_match.search_engine import ResidualView, dijkstra_bcp, dijkstra_explicit

M1 = CostModel(p=1, q=1)


def small_exact_instance(seed, n=None, k=1):
    rng = np.random.default_rng(seed)
    if n is None:
        n = int(rng.integers(2, 13))
    return generate("uniform", n, 2, min(k, n), seed=seed, model=M1, integer_box=16)


# -- 1: exact optimality at small scale, all three solvers, every k ----------


def test_01_exact_small_scale_all_k():
    """200 seeded integer instances, every k: all solvers agree exactly."""
    t0 = time.perf_counter()
    for seed in range(200):
        inst1 = small_exact_instance(seed)
        n = inst1.n
        truth = brute_force_ksp_all(inst1)  # optimal cost for every k
        for k in range(1, n + 1):
            inst = generate("uniform", n, 2, k, seed=seed, model=M1, integer_box=16)
            _, trace, _ = solve_nk(inst)
            assert trace["cost"] == truth[k - 1], (seed, k)
            res = subquadratic.solve(inst)
            assert res.cost == truth[k - 1], (seed, k)
    assert time.perf_counter() - t0 < 120.0


# -- 2: medium scale against the explicit Hungarian oracle -------------------


def test_02a_medium_scale_ksp():
    """50 real-coordinate instances, both solvers within 1e-6 relative."""
    rng = np.random.default_rng(42)
    for trial in range(50):
        n = int(rng.integers(5, 61))
        k = int(rng.integers(1, n + 1))
        inst = generate("uniform", n, 2, k, seed=trial, model=CostModel(p=2, q=1))
        g = build_gate_graph(inst)
        ref = hungarian_explicit(g, n - k).cost
        _, trace, _ = solve_nk(inst)
        assert trace["cost"] == pytest.approx(ref, rel=1e-6)
        res = subquadratic.solve(inst)
        assert res.cost == pytest.approx(ref, rel=1e-6)


def test_02b_medium_scale_kspi():
    """50 server-start instances (k <= 8), both solvers within 1e-6."""
    rng = np.random.default_rng(43)
    for trial in range(50):
        n = int(rng.integers(5, 61))
        k = int(rng.integers(1, 9))
        k = min(k, n)
        inst = generate(
            "uniform", n, 2, k, seed=trial + 1000, model=CostModel(p=2, q=1), servers=True
        )
        g = build_gate_graph(inst)
        ref = hungarian_explicit(g, n).cost
        _, trace, _ = solve_nk_kspi(inst)
        assert trace["cost"] == pytest.approx(ref, rel=1e-6)
        res = subquadratic.solve(inst, mode="kspi")
        assert res.cost == pytest.approx(ref, rel=1e-6)


# -- 3: invariant suite, audits on, zero violations --------------------------


def test_03_invariant_suite_zero_violations():
    """Audited runs check feasibility, no-cross, path locality, monotone
    threshold, per-cell dual caps, and the net-cost identity (1e-9) at
    every step; any violation raises, so completing is the assertion."""
    for seed in range(30):
        inst = small_exact_instance(seed + 300, k=3)
        solve_nk(inst, audit=True)
        res = subquadratic.solve(inst, audit=True)
        assert res.trace.audit_failures == 0
    for seed in range(10):
        inst = generate(
            "uniform", 20, 2, 4, seed=seed, model=CostModel(p=2, q=1), servers=True
        )
        solve_nk_kspi(inst, audit=True)
        res = subquadratic.solve(inst, mode="kspi", audit=True)
        assert res.trace.audit_failures == 0
    for seed in range(5):
        inst = generate("clustered", 40, 2, 8, seed=seed, model=CostModel(p=2, q=1))
        res = subquadratic.solve(inst, audit=True)
        hist = res.trace.phi_history
        assert all(hist[i] <= hist[i + 1] + 1e-9 for i in range(len(hist) - 1))


# -- 4: certificates after init and after every reduction, exact mode --------


def test_04_certificates_exact_integer_mode():
    """verify_certificate and the cost identity hold with zero tolerance
    after init and after each edge removal (integer coordinates, l1)."""
    for seed in range(25):
        inst = small_exact_instance(seed + 600, k=1)
        n = inst.n
        state = init_one_server(inst)
        g = state.graph
        ok, report = verify_certificate(g, state.matching, state.y_a, state.y_b, eps=0)
        assert ok, (seed, report)
        assert dual_cost_identity(g, state.matching, state.y_a, state.y_b) == 0
        # audit mode re-runs both checks (tolerance 0 in exact mode) after
        # every reduction and raises on the first failure
        for k in range(2, n + 1):
            inst_k = generate("uniform", n, 2, k, seed=seed + 600, model=M1, integer_box=16)
            _, _, st = solve_nk(inst_k, audit=True)
            assert dual_cost_identity(st.graph, st.matching, st.y_a, st.y_b) == 0


# -- 5: engine equivalence on random feasible states -------------------------


def test_05_engine_equivalence_label_maps():
    """dijkstra_explicit and dijkstra_bcp: identical labels, both views,
    on 100 random dual-feasible states in exact integer mode."""
    checked = 0
    seed = 0
    while checked < 100:
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 12))
        k = int(rng.integers(1, n))
        inst = generate("uniform", n, 2, k, seed=seed, model=M1, integer_box=16)
        _, _, st = solve_nk(inst)
        g = st.graph
        y = np.asarray(st.y_b, dtype=np.float64)
        for direction in ("forward", "reversed"):
            if direction == "forward":
                free_b = st.free_b_mask()
                source_b = np.where(free_b, y, math.inf)
            else:
                source_b = y.max() - y
            view = ResidualView(
                state=st,
                a_ids=np.arange(g.n_a),
                b_ids=np.arange(g.n_b),
                direction=direction,
                source_a=np.full(g.n_a, math.inf),
                source_b=source_b,
            )
            ref = dijkstra_explicit(view, complete=True)
            got = dijkstra_bcp(view, complete=True)
            assert np.array_equal(ref.kappa_a, got.kappa_a), (seed, direction)
            assert np.array_equal(ref.kappa_b, got.kappa_b), (seed, direction)
            checked += 1
        seed += 1


# -- 6: hierarchy structural audit -------------------------------------------


@pytest.mark.parametrize("n", [64, 256, 1024])
def test_06_hierarchy_audit(n):
    """Aspect ratio <= 3 and divider strip weight <= 9 lam n_cell; zero
    exceptions over several seeds per size."""
    for seed in range(3):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(0, 1, size=(n, 2))
        while np.unique(pts, axis=0).shape[0] != n:
            pts = rng.uniform(0, 1, size=(n, 2))
        lam, _ = default_lambda(n, 2, "ksp")
        h = build_hierarchy(pts, lam, weights=np.full(n, 2))
        assert audit_hierarchy(h) == []


# -- 7: matching-to-server-problem lift --------------------------------------


def test_07_lift_reduction_recovers_matching():
    """20 integer instances n <= 6: the lifted optimum equals the direct
    optimal matching, and the lift-offset identity residual is exactly 0."""
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(2, 7))
        a = rng.integers(0, 12, size=(n, 2))
        b = rng.integers(0, 12, size=(n, 2))
        while np.unique(np.concatenate([a, b]), axis=0).shape[0] < 2 * n:
            a = rng.integers(0, 12, size=(n, 2))
            b = rng.integers(0, 12, size=(n, 2))
        direct = hungarian_explicit(build_matching_graph(a, b, M1), n).cost
        lifted = matching_to_nspi_instance(a, b, M1)
        res = brute_force_kspi(lifted)
        offset = nspi_lift_offset(n, l1_diameter(a, b))
        assert res.cost - offset - direct == 0
        pairs = matching_from_nspi_partitioning(res.solution)
        recovered = sum(int(np.abs(a[i] - b[j]).sum()) for i, j in pairs)
        assert recovered == direct


# -- 8: scaling of per-cell search counts ------------------------------------


@pytest.mark.slow
def test_08_per_cell_search_scaling():
    """Max-over-cells Dijkstra executions grow sublinearly: fitted log-log
    exponent < 1.0 over n in {256, 512, 1024, 2048}, 5 seeds each."""
    t0 = time.perf_counter()
    sizes = [256, 512, 1024, 2048]
    means = []
    for n in sizes:
        vals = []
        for seed in range(5):
            inst = generate(
                "uniform", n, 2, n // 4, seed=seed, model=CostModel(p=2, q=1)
            )
            res = subquadratic.solve(inst)
            vals.append(max(res.trace.dijkstra_per_cell.values()))
        means.append(float(np.mean(vals)))
    slope = np.polyfit(np.log(sizes), np.log(means), 1)[0]
    assert slope < 1.0, (sizes, means, slope)
    assert time.perf_counter() - t0 < 900.0


# -- 9: randomly-colored matching experiment ---------------------------------


def test_09a_grs_matches_oracle():
    """n = 64, 20 seeds, squared euclidean: within 1e-6 of the oracle."""
    for seed in range(20):
        run = run_grs(64, q=2.0, seed=seed, check_oracle=True)
        assert run.cost == pytest.approx(run.oracle_cost, rel=1e-6), seed


@pytest.mark.slow
def test_09b_top_boundary_fraction_decreases():
    """Mean fraction of entry gates matched to the top divider drops
    strictly from n = 256 to n = 4096 (10 seeds each)."""
    fractions = {}
    for n in (256, 4096):
        vals = [
            run_grs(n, q=2.0, seed=seed, check_oracle=False).top_boundary_fraction
            for seed in range(10)
        ]
        fractions[n] = float(np.mean(vals))
    assert fractions[4096] < fractions[256], fractions
