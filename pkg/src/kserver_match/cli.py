"""Command-line interface.

Exit codes: 0 success, 1 verification mismatch, 2 bad input, 3 solver
invariant violation, 4 resource guard tripped.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from .experiments import ExperimentError, run_grs, trace_row, emit_report
from .geometry import (
    CostModel,
    GeometryError,
    KspiInstance,
    generate,
    instance_to_json,
    load_instance,
    save_instance,
)
from .hierarchy import HierarchyError
from .matching_state import StateError
from .nk_solver import InvariantError, solve_nk, solve_nk_kspi
from .oracle import (
    OracleError,
    brute_force_ksp,
    brute_force_kspi,
    hungarian_explicit,
)
from .reduction import (
    Partitioning,
    ReductionError,
    build_gate_graph,
    l1_diameter,
    matching_from_nspi_partitioning,
    matching_to_nspi_instance,
    nspi_lift_offset,
    partitioning_cost,
)
from .search_engine import EngineError
from . import subquadratic

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_INPUT = 2
EXIT_INVARIANT = 3
EXIT_GUARD = 4


class GuardError(RuntimeError):
    pass


def _emit(payload, args, path=None):
    text = json.dumps(payload, indent=1, default=str)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    if getattr(args, "json", False) or not path:
        print(text)


def _model_from_args(args) -> CostModel:
    p = math.inf if str(args.p) in ("inf", "Inf") else float(args.p)
    return CostModel(p=p, q=float(args.q))


def _solver_flags(sub):
    sub.add_argument("--algo", choices=("nk", "subq"), default="nk")
    sub.add_argument("--mode", choices=("ksp", "kspi"), default=None)
    sub.add_argument("--engine", choices=("explicit", "bcp"), default="explicit")
    sub.add_argument("--nn", choices=("linear", "kdtree"), default="linear")
    sub.add_argument("--audit", action="store_true")
    sub.add_argument("--json", action="store_true")


def cmd_gen(args) -> int:
    model = _model_from_args(args)
    inst = generate(
        kind=args.kind,
        n=args.n,
        d=args.d,
        k=args.k,
        seed=args.seed,
        model=model,
        integer_box=args.integer_box,
        servers=args.servers,
    )
    if args.out:
        save_instance(inst, args.out)
        if args.json:
            print(json.dumps(instance_to_json(inst), indent=1))
    else:
        print(json.dumps(instance_to_json(inst), indent=1))
    return EXIT_OK


def _infer_mode(instance, mode):
    if mode is not None:
        return mode
    return "kspi" if isinstance(instance, KspiInstance) else "ksp"


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    mode = _infer_mode(inst, args.mode)
    if mode == "kspi" and not isinstance(inst, KspiInstance):
        raise GeometryError("kspi mode needs an instance with servers")
    t0 = time.perf_counter()
    hierarchy = None
    if args.algo == "nk":
        if mode == "kspi":
            part, trace, _ = solve_nk_kspi(
                inst, engine=args.engine, nn_backend=args.nn, audit=args.audit
            )
        else:
            base = inst.base if isinstance(inst, KspiInstance) else inst
            part, trace, _ = solve_nk(
                base, engine=args.engine, nn_backend=args.nn, audit=args.audit
            )
        cost_value = trace["cost"]
        trace_json = trace
    else:
        res = subquadratic.solve(
            inst,
            mode=mode,
            engine=args.engine,
            nn_backend=args.nn,
            audit=args.audit,
            lam=args.lam,
        )
        part, cost_value = res.solution, res.cost
        trace_json = res.trace.to_json()
        hierarchy = res.hierarchy
    wall = time.perf_counter() - t0
    payload = {
        "algo": args.algo,
        "mode": mode,
        "n": inst.n,
        "k": inst.k,
        "cost": cost_value,
        "partitioning": part.to_json(cost_value),
        "wall_time": wall,
    }
    if args.dump_trace:
        with open(args.dump_trace, "w") as fh:
            json.dump(trace_json, fh, indent=1, default=str)
            fh.write("\n")
    if args.dump_tree:
        if hierarchy is None:
            raise GeometryError("--dump-tree requires --algo subq")
        with open(args.dump_tree, "w") as fh:
            json.dump(hierarchy.to_json(), fh, indent=1, default=str)
            fh.write("\n")
    _emit(payload, args, args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    inst = load_instance(args.instance)
    with open(args.solution) as fh:
        sol = json.load(fh)
    body = sol.get("partitioning", sol)
    part = Partitioning(
        subsequences=[list(map(int, c)) for c in body["subsequences"]],
        servers=(
            None
            if body.get("servers") is None or all(s is None for s in body["servers"])
            else [int(s) for s in body["servers"]]
        ),
    )
    part.validate(inst.n)
    if part.servers is not None and not isinstance(inst, KspiInstance):
        raise ReductionError("solution names servers but the instance has none")
    recomputed = partitioning_cost(part, inst)
    stated = sol.get("cost", body.get("cost"))
    report = {"recomputed_cost": recomputed, "stated_cost": stated, "ok": True}
    eps = args.eps * max(1.0, abs(float(recomputed)))
    if stated is not None and abs(float(stated) - float(recomputed)) > eps:
        report["ok"] = False
        report["reason"] = "stated cost disagrees with the recomputed cost"
    if report["ok"] and args.oracle:
        oracle = (
            brute_force_kspi(inst)
            if isinstance(inst, KspiInstance)
            else brute_force_ksp(inst)
        )
        report["oracle_cost"] = oracle.cost
        if float(recomputed) > float(oracle.cost) + eps:
            report["ok"] = False
            report["reason"] = "solution cost is not optimal"
    _emit(report, args, args.out)
    return EXIT_OK if report["ok"] else EXIT_MISMATCH


def cmd_oracle(args) -> int:
    inst = load_instance(args.instance)
    if args.method == "hungarian":
        g = build_gate_graph(inst)
        t = inst.n if isinstance(inst, KspiInstance) else inst.n - inst.k
        res = hungarian_explicit(g, t)
        payload = {
            "method": res.method,
            "matching_cost": res.cost,
            "pairs": res.solution.pairs(),
        }
    else:
        res = (
            brute_force_kspi(inst)
            if isinstance(inst, KspiInstance)
            else brute_force_ksp(inst)
        )
        payload = {
            "method": res.method,
            "cost": res.cost,
            "partitioning": res.solution.to_json(res.cost),
        }
    _emit(payload, args, args.out)
    return EXIT_OK


def cmd_reduce(args) -> int:
    with open(args.points) as fh:
        obj = json.load(fh)
    a_pts = np.asarray(obj["a_points"])
    b_pts = np.asarray(obj["b_points"])
    if np.all(a_pts == np.round(a_pts)) and np.all(b_pts == np.round(b_pts)):
        a_pts = a_pts.astype(np.int64)
        b_pts = b_pts.astype(np.int64)
    model = CostModel(p=float(obj.get("p", 1)), q=float(obj.get("q", 1)))
    lifted = matching_to_nspi_instance(a_pts, b_pts, model)
    diam = l1_diameter(a_pts, b_pts)
    payload = {
        "instance": instance_to_json(lifted),
        "l1_diameter": diam,
        "lift_offset": nspi_lift_offset(lifted.n, diam),
    }
    if args.solve:
        part, trace, _ = solve_nk_kspi(lifted, audit=args.audit)
        pairs = matching_from_nspi_partitioning(part)
        matching_cost = sum(
            float(np.abs(a_pts[i] - b_pts[j]).sum()) ** model.q for i, j in pairs
        )
        payload["pairs"] = pairs
        payload["matching_cost"] = matching_cost
        payload["lifted_cost"] = trace["cost"]
    if args.out:
        save_instance(lifted, args.out)
    _emit(payload, args)
    return EXIT_OK


def cmd_grs(args) -> int:
    run = run_grs(
        n=args.n,
        d=args.d,
        q=args.q,
        seed=args.seed,
        engine=args.engine,
        nn_backend=args.nn,
        audit=args.audit,
        check_oracle=None if args.oracle is None else bool(args.oracle),
    )
    payload = {
        "n": run.n,
        "d": run.d,
        "q": run.q,
        "seed": run.seed,
        "cost": run.cost,
        "oracle_cost": run.oracle_cost,
        "top_boundary_fraction": run.top_boundary_fraction,
        "wall_time": run.wall_time,
    }
    if args.dump_trace:
        with open(args.dump_trace, "w") as fh:
            json.dump(run.result.trace.to_json(), fh, indent=1, default=str)
            fh.write("\n")
    if (
        run.oracle_cost is not None
        and abs(run.cost - run.oracle_cost) > 1e-6 * max(1.0, run.oracle_cost)
    ):
        payload["ok"] = False
        _emit(payload, args, args.out)
        return EXIT_MISMATCH
    payload["ok"] = True
    _emit(payload, args, args.out)
    return EXIT_OK


def _bench_one(task):
    (n, seed, mode, engine, nn, lam, d, kind) = task
    k = max(1, n // 4)
    inst = generate(kind, n, d, k, seed, servers=(mode == "kspi"))
    t0 = time.perf_counter()
    res = subquadratic.solve(inst, mode=mode, engine=engine, nn_backend=nn, lam=lam)
    wall = time.perf_counter() - t0
    return trace_row(res.trace, d, cost=res.cost, wall_time=wall)


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s]
    if not sizes:
        raise GeometryError("no sizes given")
    tasks = [
        (n, seed, args.mode or "ksp", args.engine, args.nn, args.lam, args.d, args.kind)
        for n in sizes
        for seed in range(args.seeds)
    ]
    workers = max(1, int(os.environ.get("KSERVER_MATCH_THREADS", "1")))
    deadline = time.monotonic() + args.time_limit if args.time_limit else None
    rows = []
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(_bench_one, tasks):
                rows.append(row)
                if deadline and time.monotonic() > deadline:
                    raise GuardError("bench time limit exceeded")
    else:
        for task in tasks:
            rows.append(_bench_one(task))
            if deadline and time.monotonic() > deadline:
                raise GuardError("bench time limit exceeded")
    if args.out:
        emit_report(rows, args.out, json_path=args.json_out)
    if args.json or not args.out:
        print(json.dumps(rows, indent=1, default=str))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="kserver-match",
        description="Offline k-server chaining via partial bipartite matching.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a seeded instance")
    g.add_argument("--kind", choices=("uniform", "clustered", "collinear"), default="uniform")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--p", default="2")
    g.add_argument("--q", type=float, default=1.0)
    g.add_argument("--integer-box", type=int, default=None)
    g.add_argument("--servers", action="store_true")
    g.add_argument("--json", action="store_true")
    g.add_argument("-o", "--out", default=None)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="solve an instance")
    s.add_argument("instance")
    _solver_flags(s)
    s.add_argument("--lam", type=float, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dump-tree", default=None)
    s.add_argument("--dump-trace", default=None)
    s.add_argument("-o", "--out", default=None)
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="check a solution file against its instance")
    v.add_argument("instance")
    v.add_argument("solution")
    v.add_argument("--eps", type=float, default=1e-9)
    v.add_argument("--oracle", action="store_true", help="also check optimality")
    v.add_argument("--json", action="store_true")
    v.add_argument("-o", "--out", default=None)
    v.set_defaults(func=cmd_verify)

    o = sub.add_parser("oracle", help="slow exhaustive / explicit reference solver")
    o.add_argument("instance")
    o.add_argument("--method", choices=("brute", "hungarian"), default="brute")
    o.add_argument("--json", action="store_true")
    o.add_argument("-o", "--out", default=None)
    o.set_defaults(func=cmd_oracle)

    r = sub.add_parser("reduce", help="lift a matching instance to server form")
    r.add_argument("points", help="JSON with a_points, b_points, optional p, q")
    r.add_argument("--solve", action="store_true")
    r.add_argument("--audit", action="store_true")
    r.add_argument("--json", action="store_true")
    r.add_argument("-o", "--out", default=None)
    r.set_defaults(func=cmd_reduce)

    gr = sub.add_parser("grs", help="randomly colored min-cost perfect matching")
    gr.add_argument("--n", type=int, required=True)
    gr.add_argument("--d", type=int, default=2)
    gr.add_argument("--q", type=float, default=2.0)
    gr.add_argument("--seed", type=int, default=0)
    gr.add_argument("--engine", choices=("explicit", "bcp"), default="explicit")
    gr.add_argument("--nn", choices=("linear", "kdtree"), default="linear")
    gr.add_argument("--audit", action="store_true")
    gr.add_argument("--oracle", type=int, default=None, help="1 to force, 0 to skip")
    gr.add_argument("--json", action="store_true")
    gr.add_argument("--dump-trace", default=None)
    gr.add_argument("-o", "--out", default=None)
    gr.set_defaults(func=cmd_grs)

    b = sub.add_parser("bench", help="timed runs over a size sweep")
    b.add_argument("--sizes", required=True, help="comma-separated n values")
    b.add_argument("--seeds", type=int, default=3)
    b.add_argument("--d", type=int, default=2)
    b.add_argument("--kind", default="uniform")
    b.add_argument("--mode", choices=("ksp", "kspi"), default="ksp")
    b.add_argument("--engine", choices=("explicit", "bcp"), default="explicit")
    b.add_argument("--nn", choices=("linear", "kdtree"), default="linear")
    b.add_argument("--lam", type=float, default=None)
    b.add_argument("--time-limit", type=float, default=None)
    b.add_argument("--json", action="store_true")
    b.add_argument("--json-out", default=None)
    b.add_argument("-o", "--out", default=None)
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (InvariantError, EngineError, StateError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (GuardError, OverflowError) as exc:
        print(f"resource guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except OracleError as exc:
        if "guard" in str(exc):
            print(f"resource guard: {exc}", file=sys.stderr)
            return EXIT_GUARD
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (
        GeometryError,
        ReductionError,
        HierarchyError,
        ExperimentError,
        FileNotFoundError,
        KeyError,
        json.JSONDecodeError,
        ValueError,
    ) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
