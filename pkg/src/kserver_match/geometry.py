"""Points, cost models, problem instances, and seeded generators.

Coordinates are stored as numpy arrays.  When every coordinate is an
integer and the cost model is (p=1, q=1), all pairwise costs are exact
integers; the partial-matching solvers exploit this for exact arithmetic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

INF_P = math.inf


class GeometryError(ValueError):
    """Invalid geometric input (dimension mismatch, degenerate point set)."""


@dataclass(frozen=True)
class CostModel:
    """Distance ||u - v||_p raised to the exponent q."""

    p: float = 2.0
    q: float = 1.0

    def __post_init__(self):
        if self.p < 1:
            raise GeometryError(f"norm parameter p must be >= 1, got {self.p}")
        if self.q < 1:
            raise GeometryError(f"cost exponent q must be >= 1, got {self.q}")

    @property
    def is_metric(self) -> bool:
        return self.q == 1


def _as_points(pts, d=None) -> np.ndarray:
    arr = np.asarray(pts)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise GeometryError("points must be a 2-d array of shape (m, d)")
    if d is not None and arr.shape[1] != d:
        raise GeometryError(f"expected dimension {d}, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr.astype(np.float64))):
        raise GeometryError("coordinates must be finite")
    return arr


def cost(u, v, model: CostModel):
    """Cost of the edge between two points: ||u - v||_p ** q."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise GeometryError(f"dimension mismatch: {u.shape} vs {v.shape}")
    delta = u - v
    if model.p == 1:
        dist = np.abs(delta).sum()
    elif model.p == INF_P:
        dist = np.abs(delta).max() if delta.size else 0
    elif model.p == 2:
        dist = math.sqrt(float((delta * delta).sum()))
    else:
        dist = float((np.abs(delta.astype(np.float64)) ** model.p).sum()) ** (1.0 / model.p)
    if model.q == 1:
        return dist
    if model.q == 2:
        return dist * dist
    if float(model.q).is_integer():
        return dist ** int(model.q)
    return float(dist) ** model.q


def cost_to_many(u, pts: np.ndarray, model: CostModel) -> np.ndarray:
    """Vectorized cost from one point to each row of pts."""
    u = np.asarray(u)
    if pts.size == 0:
        return np.zeros(0, dtype=pts.dtype if model.p == 1 else np.float64)
    delta = pts - u
    if model.p == 1:
        dist = np.abs(delta).sum(axis=1)
    elif model.p == INF_P:
        dist = np.abs(delta).max(axis=1)
    elif model.p == 2:
        dist = np.sqrt((delta.astype(np.float64) ** 2).sum(axis=1))
    else:
        dist = (np.abs(delta.astype(np.float64)) ** model.p).sum(axis=1) ** (1.0 / model.p)
    if model.q == 1:
        return dist
    if model.q == 2:
        return dist * dist
    if float(model.q).is_integer():
        return dist ** int(model.q)
    return dist.astype(np.float64) ** model.q


@dataclass(frozen=True)
class KspInstance:
    """A request sequence to be partitioned into k order-preserving chains."""

    d: int
    model: CostModel
    requests: np.ndarray  # (n, d)
    k: int

    def __post_init__(self):
        object.__setattr__(self, "requests", _as_points(self.requests, self.d))
        n = self.n
        if n < 1:
            raise GeometryError("instance needs at least one request")
        if not (1 <= self.k <= n):
            raise GeometryError(f"k must be in [1, {n}], got {self.k}")

    @property
    def n(self) -> int:
        return int(self.requests.shape[0])

    @property
    def all_points(self) -> np.ndarray:
        return self.requests


@dataclass(frozen=True)
class KspiInstance:
    """k-SP with fixed initial server locations heading each chain."""

    base: KspInstance
    servers: np.ndarray  # (k, d)

    def __post_init__(self):
        object.__setattr__(self, "servers", _as_points(self.servers, self.base.d))
        if self.servers.shape[0] != self.base.k:
            raise GeometryError(
                f"expected {self.base.k} servers, got {self.servers.shape[0]}"
            )

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def model(self) -> CostModel:
        return self.base.model

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def k(self) -> int:
        return self.base.k

    @property
    def requests(self) -> np.ndarray:
        return self.base.requests

    @property
    def all_points(self) -> np.ndarray:
        return np.concatenate([self.base.requests, self.servers], axis=0)


def is_exact(instance) -> bool:
    """True when all costs are provably integral: integer coords, p=1, q=1."""
    model = instance.model
    if model.p != 1 or model.q != 1:
        return False
    pts = instance.all_points
    if np.issubdtype(pts.dtype, np.integer):
        return True
    return bool(np.all(pts == np.round(pts)))


@dataclass(frozen=True)
class SpreadReport:
    diameter: float
    closest_pair: float
    spread: float


def spread(points, model: CostModel) -> SpreadReport:
    """Diameter, closest nonzero pair distance, and their ratio."""
    pts = _as_points(points)
    m = pts.shape[0]
    if m < 2:
        raise GeometryError("spread needs at least 2 points")
    diameter = 0.0
    closest = math.inf
    for i in range(m - 1):
        row = cost_to_many(pts[i], pts[i + 1 :], model)
        row_max = row.max()
        if row_max > diameter:
            diameter = row_max
        nz = row[row > 0]
        if nz.size:
            row_min = nz.min()
            if row_min < closest:
                closest = row_min
    if not math.isfinite(closest) or diameter == 0:
        raise GeometryError("all points identical: spread is degenerate")
    return SpreadReport(
        diameter=float(diameter),
        closest_pair=float(closest),
        spread=float(diameter) / float(closest),
    )


@dataclass(frozen=True)
class NormalizeResult:
    """Affine map x -> (x - offset) / scale applied uniformly to all points."""

    instance: object
    scale: float
    offset: np.ndarray


def normalize(instance) -> NormalizeResult:
    """Scale and translate all points of the instance into the unit hypercube.

    Relative costs are preserved up to the factor scale**q, so optimal
    partitions are unchanged.
    """
    pts = instance.all_points.astype(np.float64)
    lo = pts.min(axis=0)
    span = float((pts.max(axis=0) - lo).max())
    scale = span if span > 0 else 1.0
    def _map(a):
        return (a.astype(np.float64) - lo) / scale

    if isinstance(instance, KspiInstance):
        base = replace(instance.base, requests=_map(instance.base.requests))
        out = KspiInstance(base=base, servers=_map(instance.servers))
    else:
        out = replace(instance, requests=_map(instance.requests))
    return NormalizeResult(instance=out, scale=scale, offset=lo)


def _distinct_rows(arr: np.ndarray) -> bool:
    return np.unique(arr, axis=0).shape[0] == arr.shape[0]


def jitter_duplicates(instance, rng_seed: int = 0):
    """Deterministically perturb duplicate locations by 2**-40 * diameter.

    Loudly warns: costs change by an O(2**-40) relative amount.  Only for
    feeding instances with duplicate locations to the hierarchical solver.
    """
    import warnings

    pts = instance.requests.astype(np.float64)
    if _distinct_rows(pts):
        return instance
    rep = spread(pts, CostModel(p=2, q=1)) if np.unique(pts, axis=0).shape[0] > 1 else None
    diam = rep.diameter if rep else 1.0
    mag = diam * 2.0 ** -40
    warnings.warn(
        "duplicate request locations jittered by %.3g; costs perturbed" % mag,
        stacklevel=2,
    )
    rng = np.random.default_rng(rng_seed)
    out = pts.copy()
    seen = {}
    for i in range(out.shape[0]):
        key = tuple(out[i])
        while key in seen:
            out[i] = out[i] + rng.uniform(-mag, mag, size=out.shape[1])
            key = tuple(out[i])
        seen[key] = i
    if isinstance(instance, KspiInstance):
        return KspiInstance(base=replace(instance.base, requests=out), servers=instance.servers)
    return replace(instance, requests=out)


def generate(
    kind: str,
    n: int,
    d: int,
    k: int,
    seed: int,
    model: CostModel | None = None,
    integer_box: int | None = None,
    servers: bool = False,
):
    """Seeded instance generator with distinct request locations.

    kind: 'uniform' | 'clustered' | 'collinear'.  With integer_box set,
    coordinates are integers in [0, integer_box]^d (useful with p=1, q=1
    for exact arithmetic).  With servers=True a KspiInstance is returned.
    """
    if n < 1 or not (1 <= k <= n):
        raise GeometryError(f"bad generator sizes n={n}, k={k}")
    if kind not in ("uniform", "clustered", "collinear"):
        raise GeometryError(f"unknown generator kind {kind!r}")
    model = model or CostModel(p=2, q=1)
    rng = np.random.default_rng(seed)
    total = n + (k if servers else 0)
    if integer_box is not None and (integer_box + 1) ** d < total:
        raise GeometryError("integer box too small for distinct locations")

    def draw(count):
        if kind == "uniform":
            if integer_box is not None:
                return rng.integers(0, integer_box + 1, size=(count, d))
            return rng.uniform(0.0, 1.0, size=(count, d))
        if kind == "clustered":
            n_centers = max(1, min(4, count))
            centers = rng.uniform(0.15, 0.85, size=(n_centers, d))
            idx = rng.integers(0, n_centers, size=count)
            pts = centers[idx] + rng.normal(0.0, 0.05, size=(count, d))
            pts = np.clip(pts, 0.0, 1.0)
            if integer_box is not None:
                pts = np.round(pts * integer_box).astype(np.int64)
            return pts
        # collinear: sorted along the first axis, zeros elsewhere
        xs = rng.uniform(0.0, 1.0, size=count)
        xs.sort()
        pts = np.zeros((count, d))
        pts[:, 0] = xs
        if integer_box is not None:
            pts = np.round(pts * integer_box).astype(np.int64)
            pts = pts[np.argsort(pts[:, 0], kind="stable")]
        return pts

    pts = draw(total)
    for _ in range(1000):
        if _distinct_rows(pts):
            break
        # resample colliding rows only
        _, first = np.unique(pts, axis=0, return_index=True)
        dup_mask = np.ones(total, dtype=bool)
        dup_mask[first] = False
        pts[dup_mask] = draw(int(dup_mask.sum()))
    else:
        raise GeometryError("could not draw distinct locations")

    reqs, srv = (pts[:n], pts[n:]) if servers else (pts, None)
    inst = KspInstance(d=d, model=model, requests=reqs, k=k)
    if servers:
        return KspiInstance(base=inst, servers=srv)
    return inst


# ---------------------------------------------------------------------------
# JSON interface


def model_to_json(model: CostModel) -> dict:
    return {"p": "inf" if model.p == INF_P else model.p, "q": model.q}


def model_from_json(obj: dict) -> CostModel:
    p = obj.get("p", 2)
    return CostModel(p=INF_P if p == "inf" else float(p), q=float(obj.get("q", 1)))


def instance_to_json(instance) -> dict:
    srv = instance.servers.tolist() if isinstance(instance, KspiInstance) else None
    return {
        "d": instance.d,
        "p": "inf" if instance.model.p == INF_P else instance.model.p,
        "q": instance.model.q,
        "k": instance.k,
        "requests": instance.requests.tolist(),
        "servers": srv,
    }


def instance_from_json(obj: dict):
    model = model_from_json(obj)
    reqs = np.asarray(obj["requests"])
    if np.all(reqs == np.round(reqs)):
        reqs = reqs.astype(np.int64)
    base = KspInstance(d=int(obj["d"]), model=model, requests=reqs, k=int(obj["k"]))
    if obj.get("servers") is not None:
        srv = np.asarray(obj["servers"])
        if np.all(srv == np.round(srv)):
            srv = srv.astype(np.int64)
        return KspiInstance(base=base, servers=srv.astype(reqs.dtype))
    return base


def load_instance(path):
    with open(path) as fh:
        return instance_from_json(json.load(fh))


def save_instance(instance, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_json(instance), fh, indent=1)
        fh.write("\n")
