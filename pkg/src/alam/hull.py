"""Point-cloud laminate hulls and Lambda-convex envelopes on grids."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import nnls
from scipy.spatial import cKDTree

from .errors import CloudSizeError, InputError
from .operator import DEFAULT_TOL_CONE, Operator, cone_contains, cone_mask, cone_sample

HULL_DEFAULTS = {"t_grid": 17, "dedup_eps": None, "tol_cone": DEFAULT_TOL_CONE,
                 "cap": 200_000, "pair_cap": 5_000_000}


def _diam(pts: np.ndarray) -> float:
    if len(pts) < 2:
        return 0.0
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    return float(np.linalg.norm(hi - lo))


def resolve_params(E: np.ndarray, params: dict | None) -> dict:
    out = {**HULL_DEFAULTS, **(params or {})}
    unknown = set(out) - set(HULL_DEFAULTS)
    if unknown:
        raise InputError(f"unknown hull parameters: {sorted(unknown)}")
    if int(out["t_grid"]) < 2:
        raise InputError("t_grid must be >= 2")
    out["t_grid"] = int(out["t_grid"])
    if out["dedup_eps"] is None:
        out["dedup_eps"] = 1e-3 * _diam(E) if _diam(E) > 0 else 1e-12
    out["dedup_eps"] = float(out["dedup_eps"])
    return out


@dataclass
class HullCloud:
    points: np.ndarray
    depth: int
    levels: np.ndarray
    parents: np.ndarray  # (P, 2), -1 for input points
    weights: np.ndarray  # point = w * points[p0] + (1 - w) * points[p1]
    op_name: str
    params: dict
    diam: float = 0.0

    def at_depth(self, depth: int) -> np.ndarray:
        return self.points[self.levels <= depth]

    def member_tol(self) -> float:
        return max(self.params["dedup_eps"], self.diam / max(1, self.params["t_grid"] - 1))

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "depth": self.depth,
                "levels": self.levels.tolist(), "parents": self.parents.tolist(),
                "weights": [None if math.isnan(w) else float(w) for w in self.weights],
                "op_name": self.op_name, "params": self.params}

    @classmethod
    def from_dict(cls, data: dict) -> "HullCloud":
        try:
            pts = np.array(data["points"], dtype=float)
            n = len(pts)
            levels = np.array(data.get("levels", [0] * n), dtype=int)
            parents = np.array(data.get("parents", [[-1, -1]] * n), dtype=int).reshape(n, 2)
            weights = np.array([math.nan if w is None else w
                                for w in data.get("weights", [None] * n)], dtype=float)
            params = {**HULL_DEFAULTS, **data.get("params", {})}
            return cls(pts, int(data["depth"]), levels, parents, weights,
                       data.get("op_name", ""), params, _diam(pts[levels == 0]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad cloud record: {exc}") from None


def _grid_keys(pts: np.ndarray, origin: np.ndarray, eps: float) -> np.ndarray:
    k = np.floor((pts - origin) / eps).astype(np.int64)
    k = np.ascontiguousarray(k)
    return k.view(np.dtype((np.void, k.dtype.itemsize * k.shape[1]))).ravel()


def hull_iterate(E, op: Operator, depth: int, params: dict | None = None) -> HullCloud:
    """Sampled Lambda_i-convex hull: ``depth`` rounds of adding cone segments."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    if len(E) == 0 or E.shape[1] != op.d_state:
        raise InputError("E must be a nonempty list of state vectors")
    if depth < 0:
        raise InputError("depth must be >= 0")
    prm = resolve_params(E, params)
    eps = prm["dedup_eps"]
    tg = prm["t_grid"]
    ts = np.arange(1, tg - 1) / (tg - 1)
    origin = E.min(axis=0) - 0.5 * eps
    pts = [E.copy()]
    levels = [np.zeros(len(E), dtype=int)]
    parents = [np.full((len(E), 2), -1)]
    weights = [np.full(len(E), math.nan)]
    seen = set(_grid_keys(E, origin, eps).tolist())
    total = len(E)
    start = 0
    for it in range(1, depth + 1):
        allp = np.vstack(pts)
        new_idx = np.arange(start, total)
        if len(new_idx) == 0 or len(ts) == 0:
            break
        if len(new_idx) * total > prm["pair_cap"]:
            raise CloudSizeError(
                f"{len(new_idx) * total} candidate pairs at depth {it}; increase dedup_eps"
            )
        cand, cpar, cw = [], [], []
        for i in new_idx:
            # pairs (i, j): j < i avoids repeats among new points, older points pair with all new
            j = np.arange(i)
            if len(j) == 0:
                continue
            diff = allp[j] - allp[i]
            ok = cone_mask(op, diff, prm["tol_cone"])
            ok &= np.linalg.norm(diff, axis=1) > eps
            j = j[ok]
            if len(j) == 0:
                continue
            a = allp[i]
            b = allp[j]
            # t*a + (1-t)*b for each interior grid t
            q = ts[None, :, None] * a + (1 - ts)[None, :, None] * b[:, None, :]
            cand.append(q.reshape(-1, op.d_state))
            cpar.append(np.column_stack([np.full(len(j) * len(ts), i), np.repeat(j, len(ts))]))
            cw.append(np.tile(ts, len(j)))
        if not cand:
            break
        cand = np.vstack(cand)
        cpar = np.vstack(cpar)
        cw = np.concatenate(cw)
        keys = _grid_keys(cand, origin, eps)
        _, first = np.unique(keys, return_index=True)
        first.sort()
        fresh = [f for f in first if keys[f].tobytes() not in seen]
        seen.update(keys[f].tobytes() for f in fresh)
        fresh = np.array(fresh, dtype=int)
        if len(fresh) == 0:
            break
        pts.append(cand[fresh])
        levels.append(np.full(len(fresh), it))
        parents.append(cpar[fresh])
        weights.append(cw[fresh])
        start = total
        total += len(fresh)
        if total > prm["cap"]:
            raise CloudSizeError(f"cloud has {total} points; increase dedup_eps")
    return HullCloud(np.vstack(pts), depth, np.concatenate(levels), np.vstack(parents),
                     np.concatenate(weights), op.name, prm, _diam(E))


def hull_distance(xi, E) -> float:
    """Euclidean distance from xi to the convex hull of E (nonnegative least squares)."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    xi = np.asarray(xi, dtype=float)
    scale = 1e3 * max(1.0, float(np.max(np.abs(E))), float(np.max(np.abs(xi))))
    A = np.vstack([E.T, scale * np.ones(len(E))])
    b = np.concatenate([xi, [scale]])
    w, _ = nnls(A, b)
    w = w / w.sum() if w.sum() > 0 else w
    return float(np.linalg.norm(E.T @ w - xi))


def hull_member(xi, E, op: Operator, depth: int, params: dict | None = None, cloud=None,
                dir_count: int = 16, seed: int = 0, return_witness: bool = False):
    """Membership in the depth-``depth`` hull via one cone ray and the shallower cloud."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    xi = np.asarray(xi, dtype=float)
    prm = resolve_params(E, params if cloud is None else cloud.params)
    eps = prm["dedup_eps"]

    def result(ok, lam=None, t1=0.0, t2=0.0):
        return (ok, (lam, t1, t2)) if return_witness else ok

    if float(np.min(np.linalg.norm(E - xi, axis=1))) <= eps:
        return result(True)
    if depth == 0:
        return result(False)
    scale = max(1.0, float(np.max(np.abs(E))))
    if hull_distance(xi, E) > 1e-9 * scale:
        return result(False)
    if cloud is None or cloud.depth < depth - 1:
        cloud = hull_iterate(E, op, depth - 1, prm)
    sub = cloud.at_depth(depth - 1)
    tol = eps if depth - 1 == 0 else cloud.member_tol()
    rel = sub - xi
    if float(np.min(np.linalg.norm(rel, axis=1))) <= tol:
        return result(True)
    dirs = [b.lam for b in cone_sample(op, dir_count, seed, prm["tol_cone"])]
    for e in E:
        v = e - xi
        if np.linalg.norm(v) > 0 and cone_contains(op, v, prm["tol_cone"]).member:
            dirs.append(v / np.linalg.norm(v))
    for lam in dirs:
        lam = lam / np.linalg.norm(lam)
        t = rel @ lam
        h = np.linalg.norm(rel - t[:, None] * lam, axis=1)
        hit = h <= tol
        neg = hit & (t <= tol)
        pos = hit & (t >= -tol)
        if neg.any() and pos.any():
            return result(True, lam, float(t[neg].min()), float(t[pos].max()))
    return result(False)


def hull_member_batch(points, E, op: Operator, depth: int, params: dict | None = None,
                      cloud=None, dir_count: int = 16, seed: int = 0) -> np.ndarray:
    E = np.atleast_2d(np.asarray(E, dtype=float))
    prm = resolve_params(E, params if cloud is None else cloud.params)
    if depth > 0 and (cloud is None or cloud.depth < depth - 1):
        cloud = hull_iterate(E, op, depth - 1, prm)
    return np.array([hull_member(p, E, op, depth, prm, cloud, dir_count, seed) for p in points])


# ---------------------------------------------------------------------------
# star shapes

def star_shaped_shrink(E, xi0, delta: float) -> np.ndarray:
    if not 0.0 < delta <= 1.0:
        raise InputError("delta must lie in (0, 1]")
    E = np.atleast_2d(np.asarray(E, dtype=float))
    return delta * np.asarray(xi0, dtype=float) + (1.0 - delta) * E


def star_shaped_check(cloud, xi0, samples: int = 200, t_count: int = 16,
                      interior_eps: float | None = None, seed: int = 0) -> dict:
    pts = cloud.points if isinstance(cloud, HullCloud) else np.atleast_2d(np.asarray(cloud, float))
    xi0 = np.asarray(xi0, dtype=float)
    if interior_eps is None:
        if isinstance(cloud, HullCloud):
            interior_eps = cloud.member_tol()
        elif len(pts) > 1:
            d, _ = cKDTree(pts).query(pts, k=2)
            interior_eps = 2.0 * float(np.median(d[:, 1]))
        else:
            interior_eps = 1e-12
    report = {"passed": True, "failures": 0, "checked": 0, "eps": interior_eps, "reason": ""}
    tree = cKDTree(pts)
    if tree.query(xi0)[0] > interior_eps:
        report.update(passed=False, reason="xi0 is not inside the cloud")
        return report
    if len(pts) == 1:
        report["reason"] = "single point"
        return report
    rng = np.random.default_rng(seed)
    idx = np.arange(len(pts)) if len(pts) <= samples else rng.choice(len(pts), samples, False)
    ts = np.arange(1, t_count + 1) / t_count
    q = ts[None, :, None] * xi0 + (1 - ts)[None, :, None] * pts[idx][:, None, :]
    dist, _ = tree.query(q.reshape(-1, pts.shape[1]))
    bad = (dist > interior_eps).reshape(len(idx), len(ts)).any(axis=1)
    report.update(failures=int(bad.sum()), checked=len(idx), passed=not bad.any())
    if bad.any():
        report["reason"] = "segments towards xi0 leave the cloud"
    return report


# ---------------------------------------------------------------------------
# envelopes

@dataclass
class GridFunction:
    lo: np.ndarray
    hi: np.ndarray
    resolution: int
    values: np.ndarray  # shape (resolution,) * d
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.resolution < 2:
            raise InputError("resolution must be >= 2 per axis")
        if not np.all(self.hi > self.lo):
            raise InputError("box must be nondegenerate")
        if self.values.shape != (self.resolution,) * len(self.lo):
            raise InputError("values shape does not match the grid")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, self.resolution) for a, b in zip(self.lo, self.hi)]

    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    @classmethod
    def from_function(cls, fn, lo, hi, resolution: int) -> "GridFunction":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        axes = [np.linspace(a, b, resolution) for a, b in zip(lo, hi)]
        nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return cls(lo, hi, resolution, np.asarray(fn(nodes), dtype=float))

    def interpolate(self, x) -> np.ndarray:
        interp = RegularGridInterpolator(self.axes(), self.values, bounds_error=False,
                                         fill_value=None)
        return interp(np.asarray(x, dtype=float))

    def to_dict(self) -> dict:
        return {"box": {"lo": self.lo.tolist(), "hi": self.hi.tolist()},
                "resolution": self.resolution, "values": self.values.ravel().tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "GridFunction":
        try:
            lo = np.array(data["box"]["lo"], dtype=float)
            res = int(data["resolution"])
            vals = np.array(data["values"], dtype=float).reshape((res,) * len(lo))
            return cls(lo, np.array(data["box"]["hi"], dtype=float), res, vals)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad grid function record: {exc}") from None


def sentinel(values: np.ndarray) -> float:
    fin = values[np.isfinite(values)]
    return 1e6 * (1.0 + (float(np.max(np.abs(fin))) if fin.size else 0.0))


def lattice_directions(op: Operator, f: GridFunction, dir_count: int, max_entry: int = 2,
                       tol_cone: float = DEFAULT_TOL_CONE) -> list[np.ndarray]:
    """Primitive integer grid steps whose physical direction lies in the cone."""
    h = (f.hi - f.lo) / (f.resolution - 1)
    out = []
    rng = range(-max_entry, max_entry + 1)
    for v in itertools.product(rng, repeat=f.dim):
        v = np.array(v)
        nz = np.flatnonzero(v)
        if len(nz) == 0 or v[nz[0]] < 0 or math.gcd(*map(abs, v.tolist())) != 1:
            continue
        if cone_contains(op, v * h, tol_cone).member:
            out.append(v)
    out.sort(key=lambda v: (float(np.sum(v * v)), tuple(-v)))
    return out[:dir_count]


def _line_groups(shape, v: np.ndarray):
    """Node orderings along lattice lines with step v: (flat indices, line starts)."""
    idx = np.indices(shape).reshape(len(shape), -1).T
    back = np.full(len(idx), np.iinfo(np.int64).max)
    for j, vj in enumerate(v):
        if vj > 0:
            back = np.minimum(back, idx[:, j] // vj)
        elif vj < 0:
            back = np.minimum(back, (shape[j] - 1 - idx[:, j]) // (-vj))
    start = idx - back[:, None] * v
    start_flat = np.ravel_multi_index(start.T, shape)
    order = np.lexsort((back, start_flat))
    breaks = np.flatnonzero(np.diff(start_flat[order])) + 1
    flat = np.ravel_multi_index(idx.T, shape)[order]
    return flat, np.concatenate([[0], breaks, [len(order)]])


def _lower_envelope(y: np.ndarray) -> np.ndarray:
    """Lower convex envelope of equally spaced samples."""
    n = len(y)
    if n < 3:
        return y.copy()
    hull = [0, 1]
    for i in range(2, n):
        while len(hull) >= 2:
            i0, i1 = hull[-2], hull[-1]
            # drop i1 if it lies on or above the chord from i0 to i
            if (y[i1] - y[i0]) * (i - i0) >= (y[i] - y[i0]) * (i1 - i0):
                hull.pop()
            else:
                break
        hull.append(i)
    return np.minimum(y, np.interp(np.arange(n), hull, y[hull]))


def lambda_envelope(f: GridFunction, op: Operator, max_iter: int = 50, dir_count: int = 16,
                    tol: float = 1e-9, max_entry: int = 2,
                    tol_cone: float = DEFAULT_TOL_CONE) -> GridFunction:
    """Iterated one-step laminate infimum along cone lattice lines.

    Each sweep replaces the values on every lattice line by their lower convex
    envelope (the best two-point split along that line) and keeps the minimum
    over directions.  ``meta["history"]`` records the maximal decrease per sweep.
    """
    if op.d_state != f.dim:
        raise InputError("grid dimension must equal the state dimension")
    vals = f.values.copy()
    big = sentinel(vals)
    vals = np.where(np.isfinite(vals), np.minimum(vals, big), big)
    dirs = lattice_directions(op, f, dir_count, max_entry, tol_cone)
    groups = [_line_groups(vals.shape, v) for v in dirs]
    history = []
    floor = float(vals.min())
    for _ in range(max_iter):
        flat_old = vals.ravel()
        best = flat_old.copy()
        for flat, bounds in groups:
            y = flat_old[flat]
            env = np.empty_like(y)
            for s, e in zip(bounds[:-1], bounds[1:]):
                env[s:e] = _lower_envelope(y[s:e])
            np.minimum.at(best, flat, env)
        dec = float(np.max(flat_old - best)) if best.size else 0.0
        if dec < 0 or best.min() < floor - 1e-12 * max(1.0, abs(floor)):
            raise AssertionError("envelope sweep increased a value or dropped below min f")
        history.append(dec)
        vals = best.reshape(vals.shape)
        if dec < tol:
            break
    out = GridFunction(f.lo, f.hi, f.resolution, vals)
    out.meta.update({"history": history, "directions": [v.tolist() for v in dirs],
                     "sentinel": big})
    return out


__all__ = [
    "HullCloud", "GridFunction", "hull_iterate", "hull_member", "hull_member_batch",
    "hull_distance", "star_shaped_shrink", "star_shaped_check", "lambda_envelope",
    "lattice_directions", "sentinel", "resolve_params",
]
