"""Numerical certificates for piecewise-constant fields."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InputError
from .geometry import PiecewiseConstantField, clip_box, interfaces, polygon_area
from .operator import Operator, symbol_matrix

# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestFunction:
    kind: str  # "bump" or "polynomial"
    center: tuple = (0.0, 0.0)
    radius: float = 1.0
    exponents: tuple = (0, 0)
    component: int | None = None

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if self.kind not in ("bump", "polynomial"):
            raise InputError(f"unknown test function kind {self.kind!r}")
        if self.kind == "bump" and not self.radius > 0:
            raise InputError("bump radius must be positive")

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "polynomial":
            p, q = self.exponents
            return x[..., 0] ** p * x[..., 1] ** q
        s = np.sum((x - np.asarray(self.center)) ** 2, axis=-1) / self.radius ** 2
        out = np.zeros(s.shape)
        inside = s < 1
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside]))
        return out

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "polynomial":
            p, q = self.exponents
            gx = p * x[..., 0] ** max(p - 1, 0) * x[..., 1] ** q if p else np.zeros(x.shape[:-1])
            gy = q * x[..., 0] ** p * x[..., 1] ** max(q - 1, 0) if q else np.zeros(x.shape[:-1])
            return np.stack([gx, gy], axis=-1)
        r = x - np.asarray(self.center)
        s = np.sum(r * r, axis=-1) / self.radius ** 2
        out = np.zeros(x.shape)
        inside = s < 1
        si = s[inside]
        phi = np.exp(1.0 - 1.0 / (1.0 - si))
        out[inside] = (-2.0 * phi / (self.radius ** 2 * (1.0 - si) ** 2))[:, None] * r[inside]
        return out


def seeded_bumps(fld: PiecewiseConstantField, count: int = 20, seed: int = 0,
                 rmin: float = 0.05, rmax: float = 0.25) -> list[TestFunction]:
    """Bumps with support strictly inside the domain (radii relative to the side)."""
    rng = np.random.default_rng(seed)
    dom = fld.domain
    out = []
    for _ in range(count):
        r = rng.uniform(rmin, rmax)
        c = rng.uniform(r + 1e-3, 1 - r - 1e-3, size=2)
        g = dom.to_global(c[None, :])[0]
        out.append(TestFunction("bump", (float(g[0]), float(g[1])), r * dom.side))
    return out


def moment_tests(exponents=((0, 0), (1, 0), (0, 1), (1, 1))) -> list[TestFunction]:
    return [TestFunction("polynomial", exponents=tuple(e)) for e in exponents]


# ---------------------------------------------------------------------------
# quadrature

def _triangle_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss-Legendre rule on the reference triangle (0,0),(1,0),(0,1)."""
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1)
    w = 0.5 * w
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    # Duffy map: (u, v) -> (u (1 - v), v), Jacobian (1 - v)
    pts = np.column_stack([(u * (1 - v)).ravel(), v.ravel()])
    wts = (wu * wv * (1 - v)).ravel()
    return pts, wts


def _fan(poly) -> list[np.ndarray]:
    p = np.asarray(poly, dtype=float)
    return [np.array([p[0], p[i], p[i + 1]]) for i in range(1, len(p) - 1)]


def _refine(tris: list[np.ndarray], hmax: float) -> list[np.ndarray]:
    out = []
    stack = list(tris)
    while stack:
        t = stack.pop()
        e = [np.linalg.norm(t[(i + 1) % 3] - t[i]) for i in range(3)]
        k = int(np.argmax(e))
        if e[k] <= hmax:
            out.append(t)
            continue
        a, b, c = t[k], t[(k + 1) % 3], t[(k + 2) % 3]
        m = 0.5 * (a + b)
        stack.append(np.array([a, m, c]))
        stack.append(np.array([m, b, c]))
    return out


def _integrate(tris: list[np.ndarray], fn: Callable, rule) -> np.ndarray:
    if not tris:
        return 0.0
    ref, w = rule
    T = np.array(tris)  # (k, 3, 2)
    e1 = T[:, 1] - T[:, 0]
    e2 = T[:, 2] - T[:, 0]
    jac = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    pts = T[:, None, 0] + ref[None, :, 0, None] * e1[:, None] + ref[None, :, 1, None] * e2[:, None]
    vals = fn(pts.reshape(-1, 2))
    vals = vals.reshape(len(T), len(w), *np.shape(vals)[1:])
    return np.tensordot(jac[:, None] * w[None, :], vals, axes=([0, 1], [0, 1]))


# ---------------------------------------------------------------------------
# jumps and residuals

@dataclass
class JumpReport:
    passed: bool
    max_violation: float
    count: int
    offending: list = field(default_factory=list)
    gaps: int = 0
    tol: float = 1e-9

    def to_dict(self) -> dict:
        return {"passed": self.passed, "max_violation": self.max_violation, "count": self.count,
                "offending": self.offending[:20], "gaps": self.gaps, "tol": self.tol}


def check_jumps(fld: PiecewiseConstantField, op: Operator, tol: float = 1e-9) -> JumpReport:
    if op.n_space != 2:
        raise InputError("planar fields need an operator with N=2")
    rep = interfaces(fld, with_gaps=True)
    worst = 0.0
    bad = []
    for k, itf in enumerate(rep.interfaces):
        v = float(np.linalg.norm(symbol_matrix(op, itf.normal) @ (itf.value_plus - itf.value_minus)))
        worst = max(worst, v)
        if v > tol:
            bad.append({"index": k, "p": itf.p.tolist(), "q": itf.q.tolist(), "violation": v})
    return JumpReport(worst <= tol, worst, len(rep.interfaces), bad, len(rep.gaps), tol)


@dataclass
class ResidualReport:
    value: float
    per_test: list
    doubling_error: float
    flagged: bool
    order: int

    def to_dict(self) -> dict:
        return {"value": self.value, "doubling_error": self.doubling_error,
                "flagged": self.flagged, "order": self.order, "tests": len(self.per_test)}


def _residual_area(fld, op, test: TestFunction, order: int) -> np.ndarray:
    # -sum_i A_i u * int d_i phi, triangulated cells clipped to the bump's box
    rule = _triangle_rule(order)
    r = test.radius
    cx, cy = test.center
    out = np.zeros(op.m_eq)
    for cell in fld.cells:
        v = cell.vertices
        if (v[:, 0].max() <= cx - r or v[:, 0].min() >= cx + r
                or v[:, 1].max() <= cy - r or v[:, 1].min() >= cy + r):
            continue
        piece = clip_box([tuple(p) for p in v], cx - r, cy - r, cx + r, cy + r)
        if len(piece) < 3 or polygon_area(piece) <= 0:
            continue
        g = _integrate(_refine(_fan(piece), 0.25 * r), test.gradient, rule)
        out -= sum(op.matrices[i] @ cell.value * g[i] for i in range(2))
    return out


class _Edges:
    """All cell edges with the owning cell's value (CCW, so outward normal is (dy, -dx))."""

    def __init__(self, fld: PiecewiseConstantField):
        p = [c.vertices for c in fld.cells]
        self.p = np.vstack(p)
        self.q = np.vstack([np.roll(v, -1, axis=0) for v in p])
        self.vals = np.repeat(fld.values(), [len(v) for v in p], axis=0)
        self.lo = np.minimum(self.p, self.q)
        self.hi = np.maximum(self.p, self.q)


def _clip_segments(p, d, lo, hi):
    """Liang-Barsky parameters of p + t d, t in [0,1], inside the box [lo, hi]."""
    t0 = np.zeros(len(p))
    t1 = np.ones(len(p))
    for k in range(2):
        dk = d[:, k]
        with np.errstate(divide="ignore", invalid="ignore"):
            a = (lo[k] - p[:, k]) / dk
            b = (hi[k] - p[:, k]) / dk
        flat = dk == 0
        inside = (p[:, k] >= lo[k]) & (p[:, k] <= hi[k])
        a = np.where(flat, np.where(inside, -np.inf, np.inf), a)
        b = np.where(flat, np.where(inside, np.inf, -np.inf), b)
        t0 = np.maximum(t0, np.minimum(a, b))
        t1 = np.minimum(t1, np.maximum(a, b))
    return t0, t1


def _residual_boundary(edges: _Edges, op, test: TestFunction, order: int,
                       pieces: int = 8) -> np.ndarray:
    # int_cell d_i phi = sum over edges of int phi * nu_i ds (divergence theorem)
    r = test.radius
    c = np.asarray(test.center)
    lo, hi = c - r, c + r
    m = np.all(edges.hi > lo, axis=1) & np.all(edges.lo < hi, axis=1)
    if not m.any():
        return np.zeros(op.m_eq)
    p, q, vals = edges.p[m], edges.q[m], edges.vals[m]
    d = q - p
    t0, t1 = _clip_segments(p, d, lo, hi)
    keep = t1 > t0
    p, d, vals, t0, t1 = p[keep], d[keep], vals[keep], t0[keep], t1[keep]
    x, w = np.polynomial.legendre.leggauss(order)
    s = (np.arange(pieces)[:, None] + 0.5 * (x[None, :] + 1)).ravel() / pieces
    ws = np.tile(0.5 * w, pieces) / pieces
    t = t0[:, None] + (t1 - t0)[:, None] * s[None, :]
    pts = p[:, None, :] + t[..., None] * d[:, None, :]
    phi = test.value(pts.reshape(-1, 2)).reshape(t.shape)
    line = (phi @ ws) * (t1 - t0)
    g = line[:, None] * np.column_stack([d[:, 1], -d[:, 0]])
    return -np.einsum("imd,ei,ed->m", op.matrices, g, vals)


def weak_residual(fld: PiecewiseConstantField, op: Operator, tests: Sequence[TestFunction],
                  quad_order: int = 8, method: str = "boundary") -> ResidualReport:
    """max |<A u, phi>| over bump tests, with an order-doubling error estimate.

    Cell integrals of the test gradient are evaluated either on the cell
    boundary (``"boundary"``, Gauss on clipped edges) or by Gauss quadrature on
    a triangulation of each cell (``"area"``).
    """
    if op.n_space != 2:
        raise InputError("planar fields need an operator with N=2")
    if method == "boundary":
        edges = _Edges(fld) if fld.cells else None

        def one(t, order):
            if edges is None:
                return np.zeros(op.m_eq)
            return _residual_boundary(edges, op, t, order)
    elif method == "area":
        def one(t, order):
            return _residual_area(fld, op, t, order)
    else:
        raise InputError(f"unknown quadrature method {method!r}")
    per, err = [], 0.0
    flagged = False
    for t in tests:
        if t.kind != "bump":
            raise InputError("weak_residual takes bump tests")
        a = one(t, quad_order)
        b = one(t, 2 * quad_order)
        if t.component is not None:
            a, b = a[[t.component]], b[[t.component]]
        val = float(np.max(np.abs(a)))
        diff = float(np.max(np.abs(a - b)))
        err = max(err, diff)
        if diff > 0.1 * max(float(np.max(np.abs(b))), 1e-7):
            flagged = True
        per.append(val)
    return ResidualReport(max(per, default=0.0), per, err, flagged, quad_order)


# ---------------------------------------------------------------------------
# weak-* moments, distances, energies

def _fan_all(fld: PiecewiseConstantField) -> tuple[np.ndarray, np.ndarray]:
    """All fan triangles of all cells with the owning cell index."""
    tris, owner = [], []
    for k, cell in enumerate(fld.cells):
        p = np.asarray(cell.vertices, dtype=float)
        m = len(p) - 2
        if m < 1:
            continue
        t = np.empty((m, 3, 2))
        t[:, 0] = p[0]
        t[:, 1] = p[1:-1]
        t[:, 2] = p[2:]
        tris.append(t)
        owner.append(np.full(m, k))
    if not tris:
        return np.zeros((0, 3, 2)), np.zeros(0, dtype=int)
    return np.concatenate(tris), np.concatenate(owner)


def _moment(fld: PiecewiseConstantField, test: TestFunction, xi: np.ndarray,
            fan=None) -> np.ndarray:
    """Exact integral of (u - xi) * g over the cells (g polynomial)."""
    T, owner = _fan_all(fld) if fan is None else fan
    if not len(T):
        return np.zeros(fld.dim)
    ref, w = _triangle_rule(max(1, sum(test.exponents) // 2 + 1))
    e1 = T[:, 1] - T[:, 0]
    e2 = T[:, 2] - T[:, 0]
    jac = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    pts = T[:, None, 0] + ref[None, :, 0, None] * e1[:, None] + ref[None, :, 1, None] * e2[:, None]
    per_tri = (test.value(pts.reshape(-1, 2)).reshape(len(T), len(w)) @ w) * jac
    per_cell = np.bincount(owner, weights=per_tri, minlength=len(fld.cells))
    return per_cell @ (fld.values() - xi)


def weak_star_gap(fields: Sequence[PiecewiseConstantField], xi,
                  tests: Sequence[TestFunction] | None = None) -> list[float]:
    xi = np.asarray(xi, dtype=float)
    tests = moment_tests() if tests is None else tests
    gaps = []
    for fld in fields:
        worst = 0.0
        fan = _fan_all(fld)
        for t in tests:
            if t.kind != "polynomial":
                raise InputError("weak_star_gap takes polynomial tests")
            vec = _moment(fld, t, xi, fan)
            if t.component is not None:
                vec = vec[[t.component]]
            worst = max(worst, float(np.linalg.norm(vec)))
        gaps.append(worst)
    return gaps


def _dist_values(values: np.ndarray, E) -> np.ndarray:
    if hasattr(E, "dist"):
        return E.dist(values)
    pts = np.atleast_2d(np.asarray(E, dtype=float))
    diff = values[:, None, :] - pts[None, :, :]
    return np.sqrt(np.min(np.sum(diff * diff, axis=-1), axis=1))


def dist_integral(fld: PiecewiseConstantField, E) -> float:
    """Sum of area * dist(value, E); E is a problem or a point array."""
    if not fld.cells:
        return 0.0
    return float(fld.areas() @ _dist_values(fld.values(), E))


def energy(fld: PiecewiseConstantField, F: Callable) -> float:
    if not fld.cells:
        return 0.0
    return float(fld.areas() @ np.asarray(F(fld.values()), dtype=float))


def lsc_smoke(fields: Sequence[PiecewiseConstantField], F: Callable, xi,
              tol: float = 1e-6) -> dict:
    xi = np.asarray(xi, dtype=float)
    energies = [energy(f, F) for f in fields]
    base = fields[0].domain.area * float(F(xi)) if fields else 0.0
    tail = energies[len(energies) // 2:]
    passed = bool(min(tail, default=base) >= base - tol)
    return {"passed": passed, "energies": energies, "bound": base, "tol": tol,
            "trend_up": bool(len(energies) < 2 or energies[-1] >= energies[0] - tol)}


# ---------------------------------------------------------------------------
# aggregate certificate

def _values_admissible(fld, problem, hull_cloud=None) -> tuple[bool, int]:
    vals = fld.values()
    if problem.point_set:
        from .hull import hull_member

        bad = 0
        d = problem.dist(vals)
        for v, dv in zip(vals, d):
            if dv <= problem.tol_zero:
                continue
            depth = hull_cloud.depth if hull_cloud is not None else 1
            if not hull_member(v, problem.e_points, problem.op, depth, cloud=hull_cloud):
                bad += 1
        return bad == 0, bad
    f = problem.F(vals)
    bad = int(np.sum(f > problem.tol_zero))
    return bad == 0, bad


def relaxation_certificate(fields: Sequence[PiecewiseConstantField], problem, xi=None,
                           jump_tol: float = 1e-9, residual_tol: float = 1e-6,
                           bumps: int = 20, seed: int = 0, hull_cloud=None) -> dict:
    """Pass/fail per condition of the relaxation property over a finite sequence."""
    xi = problem.xi if xi is None else np.asarray(xi, dtype=float)
    fields = list(fields)
    out: dict = {"fields": len(fields), "tolerances": {"jump": jump_tol, "residual": residual_tol,
                                                      "tol_zero": problem.tol_zero}}
    gaps = weak_star_gap(fields, xi)
    mono = all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))
    out["weak_star"] = {"passed": bool(mono and (len(gaps) < 2 or gaps[-1] < gaps[0] or gaps[0] <= 1e-12)),
                        "gaps": gaps}
    ext_bad = [i for i, f in enumerate(fields)
               if np.max(np.abs(f.exterior_value - xi)) > 1e-12 * max(1.0, float(np.max(np.abs(xi))))]
    out["exterior"] = {"passed": not ext_bad, "offending": ext_bad}
    jumps = [check_jumps(f, problem.op, jump_tol) for f in fields]
    res = [weak_residual(f, problem.op, seeded_bumps(f, bumps, seed)) for f in fields]
    out["a_free"] = {"passed": all(j.passed for j in jumps) and all(r.value <= residual_tol for r in res),
                     "max_jump": max((j.max_violation for j in jumps), default=0.0),
                     "max_residual": max((r.value for r in res), default=0.0),
                     "quadrature_flagged": any(r.flagged for r in res)}
    adm = [_values_admissible(f, problem, hull_cloud) for f in fields]
    out["values"] = {"passed": all(a for a, _ in adm), "bad_cells": [b for _, b in adm]}
    dists = [dist_integral(f, problem) for f in fields]
    out["dist"] = {"passed": bool(len(dists) < 2 or dists[-1] <= dists[0] + 1e-12), "integrals": dists}
    out["passed"] = all(out[k]["passed"] for k in ("weak_star", "exterior", "a_free", "values", "dist"))
    return out


def field_report(fld: PiecewiseConstantField, problem, jump_tol: float = 1e-9,
                 residual_tol: float = 1e-6, bumps: int = 20, seed: int = 0,
                 dist_tol: float | None = None) -> dict:
    """Checks for a single produced field: validity, jumps, residual, datum, distance."""
    problems = fld.validate()
    jumps = check_jumps(fld, problem.op, jump_tol)
    res = weak_residual(fld, problem.op, seeded_bumps(fld, bumps, seed))
    ext_ok = bool(np.max(np.abs(fld.exterior_value - problem.xi)) <= 1e-12 * max(1.0, float(np.max(np.abs(problem.xi)))))
    ok_vals, bad = _values_admissible(fld, problem) if not problem.point_set else (True, 0)
    dist = dist_integral(fld, problem)
    out = {"valid": {"passed": not problems, "problems": problems[:10]},
           "jumps": jumps.to_dict(), "residual": {**res.to_dict(), "passed": res.value <= residual_tol},
           "exterior": {"passed": ext_ok}, "values": {"passed": ok_vals, "bad_cells": bad},
           "dist": {"value": dist, "tol": dist_tol,
                    "passed": dist_tol is None or dist <= dist_tol}}
    out["passed"] = all(out[k]["passed"] for k in ("valid", "jumps", "residual", "exterior", "values", "dist"))
    return out


__all__ = [
    "TestFunction", "seeded_bumps", "moment_tests", "JumpReport", "ResidualReport",
    "check_jumps", "weak_residual", "weak_star_gap", "dist_integral", "energy", "lsc_smoke",
    "relaxation_certificate", "field_report",
]
