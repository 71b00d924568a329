"""Laminate patterns and recursive solvers for differential inclusions."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import (
    CoercivityError, HullMembershipError, InputError, NotInConeError, NotInteriorError,
    RankHypothesisError, RotateFirstError, StarShapeError,
)
from .geometry import (
    UNIT_SQUARE, Cell, PiecewiseConstantField, Square, _place_cells, polygon_area, vitali_cover,
)
from .operator import (
    DEFAULT_TOL_CONE, ConeBasis, Operator, builtin_operator, cone_contains, cone_sample,
    frame_from_frequency, rotate_operator, v_lambda,
)

FD_STEP = 1e-5
GRAD_FLOOR = 1e-6


# ---------------------------------------------------------------------------
# level sets and problems

@dataclass(frozen=True)
class LevelSet:
    kind: str
    params: dict
    fn: Callable = field(compare=False, repr=False)

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


def _sphere(center, radius):
    center = np.asarray(center, dtype=float)

    def fn(x):
        return np.sum((x - center) ** 2, axis=-1) - radius * radius
    return fn


def level_set_from_dict(data: dict, dim: int) -> LevelSet:
    kind = data.get("kind")
    if kind in ("circle", "sphere-d"):
        if kind == "circle" and dim != 2:
            raise InputError("the circle level set needs a 2-dimensional state")
        radius = float(data.get("radius", 1.0))
        center = [float(c) for c in data.get("center", [0.0] * dim)]
        if len(center) != dim or radius <= 0:
            raise InputError("bad sphere level set")
        return LevelSet(kind, {"radius": radius, "center": center}, _sphere(center, radius))
    if kind == "affine-band":
        w = np.asarray(data["normal"], dtype=float)
        if w.shape != (dim,) or not np.linalg.norm(w) > 0:
            raise InputError("affine-band normal must be a nonzero vector of the state dimension")
        w = w / np.linalg.norm(w)
        off = float(data.get("offset", 0.0))
        half = float(data.get("half_width", 1.0))

        def band(x):
            return (x @ w - off) ** 2 - half * half
        return LevelSet(kind, {"normal": w.tolist(), "offset": off, "half_width": half}, band)
    if kind == "expr":
        return _expr_level_set(str(data["expr"]), dim)
    raise InputError(f"unknown level-set kind {kind!r}")


def _expr_level_set(text: str, dim: int) -> LevelSet:
    import sympy

    syms = sympy.symbols(" ".join(f"x{i + 1}" for i in range(dim)))
    syms = syms if isinstance(syms, tuple) else (syms,)
    try:
        expr = sympy.sympify(text)
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise InputError(f"cannot parse level-set expression: {exc}") from None
    extra = expr.free_symbols - set(syms)
    if extra:
        raise InputError(f"unknown symbols in expression: {sorted(map(str, extra))}")
    raw = sympy.lambdify(syms, expr, "numpy")

    def fn(x):
        out = raw(*np.moveaxis(x, -1, 0))
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1]).copy()
    return LevelSet("expr", {"expr": text}, fn)


@dataclass
class InclusionProblem:
    op: Operator
    xi: np.ndarray
    domain: Square = UNIT_SQUARE
    level_sets: tuple = ()
    e_points: np.ndarray | None = None
    tol_zero: float = 1e-6

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        if self.xi.shape != (self.op.d_state,):
            raise InputError("xi has the wrong dimension")
        if self.e_points is not None:
            self.e_points = np.atleast_2d(np.asarray(self.e_points, dtype=float))
            if self.e_points.shape[1] != self.op.d_state or len(self.e_points) == 0:
                raise InputError("E_points must be a nonempty list of state vectors")
        elif not self.level_sets:
            raise InputError("a problem needs level_sets or E_points")
        self.level_sets = tuple(self.level_sets)

    @property
    def point_set(self) -> bool:
        return self.e_points is not None

    def F(self, x):
        """Governing level-set function: the maximum over all level sets."""
        if self.point_set:
            raise InputError("point-set problems have no level-set function")
        x = np.asarray(x, dtype=float)
        vals = [ls(x) for ls in self.level_sets]
        return vals[0] if len(vals) == 1 else np.maximum.reduce(vals)

    def dist(self, values) -> np.ndarray:
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if self.point_set:
            return _point_dist(values, self.e_points)
        return dist_proxy(self.F, values)

    def to_dict(self) -> dict:
        out = {"operator": self.op.name if self.op.name else self.op.to_dict(),
               "xi": self.xi.tolist(), "domain": self.domain.to_dict(), "tol_zero": self.tol_zero}
        if self.point_set:
            out["E_points"] = self.e_points.tolist()
        else:
            out["level_sets"] = [ls.to_dict() for ls in self.level_sets]
        return out

    @classmethod
    def from_dict(cls, data: dict, op: Operator | None = None) -> "InclusionProblem":
        if not isinstance(data, dict):
            raise InputError("problem must be a JSON object")
        allowed = {"operator", "xi", "domain", "level_sets", "E_points", "tol_zero", "name"}
        unknown = set(data) - allowed
        if unknown:
            raise InputError(f"unknown problem keys: {sorted(unknown)}")
        if op is None:
            ref = data.get("operator", "div2")
            op = builtin_operator(ref) if isinstance(ref, str) else Operator.from_dict(ref)
        try:
            xi = np.array(data["xi"], dtype=float)
        except (KeyError, TypeError, ValueError):
            raise InputError("problem needs a numeric 'xi'") from None
        dom = Square.from_dict(data["domain"]) if "domain" in data else UNIT_SQUARE
        lsets = tuple(level_set_from_dict(d, op.d_state) for d in data.get("level_sets", []))
        pts = data.get("E_points")
        return cls(op, xi, dom, lsets, None if pts is None else np.array(pts, dtype=float),
                   float(data.get("tol_zero", 1e-6)))


def _point_dist(values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    diff = values[:, None, :] - pts[None, :, :]
    return np.sqrt(np.min(np.sum(diff * diff, axis=-1), axis=1))


def dist_proxy(F: Callable, values) -> np.ndarray:
    """First-order distance estimate |F| / max(|grad F|, floor)."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    f = np.asarray(F(values), dtype=float)
    grad = np.empty_like(values)
    for j in range(values.shape[1]):
        e = np.zeros(values.shape[1])
        e[j] = FD_STEP
        grad[:, j] = (F(values + e) - F(values - e)) / (2 * FD_STEP)
    return np.abs(f) / np.maximum(np.linalg.norm(grad, axis=1), GRAD_FLOOR)


# ---------------------------------------------------------------------------
# lemma pattern

class LaminateStep(NamedTuple):
    a: np.ndarray
    b: np.ndarray
    vol_lambda: float
    direction: ConeBasis
    t1: float
    t2: float
    eta: float


def _check_planar_even(op: Operator) -> None:
    if op.n_space != 2 or op.d_state != 2 * op.m_eq:
        raise RankHypothesisError(
            f"construction needs N=2 and d=2m, got N={op.n_space}, d={op.d_state}, m={op.m_eq}"
        )


def _check_kernels(op: Operator) -> None:
    stack = np.vstack([op.matrices[0], op.matrices[1]])
    s = np.linalg.svd(stack, compute_uv=False)
    if len(s) < op.d_state or s[op.d_state - 1] <= 1e-12 * max(1.0, s[0]):
        raise RankHypothesisError("kernels of A1 and A2 intersect nontrivially")


def _m1(op: Operator) -> np.ndarray:
    a1, a2 = op.matrices
    return np.vstack([a2, a1 + a2])


def _m1_ok(op: Operator) -> bool:
    s = np.linalg.svd(_m1(op), compute_uv=False)
    return s[-1] > 1e-12 * max(1.0, s[0])


def solve_cn(op: Operator, a, n: int) -> np.ndarray:
    """Corner value of the lemma pattern: c_n = c_1 / sqrt(n)."""
    _check_planar_even(op)
    if n < 1:
        raise InputError("n must be >= 1")
    a = np.asarray(a, dtype=float)
    if a.shape != (op.d_state,):
        raise InputError("a has the wrong dimension")
    a1, a2 = op.matrices
    scale = max(1.0, float(np.linalg.norm(a))) * max(1.0, float(np.linalg.norm(a1)))
    if np.linalg.norm(a1 @ a) > 1e-10 * scale:
        raise RotateFirstError("A1 a must vanish; rotate the frame first")
    if not _m1_ok(op):
        raise RankHypothesisError("operator violates the d=2m/rank hypothesis (M1 singular)")
    rhs = np.concatenate([np.zeros(op.m_eq), (a1 + a2) @ a])
    c1 = np.linalg.solve(_m1(op), rhs)
    return c1 / math.sqrt(n)


def _lamination_frame(op: Operator, jump, tol_cone: float) -> tuple[float, Operator, ConeBasis]:
    basis = v_lambda(op, jump, tol_cone)
    if len(basis.v_basis) == 0:
        raise NotInConeError("b - a is not a characteristic direction")
    cands = list(basis.v_basis)
    if len(cands) > 1:
        # a fixed spread of combinations, in case single basis vectors give a singular M1
        for i in range(len(cands)):
            for j in range(i + 1, len(cands)):
                for c in (1.0, -1.0, 2.0, 0.5):
                    w = cands[i] + c * cands[j]
                    cands.append(w / np.linalg.norm(w))
    for w in cands:
        theta, rot = frame_from_frequency(w)
        rop = rotate_operator(op, rot)
        if _m1_ok(rop):
            return theta, rop, basis
    raise RankHypothesisError("no frequency in V_(b-a) gives a nonsingular M1")


def _strip_cells(a, b, cn, lam: float, n: int) -> list[Cell]:
    """Six convex regions per strip of width 1/n on the unit square."""
    h = lam / math.sqrt(n)
    ma = -cn
    out = []
    for k in range(n):
        x0 = k / n
        x1 = (k + 1) / n
        xl = (k + lam) / n
        out.append(Cell(np.array([[x0, 0.0], [xl, h], [xl, 1.0 - h], [x0, 1.0]]), a))
        out.append(Cell(np.array([[x0, 1.0], [xl, 1.0 - h], [xl, 1.0]]), cn))
        out.append(Cell(np.array([[x0, 0.0], [xl, 0.0], [xl, h]]), ma))
        out.append(Cell(np.array([[xl, h], [x1, 0.0], [x1, 1.0], [xl, 1.0 - h]]), b))
        out.append(Cell(np.array([[xl, 1.0 - h], [x1, 1.0], [xl, 1.0]]), cn))
        out.append(Cell(np.array([[xl, 0.0], [x1, 0.0], [xl, h]]), ma))
    return out


class _Pattern(NamedTuple):
    cells: list  # on the unit square, absolute values
    theta: float
    cn: np.ndarray
    n: int
    a: np.ndarray
    b: np.ndarray
    eta: float


def _split_pattern(op: Operator, zeta, a, b, eta: float, n: int,
                   tol_cone: float = DEFAULT_TOL_CONE, frame=None) -> _Pattern:
    """Lemma pattern realising zeta = eta*a + (1-eta)*b, values shifted by zeta."""
    zeta = np.asarray(zeta, dtype=float)
    ap = np.asarray(a, dtype=float) - zeta
    bp = np.asarray(b, dtype=float) - zeta
    if n <= 4 * eta * eta:
        raise InputError(f"n={n} too small for volume fraction {eta}")
    theta, rop, _ = frame if frame is not None else _lamination_frame(op, bp - ap, tol_cone)
    cn = solve_cn(rop, ap, n)
    cells = [Cell(c.vertices, c.value + zeta) for c in _strip_cells(ap, bp, cn, eta, n)]
    return _Pattern(cells, theta, cn, n, ap + zeta, bp + zeta, eta)


def lemma1_construct(op: Operator, a, b, vol_lambda: float, n: int,
                     tol_cone: float = DEFAULT_TOL_CONE) -> PiecewiseConstantField:
    """Strip laminate between a and b with zero mean, zero outside the (rotated) unit cube."""
    _check_planar_even(op)
    _check_kernels(op)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (op.d_state,) or b.shape != (op.d_state,):
        raise InputError("a and b must be state vectors")
    if not 0.0 <= vol_lambda <= 1.0:
        raise InputError("vol_lambda must lie in [0, 1]")
    if n < 2:
        raise InputError("n must be >= 2")
    scale = max(1.0, float(np.linalg.norm(a)), float(np.linalg.norm(b)))
    if np.linalg.norm(vol_lambda * a + (1 - vol_lambda) * b) > 1e-10 * scale:
        raise InputError("vol_lambda*a + (1-vol_lambda)*b must vanish")
    zero = np.zeros(op.d_state)
    if np.linalg.norm(b - a) <= 1e-14 * scale or vol_lambda in (0.0, 1.0):
        value = a if vol_lambda == 1.0 else b
        fld = PiecewiseConstantField.constant(UNIT_SQUARE, value, zero)
        fld.meta.update({"n": n, "vol_lambda": vol_lambda, "theta": 0.0, "cn": zero.tolist()})
        return fld
    if not cone_contains(op, b - a, tol_cone).member:
        raise NotInConeError("b - a is not in the characteristic cone")
    pat = _split_pattern(op, zero, a, b, vol_lambda, n, tol_cone)
    dom = Square((0.5, 0.5), 1.0, pat.theta)
    fld = PiecewiseConstantField(dom, _place_cells(pat.cells, dom, zero), zero)
    fld.meta.update({"n": n, "vol_lambda": vol_lambda, "theta": pat.theta,
                     "cn": pat.cn.tolist()})
    return fld


# ---------------------------------------------------------------------------
# relaxation step

def find_roots_along_cone(F: Callable, xi, direction, bracket_growth: float = 2.0,
                          tol_root: float = 1e-10, max_expansions: int = 200) -> tuple[float, float]:
    xi = np.asarray(xi, dtype=float)
    d = np.asarray(direction, dtype=float)
    nrm = np.linalg.norm(d)
    if not nrm > 0:
        raise InputError("direction must be nonzero")
    if bracket_growth <= 1:
        raise InputError("bracket_growth must exceed 1")
    d = d / nrm
    f0 = float(F(xi))
    if not f0 < 0:
        raise NotInteriorError(f"F(xi) = {f0} is not negative")

    def g(t):
        return float(F(xi + t * d))

    t_init = 1e-3 * max(1.0, float(np.linalg.norm(xi)))
    roots = []
    for sgn in (-1.0, 1.0):
        lo, t = 0.0, t_init
        k = 0
        while True:
            val = g(sgn * t)
            if not math.isfinite(val):
                raise CoercivityError("level set not finite along the ray")
            if val >= 0:
                break
            lo, t = t, t * bracket_growth
            k += 1
            if k > max_expansions:
                raise CoercivityError("coercivity violated along direction")
        r = brentq(lambda s: g(sgn * s), lo, t, xtol=1e-14, rtol=1e-15, maxiter=500)
        roots.append(sgn * r)
    t1, t2 = roots
    if max(abs(g(t1)), abs(g(t2))) > tol_root:
        raise CoercivityError("root residual above tol_root (level set too steep or discontinuous)")
    return t1, t2


def _widest_chord(problem: InclusionProblem, xi, directions: Sequence[ConeBasis]):
    best = None
    for basis in directions:
        try:
            t1, t2 = find_roots_along_cone(problem.F, xi, basis.lam)
        except CoercivityError:
            continue
        if best is None or t2 - t1 > best[2] - best[1]:
            best = (basis, t1, t2)
    if best is None:
        raise NotInteriorError("xi not in interior along sampled directions")
    return best


def relaxation_step(problem: InclusionProblem, xi, n: int = 4, dir_count: int = 16,
                    seed: int = 0, tol_cone: float = DEFAULT_TOL_CONE,
                    directions: Sequence[ConeBasis] | None = None,
                    max_n: int = 1 << 20) -> tuple[PiecewiseConstantField, LaminateStep]:
    pat, step = _relaxation_pattern(problem, xi, n, dir_count, seed, tol_cone, directions, max_n)
    xi = np.asarray(xi, dtype=float)
    dom = Square(problem.domain.center, problem.domain.side, pat.theta)
    fld = PiecewiseConstantField(dom, _place_cells(pat.cells, dom, 0.0), xi.copy())
    fld.meta.update({"n": pat.n, "theta": pat.theta, "eta": step.eta, "cn": pat.cn.tolist()})
    return fld, step


def _relaxation_pattern(problem, xi, n, dir_count, seed, tol_cone, directions, max_n,
                        frame_cache=None):
    xi = np.asarray(xi, dtype=float)
    F = problem.F
    if not float(F(xi)) < -problem.tol_zero:
        raise NotInteriorError("xi is not strictly inside the sublevel set")
    if directions is None:
        directions = cone_sample(problem.op, dir_count, seed, tol_cone)
    basis, t1, t2 = _widest_chord(problem, xi, directions)
    lam = basis.lam / np.linalg.norm(basis.lam)
    a = xi + t1 * lam
    b = xi + t2 * lam
    eta = t2 / (t2 - t1)
    step = LaminateStep(a, b, eta, basis, t1, t2, eta)
    swap = eta > 0.5
    if swap:
        # the corner cells scale with the volume of the first phase
        a, b, eta = b, a, 1.0 - eta
    frame = None
    if frame_cache is not None:
        key = (lam.tobytes(), swap)
        frame = frame_cache.get(key)
        if frame is None:
            frame = frame_cache[key] = _lamination_frame(problem.op, b - a, tol_cone)
    n = max(int(n), int(4 * eta * eta) + 1)
    while True:
        pat = _split_pattern(problem.op, xi, a, b, eta, n, tol_cone, frame)
        inner = np.vstack([xi + pat.cn, xi - pat.cn])
        if np.all(F(inner) < -problem.tol_zero):
            break
        if n >= max_n:
            raise NotInteriorError("corner values stay outside the sublevel set")
        n *= 2
    return pat, step


def certificate_sequence(problem: InclusionProblem, xi=None, ns=(4, 16, 64, 256),
                         dir_count: int = 16, seed: int = 0) -> list[PiecewiseConstantField]:
    """Relaxation fields at increasing n for one fixed direction choice."""
    xi = problem.xi if xi is None else np.asarray(xi, dtype=float)
    dirs = cone_sample(problem.op, dir_count, seed)
    return [relaxation_step(problem, xi, n, directions=dirs)[0] for n in ns]


# ---------------------------------------------------------------------------
# solvers

@dataclass
class _Work:
    cells: list
    areas: list

    def values(self) -> np.ndarray:
        return np.array([c.value for c in self.cells])


def _reduce_angle(theta: float) -> float:
    q = math.pi / 2
    r = math.fmod(theta, q)
    if r > q / 2:
        r -= q
    elif r < -q / 2:
        r += q
    return r


def _cover_target(base: float, cell_dist: float, dist_tol: float, domain_area: float) -> float:
    """Cover fraction: the level floor, tightened so the leftover stays within budget."""
    if cell_dist <= 0:
        return base
    need = 1.0 - dist_tol / (4.0 * cell_dist * domain_area)
    return min(max(base, need), 0.999)


def _cover(cell: Cell, theta: float, target: float):
    verts = cell.vertices
    ext = float((verts.max(axis=0) - verts.min(axis=0)).max())
    # a tilted quadtree leaves a band of about twice the finest side
    min_side = ext * (1.0 - target) / 4.0
    return vitali_cover(verts, _reduce_angle(theta), target, min_side)


class _PatternBank:
    """Relaxation patterns per (value, n) with their unit-square distance integral."""

    def __init__(self, problem, dir_count, seed, tol_cone, dirs):
        self.problem = problem
        self.args = (dir_count, seed, tol_cone, dirs, 1 << 20)
        self.frames: dict = {}
        self.store: dict = {}

    def get(self, value, n):
        key = (_value_key(value), n)
        hit = self.store.get(key)
        if hit is None:
            pat, _ = _relaxation_pattern(self.problem, value, n, *self.args, self.frames)
            vals = np.array([c.value for c in pat.cells])
            areas = np.array([polygon_area(c.vertices) for c in pat.cells])
            hit = self.store[key] = (pat, float(np.dot(areas, self.problem.dist(vals))))
        return hit


def _refine_cell(cell: Cell, cell_area: float, cell_dist: float, bank: _PatternBank,
                 ladder: Sequence[int], target: float, excess: float):
    """Cover a cell and pick a pattern size per square.

    Every square starts at the coarsest size; squares are then upgraded
    greedily by distance saved per added cell until ``excess`` is absorbed.
    Returns the new cells, the cover and the change of the distance integral.
    """
    pat0, _ = bank.get(cell.value, ladder[0])
    cover = _cover(cell, pat0.theta, target)
    areas = np.array([sq.area for sq in cover.squares])
    level = np.zeros(len(areas), dtype=int)
    dist_of = [bank.get(cell.value, n)[1] for n in ladder[:1]]
    rem_area = cell_area - float(areas.sum())
    delta = float(areas.sum()) * dist_of[0] + rem_area * cell_dist - cell_area * cell_dist
    need = delta + excess
    heap: list = []

    def push(j):
        k = level[j] + 1
        if k >= len(ladder):
            return
        while len(dist_of) <= k:
            dist_of.append(bank.get(cell.value, ladder[len(dist_of)])[1])
        gain = areas[j] * (dist_of[k - 1] - dist_of[k])
        if gain > 0:
            heapq.heappush(heap, (-gain / (ladder[k] - ladder[k - 1]), j, gain))

    if need > 0:
        for j in range(len(areas)):
            push(j)
    while need > 0 and heap:
        _, j, gain = heapq.heappop(heap)
        level[j] += 1
        need -= gain
        delta -= gain
        push(j)
    out = []
    for sq, k in zip(cover.squares, level):
        pat = bank.get(cell.value, ladder[k])[0]
        out.extend(_place_cells(pat.cells, Square(sq.center, sq.side, pat.theta), 0.0))
    out.extend(Cell(r, cell.value) for r in cover.remainder)
    return out, cover, delta, int(ladder[level.max()]) if len(level) else ladder[0]


def _value_key(v: np.ndarray) -> bytes:
    return np.ascontiguousarray(v).tobytes()


DEFAULT_SCHEDULE = {"n_base": 4, "n_growth": 4, "n_steps": 4, "max_cells": 400_000}


def solve_one_level(problem: InclusionProblem, max_levels: int = 6, dist_tol: float = 0.05,
                    schedule: dict | None = None, seed: int = 0, dir_count: int = 16,
                    tol_cone: float = DEFAULT_TOL_CONE) -> PiecewiseConstantField:
    """Refine a constant field by relaxation patterns until the distance budget is met.

    The report (levels, distance history, pattern counts) is stored in
    ``field.meta["report"]``.
    """
    sched = {**DEFAULT_SCHEDULE, **(schedule or {})}
    unknown = set(sched) - set(DEFAULT_SCHEDULE)
    if unknown:
        raise InputError(f"unknown schedule keys: {sorted(unknown)}")
    if problem.point_set:
        raise InputError("solve_one_level needs a level-set problem")
    xi = problem.xi
    f_xi = float(problem.F(xi))
    if f_xi > problem.tol_zero:
        raise NotInteriorError("F(xi) > 0: boundary datum outside the sublevel set")
    dom = problem.domain
    work = _Work([Cell(dom.vertices(), xi.copy())], [dom.area])
    report = {"levels": 0, "dist_history": [], "patterns": 0, "best_effort_covers": 0,
              "n_per_level": [], "stopped": "", "seed": seed, "dir_count": dir_count,
              "schedule": sched}
    dirs = cone_sample(problem.op, dir_count, seed, tol_cone)
    bank = _PatternBank(problem, dir_count, seed, tol_cone, dirs)

    def current_dist():
        d = problem.dist(work.values())
        return d, float(np.dot(work.areas, d))

    dvals, total = current_dist()
    report["dist_history"].append(total)
    if f_xi >= -problem.tol_zero:
        report["stopped"] = "xi on E"
        return _finish(problem, work, report)
    for level in range(max_levels):
        if total <= dist_tol:
            break
        n_k = int(sched["n_base"]) * int(sched["n_growth"]) ** level
        ladder = [n_k * 4 ** j for j in range(int(sched["n_steps"]))]
        base_target = 1.0 - 2.0 ** -(level + 2)
        fvals = problem.F(work.values())
        interior = np.flatnonzero(fvals < -problem.tol_zero)
        contrib = np.asarray(work.areas)[interior] * dvals[interior]
        order = interior[np.argsort(-contrib, kind="stable")]
        replaced: dict = {}
        running = total
        n_used = 0
        for i in order:
            if running <= dist_tol:
                break
            cell = work.cells[i]
            target = _cover_target(base_target, float(dvals[i]), dist_tol, dom.area)
            new_cells, cover, delta, n_max = _refine_cell(
                cell, work.areas[i], float(dvals[i]), bank, ladder, target, running - dist_tol)
            report["best_effort_covers"] += int(cover.best_effort)
            report["patterns"] += len(cover.squares)
            n_used = max(n_used, n_max)
            new_areas = [polygon_area(c.vertices) for c in new_cells]
            running += delta
            replaced[i] = (new_cells, new_areas)
        cells, areas = [], []
        for i, (c, a) in enumerate(zip(work.cells, work.areas)):
            if i in replaced:
                cells.extend(replaced[i][0])
                areas.extend(replaced[i][1])
            else:
                cells.append(c)
                areas.append(a)
        work = _Work(cells, areas)
        dvals, total = current_dist()
        report["levels"] = level + 1
        report["n_per_level"].append(n_used)
        report["dist_history"].append(total)
        if len(work.cells) > sched["max_cells"]:
            report["stopped"] = "cell budget"
            break
    if not report["stopped"]:
        report["stopped"] = "dist_tol" if total <= dist_tol else "max_levels"
    return _finish(problem, work, report)


def refinement_sequence(problem: InclusionProblem, dist_tols=(0.4, 0.2, 0.1, 0.05),
                        seed: int = 0, n_base: int = 4, **kw) -> list[PiecewiseConstantField]:
    """Solver fields with shrinking distance budget and doubling base pattern size."""
    base = kw.pop("schedule", None) or {}
    out = []
    for k, tol in enumerate(dist_tols):
        sched = {**base, "n_base": n_base * 2 ** k}
        out.append(solve_one_level(problem, dist_tol=tol, seed=seed, schedule=sched, **kw))
    return out


def _finish(problem, work: _Work, report: dict) -> PiecewiseConstantField:
    fld = PiecewiseConstantField(problem.domain, work.cells, problem.xi.copy())
    report["cells"] = len(work.cells)
    report["dist_integral"] = report["dist_history"][-1]
    fld.meta["report"] = report
    return fld


# ---------------------------------------------------------------------------
# multi-level solver on point sets

def _segments(cloud) -> tuple[np.ndarray, np.ndarray]:
    par = cloud.parents
    mask = par[:, 0] >= 0
    pairs = np.unique(np.sort(par[mask], axis=1), axis=0)
    return pairs[:, 0], pairs[:, 1]


def _best_segment(zeta, pa, pb, h_max):
    u = pb - pa
    uu = np.sum(u * u, axis=1)
    s = np.sum((zeta - pa) * u, axis=1) / uu
    proj = pa + s[:, None] * u
    h = np.linalg.norm(zeta - proj, axis=1)
    ok = (s > 1e-9) & (s < 1 - 1e-9) & (h <= h_max)
    if not ok.any():
        return None
    idx = np.flatnonzero(ok)
    # smallest offset first, longer segment on ties
    j = idx[np.lexsort((-uu[idx], np.round(h[idx], 14)))[0]]
    return s[j], u[j]


def solve_multi_level(problem: InclusionProblem, xi0=None, delta_schedule: Callable | None = None,
                      max_levels: int = 4, dist_tol: float = 0.05, cloud=None,
                      hull_depth: int = 2, hull_params: dict | None = None, n0: int = 16,
                      max_stage: int = 100_000, max_attempts: int = 6,
                      max_cells: int = 200_000,
                      tol_cone: float = DEFAULT_TOL_CONE) -> PiecewiseConstantField:
    """Laminate towards shrunken copies of a finite target set along hull chains."""
    from .hull import hull_iterate, hull_member, star_shaped_check

    if not problem.point_set:
        raise InputError("solve_multi_level needs E_points")
    op = problem.op
    E = problem.e_points
    xi = problem.xi
    xi0 = xi.copy() if xi0 is None else np.asarray(xi0, dtype=float)
    delta_schedule = delta_schedule or (lambda k: 1.0 / k)
    dom = problem.domain
    report = {"stage": 0, "delta": None, "skipped_stages": 0, "attempts": [], "n": None}

    scale = max(1.0, float(np.max(np.abs(E))))
    if float(np.min(np.linalg.norm(E - xi, axis=1))) <= 1e-12 * scale:
        fld = PiecewiseConstantField.constant(dom, xi, xi)
        report.update(dist_integral=0.0, cells=1)
        fld.meta["report"] = report
        return fld
    if cloud is None:
        cloud = hull_iterate(E, op, hull_depth, hull_params)
    if not hull_member(xi, E, op, cloud.depth, cloud.params, cloud=cloud):
        raise HullMembershipError("xi outside computed hull")
    star = star_shaped_check(cloud, xi0)
    if not star["passed"]:
        raise StarShapeError(f"cloud not star shaped about xi0 ({star['failures']} failures)")
    radius = float(np.max(np.linalg.norm(E - xi0, axis=1)))
    k = 1
    while delta_schedule(k) * radius > 0.5 * dist_tol and k < max_stage:
        k += 1
    delta = float(delta_schedule(k))
    if not 0.0 < delta <= 1.0 / k + 1e-15:
        raise InputError("delta schedule must satisfy 0 < delta_k <= 1/k")
    report.update(stage=k, delta=delta, skipped_stages=k - 1)

    pts = delta * xi0 + (1 - delta) * cloud.points
    e_delta = delta * xi0 + (1 - delta) * E
    ia, ib = _segments(cloud)
    pa, pb = pts[ia], pts[ib]
    h_max = (1 - delta) * cloud.member_tol()
    dirs_frames: dict = {}
    best = None
    for attempt in range(max_attempts):
        n = n0 * 4 ** attempt
        work, capped = _chain_field(problem, xi, e_delta, pa, pb, h_max, n, max_levels,
                                    tol_cone, dirs_frames, dist_tol, max_cells)
        total = float(np.dot(work.areas, problem.dist(work.values())))
        report["attempts"].append({"n": n, "dist_integral": total, "cells": len(work.cells),
                                   "cell_budget_hit": capped})
        if best is None or total < best[0]:
            best = (total, work, n)
        if total <= dist_tol:
            break
        if capped and len(work.cells) == 1:
            # a single pattern no longer fits the cell budget; larger n will not either
            break
    total, work, report["n"] = best
    fld = PiecewiseConstantField(dom, work.cells, xi.copy())
    report.update(dist_integral=total, cells=len(work.cells))
    fld.meta["report"] = report
    return fld


def _chain_field(problem, xi, e_delta, pa, pb, h_max, n, max_levels, tol_cone, frames,
                 dist_tol, max_cells):
    op = problem.op
    dom = problem.domain
    work = _Work([Cell(dom.vertices(), xi.copy())], [dom.area])
    count = 1
    budget_hit = False
    snap = 1e-12 * max(1.0, float(np.max(np.abs(e_delta))))
    for level in range(max_levels):
        vals = work.values()
        near = _point_dist(vals, e_delta)
        todo = np.flatnonzero(near > snap)
        if len(todo) == 0:
            break
        base_target = 1.0 - 2.0 ** -(level + 2)
        cell_d = problem.dist(vals)
        running = float(np.dot(work.areas, cell_d))
        if running <= dist_tol:
            break
        areas = np.asarray(work.areas)
        todo = todo[np.argsort(-areas[todo] * cell_d[todo], kind="stable")]
        patterns: dict = {}
        replaced = {}
        for i in todo:
            if running <= dist_tol:
                break
            cell = work.cells[i]
            key = _value_key(cell.value)
            if key not in patterns:
                seg = _best_segment(cell.value, pa, pb, h_max)
                if seg is None:
                    patterns[key] = None
                else:
                    s, u = seg
                    a = cell.value - s * u
                    b = cell.value + (1 - s) * u
                    eta = 1.0 - s
                    if eta > 0.5:
                        a, b, eta = b, a, s
                    fkey = ((b - a) / np.linalg.norm(u)).round(12).tobytes()
                    frame = frames.get(fkey)
                    if frame is None:
                        frame = frames[fkey] = _lamination_frame(op, b - a, tol_cone)
                    nn = max(n, int(4 * eta * eta) + 1)
                    patterns[key] = _split_pattern(op, cell.value, a, b, eta, nn, tol_cone, frame)
            pat = patterns[key]
            if pat is None:
                continue
            target = _cover_target(base_target, float(cell_d[i]), dist_tol, dom.area)
            cover = _cover(cell, pat.theta, target)
            grow = len(cover.squares) * len(pat.cells) + len(cover.remainder) - 1
            if count + grow > max_cells:
                budget_hit = True
                break
            count += grow
            new_cells = []
            for sq in cover.squares:
                new_cells.extend(_place_cells(pat.cells, Square(sq.center, sq.side, pat.theta), 0.0))
            new_cells.extend(Cell(r, cell.value) for r in cover.remainder)
            new_areas = [polygon_area(c.vertices) for c in new_cells]
            new_d = problem.dist(np.array([c.value for c in new_cells]))
            running += float(np.dot(new_areas, new_d)) - work.areas[i] * cell_d[i]
            replaced[i] = (new_cells, new_areas)
        if not replaced:
            break
        cells, areas = [], []
        for i, (c, a) in enumerate(zip(work.cells, work.areas)):
            if i in replaced:
                cells.extend(replaced[i][0])
                areas.extend(replaced[i][1])
            else:
                cells.append(c)
                areas.append(a)
        work = _Work(cells, areas)
        if budget_hit:
            break
    return work, budget_hit


__all__ = [
    "LevelSet", "level_set_from_dict", "InclusionProblem", "LaminateStep", "dist_proxy",
    "solve_cn", "lemma1_construct", "find_roots_along_cone", "relaxation_step",
    "certificate_sequence", "refinement_sequence", "solve_one_level", "solve_multi_level",
]
