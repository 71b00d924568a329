"""Planar piecewise-constant fields on polygon partitions.

Cells are convex polygons with counter-clockwise vertices.  Hot loops (clipping,
point-in-polygon tests on small polygons) use plain Python floats: numpy's
per-call overhead dominates for 3-8 vertex polygons.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InputError, ValueMismatchError

GEOM_EPS = 1e-12


# ---------------------------------------------------------------------------
# primitive polygon helpers

def polygon_area(poly) -> float:
    """Signed shoelace area (positive for CCW)."""
    n = len(poly)
    s = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def _clip_halfplane(poly, nx, ny, c):
    """Keep the part of ``poly`` with ``nx*x + ny*y <= c``."""
    out = []
    n = len(poly)
    if n == 0:
        return out
    px, py = poly[-1]
    pd = nx * px + ny * py - c
    for qx, qy in poly:
        qd = nx * qx + ny * qy - c
        if qd <= 0.0:
            if pd > 0.0:
                t = pd / (pd - qd)
                out.append((px + t * (qx - px), py + t * (qy - py)))
            out.append((qx, qy))
        elif pd <= 0.0:
            t = pd / (pd - qd)
            out.append((px + t * (qx - px), py + t * (qy - py)))
        px, py, pd = qx, qy, qd
    return out


def clip_box(poly, x0, y0, x1, y1):
    poly = _clip_halfplane(poly, -1.0, 0.0, -x0)
    poly = _clip_halfplane(poly, 1.0, 0.0, x1)
    poly = _clip_halfplane(poly, 0.0, -1.0, -y0)
    return _clip_halfplane(poly, 0.0, 1.0, y1)


def clip_convex(poly, clipper):
    """Intersection of a polygon with a convex CCW polygon (Sutherland-Hodgman)."""
    out = [tuple(p) for p in poly]
    n = len(clipper)
    for i in range(n):
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        # outward normal of a CCW edge
        nx, ny = by - ay, ax - bx
        out = _clip_halfplane(out, nx, ny, nx * ax + ny * ay)
        if not out:
            break
    return out


def _clean(poly, tol):
    out = []
    for p in poly:
        if not out or abs(p[0] - out[-1][0]) > tol or abs(p[1] - out[-1][1]) > tol:
            out.append(p)
    while len(out) > 1 and abs(out[0][0] - out[-1][0]) <= tol and abs(out[0][1] - out[-1][1]) <= tol:
        out.pop()
    return out


def point_in_convex(poly, x, y, tol=GEOM_EPS) -> bool:
    n = len(poly)
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        if ex * (y - ay) - ey * (x - ax) < -tol * math.hypot(ex, ey):
            return False
    return True


def _rot(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class Square:
    """Oriented square: centre, side length and rotation angle (radians)."""

    center: tuple[float, float]
    side: float
    angle: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if not self.side > 0:
            raise InputError("square side must be positive")

    @property
    def area(self) -> float:
        return self.side * self.side

    def to_global(self, local) -> np.ndarray:
        """Map points of the unit square [0,1]^2 into this square."""
        local = np.asarray(local, dtype=float)
        return (local - 0.5) @ (self.side * _rot(self.angle)).T + np.asarray(self.center)

    def to_local(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return (pts - np.asarray(self.center)) @ _rot(self.angle) / self.side + 0.5

    def vertices(self) -> np.ndarray:
        return self.to_global([[0, 0], [1, 0], [1, 1], [0, 1]])

    def to_dict(self) -> dict:
        return {"center": [self.center[0], self.center[1]], "side": self.side, "angle": self.angle}

    @classmethod
    def from_dict(cls, data) -> "Square":
        try:
            return cls(tuple(data["center"]), float(data["side"]), float(data.get("angle", 0.0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad square record: {exc}") from None


UNIT_SQUARE = Square((0.5, 0.5), 1.0, 0.0)


class Cell(NamedTuple):
    vertices: np.ndarray  # (k, 2), CCW
    value: np.ndarray  # (d,)


@dataclass
class PiecewiseConstantField:
    domain: Square
    cells: list[Cell]
    exterior_value: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.exterior_value = np.asarray(self.exterior_value, dtype=float)

    @property
    def dim(self) -> int:
        return len(self.exterior_value)

    def areas(self) -> np.ndarray:
        return np.array([polygon_area(c.vertices) for c in self.cells])

    def values(self) -> np.ndarray:
        if not self.cells:
            return np.zeros((0, self.dim))
        return np.array([c.value for c in self.cells])

    def validate(self, check_overlap: bool = False) -> list[str]:
        problems = []
        total = 0.0
        for i, c in enumerate(self.cells):
            v = c.vertices
            if len(v) < 3:
                problems.append(f"cell {i}: fewer than 3 vertices")
                continue
            if not np.all(np.isfinite(v)) or not np.all(np.isfinite(c.value)):
                problems.append(f"cell {i}: non-finite data")
            a = polygon_area(v)
            if a <= 0:
                problems.append(f"cell {i}: non-positive area {a}")
            total += a
        if abs(total - self.domain.area) > 1e-8 * self.domain.area:
            problems.append(f"cell areas sum to {total}, domain area {self.domain.area}")
        if check_overlap:
            problems.extend(_overlap_problems(self))
        return problems

    @classmethod
    def constant(cls, domain: Square, value, exterior=None) -> "PiecewiseConstantField":
        value = np.asarray(value, dtype=float)
        ext = value if exterior is None else exterior
        return cls(domain, [Cell(domain.vertices(), value.copy())], ext)

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.to_dict(),
            "exterior_value": [float(x) for x in self.exterior_value],
            "cells": [
                {"vertices": [[float(x), float(y)] for x, y in c.vertices],
                 "value": [float(x) for x in c.value]}
                for c in self.cells
            ],
        }

    @classmethod
    def from_dict(cls, data) -> "PiecewiseConstantField":
        try:
            dom = Square.from_dict(data["domain"])
            ext = np.array(data["exterior_value"], dtype=float)
            cells = [Cell(np.array(c["vertices"], dtype=float), np.array(c["value"], dtype=float))
                     for c in data["cells"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad field record: {exc}") from None
        return cls(dom, cells, ext)


def _overlap_problems(fld: PiecewiseConstantField) -> list[str]:
    tol = 1e-10 * fld.domain.area
    polys = [[tuple(p) for p in c.vertices] for c in fld.cells]
    boxes = np.array([[*c.vertices.min(axis=0), *c.vertices.max(axis=0)] for c in fld.cells])
    out = []
    for i in range(len(polys)):
        cand = np.flatnonzero(
            (boxes[i + 1:, 0] < boxes[i, 2]) & (boxes[i + 1:, 2] > boxes[i, 0])
            & (boxes[i + 1:, 1] < boxes[i, 3]) & (boxes[i + 1:, 3] > boxes[i, 1])
        ) + i + 1
        for j in cand:
            inter = clip_convex(polys[i], polys[j])
            if len(inter) >= 3 and polygon_area(inter) > tol:
                out.append(f"cells {i} and {j} overlap")
    return out


# ---------------------------------------------------------------------------
# measures

def area_fractions(fld: PiecewiseConstantField, targets, eps: float = 1e-12) -> list[float]:
    if eps < 0:
        raise InputError("eps must be nonnegative")
    areas = fld.areas()
    vals = fld.values()
    out = []
    for t in targets:
        t = np.asarray(t, dtype=float)
        hit = np.linalg.norm(vals - t, axis=1) <= eps
        out.append(float(areas[hit].sum() / fld.domain.area))
    return out


def distinct_values(fld: PiecewiseConstantField, eps: float = 1e-12) -> np.ndarray:
    vals = fld.values()
    keep: list[np.ndarray] = []
    for v in vals:
        if not any(np.linalg.norm(v - k) <= eps for k in keep):
            keep.append(v)
    return np.array(keep)


def mean_value(fld: PiecewiseConstantField) -> np.ndarray:
    areas = fld.areas()
    return areas @ fld.values() / fld.domain.area


# ---------------------------------------------------------------------------
# coverings

@dataclass
class SquareCover:
    parent: np.ndarray
    squares: list[Square]
    covered_fraction: float
    remainder: list[np.ndarray]
    best_effort: bool
    rotation: float


def vitali_cover(parent, rotation: float, target_fraction: float,
                 min_side: float) -> SquareCover:
    """Greedy dyadic filling of a convex polygon with rotated squares.

    A quadtree is laid in the frame rotated by ``rotation``; nodes fully inside
    the parent become squares, straddling nodes are halved until the covered
    fraction reaches the target or the side would drop below ``min_side``.
    The straddling pieces that remain (convex) are returned as ``remainder``.
    """
    if not 0.0 < target_fraction < 1.0:
        raise InputError("target_fraction must lie in (0, 1)")
    if not min_side > 0:
        raise InputError("min_side must be positive")
    parent = np.asarray(parent, dtype=float)
    area_parent = polygon_area(parent)
    if area_parent <= 0:
        raise InputError("parent polygon must be CCW with positive area")
    c, s = math.cos(rotation), math.sin(rotation)
    loc = [(c * x + s * y, -s * x + c * y) for x, y in parent]
    xs = [p[0] for p in loc]
    ys = [p[1] for p in loc]
    x0, y0 = min(xs), min(ys)
    side = max(max(xs) - x0, max(ys) - y0)
    scale = side
    tol = GEOM_EPS * scale

    def inside(px, py):
        return point_in_convex(loc, px, py, tol)

    squares_loc: list[tuple[float, float, float]] = []
    covered = 0.0
    nodes = [(x0, y0, loc)]
    best_effort = False
    pieces: list = [loc]
    if side < min_side:
        best_effort = True
        nodes = []
    while nodes:
        partial = []
        for bx, by, piece in nodes:
            ex, ey = bx + side, by + side
            if inside(bx, by) and inside(ex, by) and inside(ex, ey) and inside(bx, ey):
                squares_loc.append((bx + 0.5 * side, by + 0.5 * side, side))
                covered += side * side
                continue
            clipped = _clean(clip_box(piece, bx, by, ex, ey), 1e-15 * scale)
            if len(clipped) >= 3 and polygon_area(clipped) > 1e-12 * side * side:
                partial.append((bx, by, clipped))
        pieces = [p for _, _, p in partial]
        if covered / area_parent >= target_fraction or not partial:
            break
        half = 0.5 * side
        if half < min_side:
            best_effort = True
            break
        nodes = []
        for bx, by, piece in partial:
            for ox in (0.0, half):
                for oy in (0.0, half):
                    nodes.append((bx + ox, by + oy, piece))
        side = half
    rot = np.array([[c, -s], [s, c]])
    squares = []
    for cx, cy, sd in squares_loc:
        g = rot @ np.array([cx, cy])
        squares.append(Square((g[0], g[1]), sd, rotation))
    remainder = [np.asarray(p) @ rot.T for p in pieces]
    frac = covered / area_parent
    return SquareCover(parent, squares, frac, remainder,
                       best_effort and frac < target_fraction, rotation)


# ---------------------------------------------------------------------------
# pattern placement

def place_pattern(pattern: PiecewiseConstantField, square: Square, ambient_value,
                  shift) -> list[Cell]:
    """Affinely map a unit-square pattern into ``square``; values get ``shift`` added."""
    dom = pattern.domain
    if (abs(dom.side - 1.0) > 1e-12 or abs(dom.angle) > 1e-12
            or abs(dom.center[0] - 0.5) > 1e-12 or abs(dom.center[1] - 0.5) > 1e-12):
        raise InputError("pattern domain must be the axis-aligned unit square")
    ambient_value = np.asarray(ambient_value, dtype=float)
    shift = np.asarray(shift, dtype=float)
    scale = max(1.0, float(np.max(np.abs(ambient_value))))
    if np.max(np.abs(pattern.exterior_value + shift - ambient_value)) > 1e-12 * scale:
        raise ValueMismatchError(
            "pattern exterior value plus shift does not match the ambient value"
        )
    return _place_cells(pattern.cells, square, shift)


def _place_cells(cells: Sequence[Cell], square: Square, shift) -> list[Cell]:
    if not cells:
        return []
    counts = [len(c.vertices) for c in cells]
    flat = np.vstack([c.vertices for c in cells])
    mapped = square.to_global(flat)
    out = []
    k = 0
    for c, n in zip(cells, counts):
        out.append(Cell(mapped[k:k + n], c.value + shift))
        k += n
    return out


# ---------------------------------------------------------------------------
# interfaces

class Interface(NamedTuple):
    p: np.ndarray
    q: np.ndarray
    normal: np.ndarray  # points from the minus side to the plus side
    value_plus: np.ndarray
    value_minus: np.ndarray
    plus_cell: int  # -1 for the exterior
    minus_cell: int


@dataclass
class InterfaceReport:
    interfaces: list[Interface]
    gaps: list[tuple[np.ndarray, np.ndarray]]


def _on_domain_boundary(dom: Square, pts: np.ndarray, tol: float) -> np.ndarray:
    loc = dom.to_local(pts)
    d = np.minimum.reduce([np.abs(loc[:, 0]), np.abs(1 - loc[:, 0]),
                           np.abs(loc[:, 1]), np.abs(1 - loc[:, 1])])
    inside = np.all((loc > -tol) & (loc < 1 + tol), axis=1)
    return (d * dom.side <= tol) & inside


def interfaces(fld: PiecewiseConstantField, min_length: float = 1e-12,
               with_gaps: bool = False):
    """All maximal segments shared by two cells, or by a cell and the exterior."""
    rep = _interfaces(fld, min_length)
    return rep if with_gaps else rep.interfaces


def _interfaces(fld: PiecewiseConstantField, min_length: float) -> InterfaceReport:
    scale = fld.domain.side
    cells = fld.cells
    if not cells:
        return InterfaceReport([], [])
    counts = np.array([len(c.vertices) for c in cells])
    owner = np.repeat(np.arange(len(cells)), counts)
    p = np.vstack([c.vertices for c in cells])
    q = np.vstack([np.roll(c.vertices, -1, axis=0) for c in cells])
    e = q - p
    length = np.hypot(e[:, 0], e[:, 1])
    keep = length > 1e-15 * scale
    p, q, e, length, owner = p[keep], q[keep], e[keep], length[keep], owner[keep]
    nout = np.column_stack([e[:, 1], -e[:, 0]]) / length[:, None]
    ang = np.arctan2(nout[:, 1], nout[:, 0])
    ang = np.mod(ang, np.pi)
    flip = (np.arctan2(nout[:, 1], nout[:, 0]) < 0) | (np.arctan2(nout[:, 1], nout[:, 0]) >= np.pi)
    # wrap: angles close to pi are identified with angles close to 0
    near_pi = ang > np.pi - 1e-7
    ang = np.where(near_pi, ang - np.pi, ang)
    flip = flip ^ near_pi
    # the cell sits behind its outward normal: side -1 unless the canonical normal is flipped
    side = np.where(flip, 1, -1)

    order = np.argsort(ang, kind="stable")
    breaks = np.flatnonzero(np.diff(ang[order]) > 1e-7) + 1
    groups = np.split(order, breaks)
    out: list[Interface] = []
    gaps = []
    tol_off = 1e-9 * scale
    for g in groups:
        j = g[np.argmax(length[g])]
        n_g = nout[j] * (-1 if side[j] == 1 else 1)
        off = (p[g] + q[g]) @ n_g * 0.5
        o2 = np.argsort(off, kind="stable")
        sub_breaks = np.flatnonzero(np.diff(off[o2]) > tol_off) + 1
        for line in np.split(g[o2], sub_breaks):
            _sweep_line(fld, line, n_g, p, q, side, owner, min_length, out, gaps)
    return InterfaceReport(out, gaps)


def _sweep_line(fld, idx, n_g, p, q, side, owner, min_length, out, gaps):
    t_g = np.array([-n_g[1], n_g[0]])
    s0 = p[idx] @ t_g
    s1 = q[idx] @ t_g
    lo = np.minimum(s0, s1)
    hi = np.maximum(s0, s1)
    off = float(np.mean((p[idx] + q[idx]) @ n_g * 0.5))
    pts = np.unique(np.concatenate([lo, hi]))
    # merge breakpoints closer than the length threshold
    merged = [pts[0]]
    for x in pts[1:]:
        if x - merged[-1] > min_length:
            merged.append(x)
    pts = np.array(merged)
    if len(pts) < 2:
        return
    mids = 0.5 * (pts[:-1] + pts[1:])
    plus = np.full(len(mids), -1)
    minus = np.full(len(mids), -1)
    for k, i in enumerate(idx):
        cover = (mids > lo[k]) & (mids < hi[k])
        if side[i] > 0:
            plus[cover] = owner[i]
        else:
            minus[cover] = owner[i]
    ext = fld.exterior_value
    start = 0
    tol = 1e-9 * fld.domain.side
    while start < len(mids):
        stop = start + 1
        while stop < len(mids) and plus[stop] == plus[start] and minus[stop] == minus[start]:
            stop += 1
        a, b = pts[start], pts[stop]
        cp, cm = int(plus[start]), int(minus[start])
        start = stop
        if b - a <= min_length or (cp < 0 and cm < 0):
            continue
        pa = off * n_g + a * t_g
        pb = off * n_g + b * t_g
        if cp < 0 or cm < 0:
            mid = 0.5 * (pa + pb)
            if not _on_domain_boundary(fld.domain, np.vstack([pa, mid, pb]), tol).all():
                gaps.append((pa, pb))
                continue
        vp = fld.cells[cp].value if cp >= 0 else ext
        vm = fld.cells[cm].value if cm >= 0 else ext
        out.append(Interface(pa, pb, n_g + 0.0, vp, vm, cp, cm))


# ---------------------------------------------------------------------------
# sampling

def rasterize(fld: PiecewiseConstantField, resolution: int,
              frame: Square | None = None) -> np.ndarray:
    """Values at the centres of a ``resolution^2`` grid over ``frame`` (default: the domain).

    Grid points outside every cell are NaN.
    """
    frame = fld.domain if frame is None else frame
    res = int(resolution)
    h = 1.0 / res
    out = np.full((res, res, fld.dim), np.nan)
    centers = (np.arange(res) + 0.5) * h
    for c in fld.cells:
        loc = frame.to_local(c.vertices)
        lo = loc.min(axis=0)
        hi = loc.max(axis=0)
        i0 = max(0, int(math.floor(lo[0] / h - 0.5)))
        i1 = min(res, int(math.ceil(hi[0] / h + 0.5)))
        j0 = max(0, int(math.floor(lo[1] / h - 0.5)))
        j1 = min(res, int(math.ceil(hi[1] / h + 0.5)))
        if i0 >= i1 or j0 >= j1:
            continue
        X, Y = np.meshgrid(centers[i0:i1], centers[j0:j1], indexing="ij")
        mask = np.ones(X.shape, dtype=bool)
        n = len(loc)
        for k in range(n):
            ax, ay = loc[k]
            bx, by = loc[(k + 1) % n]
            mask &= (bx - ax) * (Y - ay) - (by - ay) * (X - ax) >= 0
        out[i0:i1, j0:j1][mask] = c.value
    return out


def l1_distance(f: PiecewiseConstantField, g: PiecewiseConstantField,
                resolution: int = 512) -> float:
    """Midpoint-rule estimate of the integral of |f - g| over f's domain.

    Outside a field's cells its exterior value is used.
    """
    a = rasterize(f, resolution)
    b = rasterize(g, resolution, f.domain)
    a = np.where(np.isnan(a), f.exterior_value, a)
    b = np.where(np.isnan(b), g.exterior_value, b)
    diff = np.linalg.norm(a - b, axis=-1)
    return float(diff.mean() * f.domain.area)


__all__ = [
    "Square", "UNIT_SQUARE", "Cell", "PiecewiseConstantField", "SquareCover", "Interface",
    "InterfaceReport", "polygon_area", "clip_convex", "clip_box", "point_in_convex",
    "area_fractions", "distinct_values", "mean_value", "vitali_cover", "place_pattern",
    "interfaces", "rasterize", "l1_distance",
]
