"""Constant-coefficient first-order operators and their characteristic cones.

An operator ``A u = sum_i A[i] du/dx_i`` is stored as ``N`` matrices of shape
``(m, d)``.  Its symbol at a frequency ``w`` is ``A(w) = sum_i w_i A[i]`` and
a state direction ``lam`` is characteristic when ``A(w) lam = 0`` for some
``w != 0``.  Equivalently the ``m x N`` matrix ``B(lam)`` with columns
``A[i] lam`` has rank below ``N``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import optimize

from .errors import ConeTrivialError, InputError

DEFAULT_TOL_CONE = 1e-9


@dataclass(frozen=True, eq=False)
class Operator:
    n_space: int
    d_state: int
    m_eq: int
    matrices: np.ndarray  # shape (N, m, d)
    name: str = ""

    def __post_init__(self):
        mats = np.array(self.matrices, dtype=float)
        if mats.ndim != 3 or mats.shape != (self.n_space, self.m_eq, self.d_state):
            raise InputError(
                f"operator {self.name!r}: expected matrices of shape "
                f"{(self.n_space, self.m_eq, self.d_state)}, got {mats.shape}"
            )
        if not np.all(np.isfinite(mats)):
            raise InputError(f"operator {self.name!r}: non-finite entries")
        mats.setflags(write=False)
        object.__setattr__(self, "matrices", mats)

    @classmethod
    def from_matrices(cls, matrices, name: str = "") -> "Operator":
        try:
            mats = np.asarray(matrices, dtype=float)
        except ValueError:
            raise InputError("operator matrices are ragged") from None
        if mats.ndim != 3:
            raise InputError("matrices must be a list of 2-D arrays")
        n, m, d = mats.shape
        return cls(n, d, m, mats, name)

    def key(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "N": self.n_space,
            "d": self.d_state,
            "m": self.m_eq,
            "matrices": [[[float(x) for x in row] for row in mat] for mat in self.matrices],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Operator":
        try:
            n, d, m = int(data["N"]), int(data["d"]), int(data["m"])
            mats = data["matrices"]
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad operator record: {exc}") from None
        try:
            arr = np.array(mats, dtype=float)
        except ValueError:
            raise InputError("operator matrices are ragged") from None
        return cls(n, d, m, arr, str(data.get("name", "")))

    def same_as(self, other: "Operator") -> bool:
        return self.matrices.shape == other.matrices.shape and np.array_equal(
            self.matrices, other.matrices
        )


class ConeBasis(NamedTuple):
    """A cone direction together with an orthonormal basis of its frequencies."""

    lam: np.ndarray
    v_basis: np.ndarray  # shape (k, N); rows orthonormal
    sigma_min: float


class ConeMembership(NamedTuple):
    member: bool
    sigma_min: float
    trivial: bool  # N > m: rank(B) < N for every direction


class RankReport(NamedTuple):
    holds: bool
    witness: np.ndarray | None
    samples: int
    min_sigma: float


# ---------------------------------------------------------------------------
# built-in operators

def _div2() -> Operator:
    return Operator.from_matrices([[[1.0, 0.0]], [[0.0, 1.0]]], "div2")


def _curl2(m: int, name: str) -> Operator:
    # u = (u_1^1, u_2^1, ..., u_1^m, u_2^m); equations d u_2^j/dx1 - d u_1^j/dx2 = 0
    d = 2 * m
    a1 = np.zeros((m, d))
    a2 = np.zeros((m, d))
    for j in range(m):
        a1[j, 2 * j + 1] = 1.0
        a2[j, 2 * j] = -1.0
    return Operator.from_matrices([a1, a2], name)


def _sys4() -> Operator:
    a1 = [[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, -1.0]]
    a2 = [[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]
    return Operator.from_matrices([a1, a2], "sys4")


def _maxwell3() -> Operator:
    # u = (m, h) in R^3 x R^3; rows: div(m + h), (curl h)_1, (curl h)_2, (curl h)_3
    mats = np.zeros((3, 4, 6))
    for i in range(3):
        mats[i, 0, i] = 1.0
        mats[i, 0, 3 + i] = 1.0
    # (curl h)_1 = d2 h3 - d3 h2
    mats[1, 1, 5] = 1.0
    mats[2, 1, 4] = -1.0
    # (curl h)_2 = d3 h1 - d1 h3
    mats[2, 2, 3] = 1.0
    mats[0, 2, 5] = -1.0
    # (curl h)_3 = d1 h2 - d2 h1
    mats[0, 3, 4] = 1.0
    mats[1, 3, 3] = -1.0
    return Operator.from_matrices(mats, "maxwell3")


BUILTIN_OPERATORS = {
    "div2": _div2,
    "curl2-m1": lambda: _curl2(1, "curl2-m1"),
    "curl2-m2": lambda: _curl2(2, "curl2-m2"),
    "sys4": _sys4,
    "maxwell3": _maxwell3,
}


def builtin_operator(name: str) -> Operator:
    try:
        return BUILTIN_OPERATORS[name]()
    except KeyError:
        raise InputError(
            f"unknown operator {name!r}; built-ins: {', '.join(BUILTIN_OPERATORS)}"
        ) from None


def _builtin_kind(op: Operator) -> str | None:
    ref = BUILTIN_OPERATORS.get(op.name)
    if ref is not None and ref().same_as(op):
        return op.name
    for name, make in BUILTIN_OPERATORS.items():
        if make().same_as(op):
            return name
    return None


# ---------------------------------------------------------------------------
# symbol and cone algebra

def symbol_matrix(op: Operator, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (op.n_space,):
        raise InputError(f"frequency must have {op.n_space} entries, got shape {w.shape}")
    return np.tensordot(w, op.matrices, axes=1)


def cone_matrix(op: Operator, lam) -> np.ndarray:
    """``B(lam)``: the ``m x N`` matrix whose i-th column is ``A[i] @ lam``."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape[-1] != op.d_state:
        raise InputError(f"direction must have {op.d_state} entries")
    # (..., m, N)
    return np.einsum("imd,...d->...mi", op.matrices, lam)


def _cone_sigmas(op: Operator, lams: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (sigma_N, sigma_1) of B for a batch of directions."""
    b = cone_matrix(op, lams)
    s = np.linalg.svd(b, compute_uv=False)
    top = s[..., 0] if s.shape[-1] else np.zeros(s.shape[:-1])
    if op.n_space > op.m_eq:
        low = np.zeros(s.shape[:-1])
    else:
        low = s[..., op.n_space - 1]
    return low, top


def cone_contains(op: Operator, lam, tol_cone: float = DEFAULT_TOL_CONE) -> ConeMembership:
    if tol_cone <= 0:
        raise InputError("tol_cone must be positive")
    lam = np.asarray(lam, dtype=float)
    low, top = _cone_sigmas(op, lam[None, :])
    low, top = float(low[0]), float(top[0])
    trivial = op.n_space > op.m_eq
    return ConeMembership(trivial or low <= tol_cone * max(1.0, top), low, trivial)


def cone_mask(op: Operator, lams, tol_cone: float = DEFAULT_TOL_CONE) -> np.ndarray:
    """Vectorised :func:`cone_contains` over the rows of ``lams``."""
    lams = np.atleast_2d(np.asarray(lams, dtype=float))
    if op.n_space > op.m_eq:
        return np.ones(len(lams), dtype=bool)
    if len(lams) == 0:
        return np.zeros(0, dtype=bool)
    low, top = _cone_sigmas(op, lams)
    return low <= tol_cone * np.maximum(1.0, top)


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    if len(nz) and v[nz[0]] < 0:
        return -v
    return v


def v_lambda(op: Operator, lam, tol_cone: float = DEFAULT_TOL_CONE) -> ConeBasis:
    lam = np.asarray(lam, dtype=float)
    b = cone_matrix(op, lam)
    _, s, vt = np.linalg.svd(b)
    top = s[0] if len(s) else 0.0
    thresh = tol_cone * max(1.0, top)
    sig = np.zeros(op.n_space)
    sig[: len(s)] = s
    null = vt[sig <= thresh]
    if len(null) == 1:
        null = _canonical_sign(null[0])[None, :]
    elif len(null) == op.n_space:
        null = np.eye(op.n_space)
    sigma_min = float(sig[-1])
    return ConeBasis(lam, null, sigma_min)


def constant_rank_check(op: Operator, samples: int = 256, seed: int = 0,
                        tol: float = DEFAULT_TOL_CONE) -> RankReport:
    """Sampled test that ``rank A(w) = m`` on the unit sphere.

    Not a proof: the report records how many frequencies were examined.  The
    lowest-ranked sample is polished by a local minimisation of the smallest
    eigenvalue of ``A(w) A(w)^T`` so isolated rank drops are located.
    """
    if samples < 1:
        raise InputError("samples must be >= 1")
    n = op.n_space
    rng = np.random.default_rng(seed)
    pts = [_quasi_uniform_sphere(n, samples), _random_sphere(rng, n, samples)]
    ws = np.vstack(pts)
    sym = np.einsum("ki,imd->kmd", ws, op.matrices)
    if op.m_eq > op.d_state:
        return RankReport(False, ws[0], len(ws), 0.0)
    sv = np.linalg.svd(sym, compute_uv=False)
    low = sv[:, op.m_eq - 1]
    rel = low / np.maximum(1.0, sv[:, 0])

    def gram_low(x):
        nrm = np.linalg.norm(x)
        if nrm == 0:
            return 1e300
        a = symbol_matrix(op, x / nrm)
        return float(np.linalg.eigvalsh(a @ a.T)[0])

    order = np.argsort(rel)[: min(4, len(rel))]
    best_w, best_rel = ws[order[0]], float(rel[order[0]])
    for k in order:
        res = optimize.minimize(gram_low, ws[k], method="Nelder-Mead",
                                options={"xatol": 1e-13, "fatol": 1e-26, "maxiter": 4000})
        w = res.x / np.linalg.norm(res.x)
        s = np.linalg.svd(symbol_matrix(op, w), compute_uv=False)
        r = s[op.m_eq - 1] / max(1.0, s[0])
        if r < best_rel:
            best_w, best_rel = w, float(r)
    holds = best_rel > tol
    return RankReport(holds, None if holds else _canonical_sign(best_w), len(ws), best_rel)


def _quasi_uniform_sphere(n: int, count: int) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        th = np.pi * (np.arange(count) + 0.5) / count
        return np.column_stack([np.cos(th), np.sin(th)])
    if n == 3:
        # Fibonacci lattice
        k = np.arange(count) + 0.5
        z = 1.0 - 2.0 * k / count
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        phi = np.pi * (3.0 - math.sqrt(5.0)) * k
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    return _random_sphere(np.random.default_rng(12345), n, count)


def _random_sphere(rng: np.random.Generator, n: int, count: int) -> np.ndarray:
    x = rng.standard_normal((count, n))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def rotate_operator(op: Operator, rot) -> Operator:
    """Operator seen in coordinates ``x = R y``: ``A~[j] = sum_i R[i, j] A[i]``."""
    rot = np.asarray(rot, dtype=float)
    n = op.n_space
    if rot.shape != (n, n):
        raise InputError(f"rotation must be {n}x{n}")
    if np.max(np.abs(rot.T @ rot - np.eye(n))) > 1e-12:
        raise InputError("rotation matrix is not orthogonal")
    mats = np.einsum("ij,imd->jmd", rot, op.matrices)
    return Operator(op.n_space, op.d_state, op.m_eq, mats, op.name)


# ---------------------------------------------------------------------------
# direction sampling

def _analytic_directions(kind: str, rng: np.random.Generator, count: int) -> np.ndarray:
    if kind in ("div2", "curl2-m1"):
        return _random_sphere(rng, 2, count)
    if kind == "sys4":
        p = rng.standard_normal((count, 2))
        s = rng.standard_normal(count)
        lam = np.column_stack([p[:, 0], p[:, 1], -s * p[:, 1], s * p[:, 0]])
        return lam / np.linalg.norm(lam, axis=1, keepdims=True)
    if kind == "curl2-m2":
        # a (x) nu on a grid of angles with a seeded offset
        k = max(1, math.ceil(math.sqrt(count)))
        off_a, off_n = rng.uniform(0, np.pi / k, size=2)
        out = []
        for i in range(k):
            ta = off_a + np.pi * i / k
            for j in range(k):
                tn = off_n + 2 * np.pi * j / k
                a = np.array([math.cos(ta), math.sin(ta)])
                nu = np.array([math.cos(tn), math.sin(tn)])
                out.append(np.outer(a, nu).ravel())
        out = np.array(out)[:count]
        return out / np.linalg.norm(out, axis=1, keepdims=True)
    if kind == "maxwell3":
        h = rng.standard_normal((count, 3))
        a = rng.standard_normal((count, 3))
        a -= (np.sum(a * h, axis=1) / np.sum(h * h, axis=1))[:, None] * h
        lam = np.hstack([a - h, h])
        return lam / np.linalg.norm(lam, axis=1, keepdims=True)
    raise KeyError(kind)


def cone_sample(op: Operator, count: int, seed: int = 0,
                tol_cone: float = DEFAULT_TOL_CONE, budget: int = 10**6) -> list[ConeBasis]:
    """Deterministic sample of unit characteristic directions."""
    if count < 1:
        raise InputError("count must be >= 1")
    rng = np.random.default_rng(seed)
    kind = _builtin_kind(op)
    if kind is not None:
        lams = _analytic_directions(kind, rng, count)
    else:
        lams = _accept_reject(op, count, rng, tol_cone, budget)
    out = []
    for lam in lams:
        basis = v_lambda(op, lam, tol_cone)
        if len(basis.v_basis):
            out.append(basis)
    if not out:
        raise ConeTrivialError(f"cone of {op.name or 'operator'} appears trivial")
    return out


def _accept_reject(op, count, rng, tol_cone, budget) -> np.ndarray:
    found = []
    trials = 0
    batch = 256
    while len(found) < count and trials < budget:
        cand = _random_sphere(rng, op.d_state, batch)
        trials += batch
        ok = cone_mask(op, cand, tol_cone)
        found.extend(cand[ok])
        for lam in cand[~ok]:
            if len(found) >= count:
                break
            ref = _project_to_cone(op, lam, tol_cone)
            if ref is not None:
                found.append(ref)
        if trials >= 4 * batch and not found:
            # projections failed on every trial; the cone is almost surely {0}
            break
    return np.array(found[:count]).reshape(-1, op.d_state)


def _project_to_cone(op, lam, tol_cone, steps: int = 8):
    for _ in range(steps):
        _, _, vt = np.linalg.svd(cone_matrix(op, lam))
        w = vt[-1]
        a = symbol_matrix(op, w)
        # project lam onto ker A(w)
        lam = lam - np.linalg.pinv(a) @ (a @ lam)
        nrm = np.linalg.norm(lam)
        if nrm < 1e-8:
            return None
        lam = lam / nrm
        if cone_contains(op, lam, tol_cone).member:
            return lam
    return None


def parse_vector(text: str, dim: int | None = None) -> np.ndarray:
    try:
        vec = np.array([float(t) for t in str(text).split(",")], dtype=float)
    except ValueError:
        raise InputError(f"cannot parse vector {text!r}") from None
    if dim is not None and vec.shape != (dim,):
        raise InputError(f"expected {dim} components, got {len(vec)} in {text!r}")
    return vec


def frame_from_frequency(w: Sequence[float]) -> tuple[float, np.ndarray]:
    """Rotation angle and matrix ``[w | w_perp]`` for a unit planar frequency."""
    w = np.asarray(w, dtype=float)
    theta = math.atan2(w[1], w[0])
    c, s = math.cos(theta), math.sin(theta)
    return theta, np.array([[c, -s], [s, c]])


__all__ = [
    "Operator", "ConeBasis", "ConeMembership", "RankReport", "BUILTIN_OPERATORS",
    "builtin_operator", "symbol_matrix", "cone_matrix", "cone_contains", "cone_mask",
    "v_lambda", "constant_rank_check", "rotate_operator", "cone_sample",
    "frame_from_frequency", "parse_vector", "DEFAULT_TOL_CONE",
]
