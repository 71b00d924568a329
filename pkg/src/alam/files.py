"""JSON artifacts, bundled fixtures and SVG export."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InputError
from .geometry import PiecewiseConstantField
from .laminate import InclusionProblem
from .operator import Operator, builtin_operator

FIXTURE_OPERATORS = ("div2", "curl2-m1", "curl2-m2", "sys4", "maxwell3")
FIXTURE_PROBLEMS = ("circle",)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        # -0.0 and 0.0 print differently; keep the sign, it round-trips
        return float(obj)
    return obj


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, shortest round-trip floats, trailing newline."""
    try:
        return json.dumps(_plain(obj), sort_keys=True, indent=1, allow_nan=False) + "\n"
    except ValueError as exc:
        raise InputError(f"cannot serialise: {exc}") from None


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def parse_json(text: str, source: str = "<string>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    return parse_json(path.read_text(encoding="utf-8"), str(path))


# ---------------------------------------------------------------------------
# fixtures

def _fixture_text(name: str) -> str:
    res = resources.files("alam") / "fixtures" / f"{name}.json"
    if not res.is_file():
        raise InputError(f"unknown fixture {name!r}")
    return res.read_text(encoding="utf-8")


def fixtures() -> dict:
    """Bundled operators and problems by name."""
    out = {}
    for name in FIXTURE_OPERATORS:
        out[name] = Operator.from_dict(parse_json(_fixture_text(name), name))
    for name in FIXTURE_PROBLEMS:
        out[name] = InclusionProblem.from_dict(parse_json(_fixture_text(name), name))
    return out


def load_operator(ref) -> Operator:
    """Operator from a built-in name, a fixture name or a JSON file path."""
    if isinstance(ref, Operator):
        return ref
    ref = str(ref)
    path = Path(ref)
    if path.suffix == ".json" or path.is_file():
        return Operator.from_dict(read_json(path))
    if ref in FIXTURE_OPERATORS:
        return Operator.from_dict(parse_json(_fixture_text(ref), ref))
    return builtin_operator(ref)


def load_problem(ref, op: Operator | None = None) -> InclusionProblem:
    ref = str(ref)
    path = Path(ref)
    if ref in FIXTURE_PROBLEMS and not path.is_file():
        data = parse_json(_fixture_text(ref), ref)
    else:
        data = read_json(path)
    if op is None and isinstance(data, dict) and isinstance(data.get("operator"), str):
        op = load_operator(data["operator"])
    return InclusionProblem.from_dict(data, op)


def load_field(path) -> PiecewiseConstantField:
    return PiecewiseConstantField.from_dict(read_json(path))


# ---------------------------------------------------------------------------
# SVG

SVG_SIZE = 512
# fixed linear ramp, low to high
_RAMP = ((0.0, (49, 54, 149)), (0.5, (247, 247, 247)), (1.0, (165, 0, 38)))


def _colour(t: float) -> str:
    t = min(max(t, 0.0), 1.0)
    for (t0, c0), (t1, c1) in zip(_RAMP, _RAMP[1:]):
        if t <= t1:
            s = (t - t0) / (t1 - t0)
            rgb = [round(a + s * (b - a)) for a, b in zip(c0, c1)]
            return "#{:02x}{:02x}{:02x}".format(*rgb)
    return "#{:02x}{:02x}{:02x}".format(*_RAMP[-1][1])


def _fmt(x: float) -> str:
    return f"{x:.4f}".rstrip("0").rstrip(".") or "0"


def field_svg(fld: PiecewiseConstantField, component: int = 0) -> str:
    """One filled path per cell, coloured by a value component."""
    if not fld.cells:
        raise InputError("field has no cells")
    if not 0 <= component < fld.dim:
        raise InputError(f"component {component} out of range for d={fld.dim}")
    vals = fld.values()[:, component]
    lo, hi = float(vals.min()), float(vals.max())
    span = hi - lo
    corners = fld.domain.vertices()
    xmin, ymin = corners.min(axis=0)
    ext = float((corners.max(axis=0) - corners.min(axis=0)).max())
    scale = SVG_SIZE / ext

    def pt(p):
        # y axis points up in the field, down in SVG
        return f"{_fmt((p[0] - xmin) * scale)},{_fmt(SVG_SIZE - (p[1] - ymin) * scale)}"

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" '
        f'viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">',
        f'<!-- component {component}: {lo!r} .. {hi!r} -->',
    ]
    for cell, v in zip(fld.cells, vals):
        t = 0.5 if span <= 0 else (float(v) - lo) / span
        d = "M" + " L".join(pt(p) for p in cell.vertices) + " Z"
        lines.append(f'<path fill="{_colour(t)}" stroke="none" d="{d}"/>')
    d = "M" + " L".join(pt(p) for p in corners) + " Z"
    lines.append(f'<path fill="none" stroke="#000000" stroke-width="1" d="{d}"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def export_svg(field_path, out_path, colormap_component: int = 0) -> Path:
    fld = load_field(field_path)
    out = Path(out_path)
    out.write_text(field_svg(fld, colormap_component), encoding="utf-8")
    return out


__all__ = [
    "dumps", "write_json", "read_json", "parse_json", "fixtures", "load_operator",
    "load_problem", "load_field", "field_svg", "export_svg",
]
