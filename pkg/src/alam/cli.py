"""Command-line entry point: ``alam <command> [flags]``.

Every command writes its primary artifact to ``--out`` (when it has one) and
a manifest next to it recording inputs, seeds, tolerances and summary
numbers.  Exit status: 0 ok, 1 verification failure, 2 input error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import files
from .errors import AlamError, InputError
from .geometry import area_fractions
from .hull import GridFunction, hull_iterate, lambda_envelope
from .laminate import InclusionProblem, lemma1_construct, solve_multi_level, solve_one_level
from .operator import DEFAULT_TOL_CONE, cone_contains, parse_vector, v_lambda
from .verify import (check_jumps, dist_integral, field_report, relaxation_certificate,
                     seeded_bumps, weak_residual)

COMMANDS = ("cone", "hull", "envelope", "construct", "solve", "verify", "export-svg")
TOLERANCE_KEYS = {"tol_cone", "dist_tol", "jump_tol", "residual_tol"}
SCHEDULE_KEYS = {"n", "depth", "max_levels", "dir_count", "t_grid", "resolution", "max_iter",
                 "component"}


@dataclass
class RunConfig:
    command: str
    operator_ref: str | None = None
    problem_path: str | None = None
    out_path: str | None = None
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise InputError(f"unknown command {self.command!r}")
        bad = set(self.tolerances) - TOLERANCE_KEYS
        bad |= set(self.schedule) - SCHEDULE_KEYS
        if bad:
            raise InputError(f"unknown config keys: {sorted(bad)}")

    def to_dict(self) -> dict:
        return {"command": self.command, "operator": self.operator_ref,
                "problem": self.problem_path, "out": self.out_path, "seed": self.seed,
                "tolerances": self.tolerances, "schedule": self.schedule, "inputs": self.inputs}


# ---------------------------------------------------------------------------
# commands; each returns (summary, passed)

def _need(value, what):
    if value is None:
        raise InputError(f"{what} is required")
    return value


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.stem + ".manifest.json")


def _problem(cfg: RunConfig) -> InclusionProblem:
    op = files.load_operator(cfg.operator_ref) if cfg.operator_ref else None
    return files.load_problem(_need(cfg.problem_path, "--problem"), op)


def _cmd_cone(cfg: RunConfig):
    op = files.load_operator(_need(cfg.operator_ref, "--operator"))
    lam = parse_vector(_need(cfg.inputs.get("lambda"), "--lambda"), op.d_state)
    tol = cfg.tolerances["tol_cone"]
    mem = cone_contains(op, lam, tol)
    out = {"member": mem.member, "sigma_min": mem.sigma_min, "trivial": mem.trivial}
    if mem.member:
        out["v_basis"] = v_lambda(op, lam, tol).v_basis
    print(f"member={str(mem.member).lower()} sigma_min={mem.sigma_min!r}")
    if mem.member:
        for w in np.atleast_2d(out["v_basis"]):
            print("v_basis " + ",".join(repr(float(x)) for x in w))
    return out, None, True


def _cmd_hull(cfg: RunConfig):
    op = files.load_operator(cfg.operator_ref) if cfg.operator_ref else None
    if cfg.inputs.get("points"):
        op = _need(op, "--operator")
        pts = [parse_vector(p, op.d_state) for p in cfg.inputs["points"].split(";")]
    else:
        prob = files.load_problem(_need(cfg.problem_path, "--problem or --points"), op)
        if not prob.point_set:
            raise InputError("hull needs a problem with E_points")
        op, pts = prob.op, prob.e_points
    params = {"t_grid": cfg.schedule["t_grid"], "tol_cone": cfg.tolerances["tol_cone"]}
    if cfg.inputs.get("dedup_eps") is not None:
        params["dedup_eps"] = float(cfg.inputs["dedup_eps"])
    cloud = hull_iterate(np.asarray(pts), op, cfg.schedule["depth"], params)
    print(f"points={len(cloud.points)} depth={cloud.depth}")
    summary = {"points": len(cloud.points), "depth": cloud.depth,
               "per_level": np.bincount(cloud.levels).tolist(), "params": cloud.params}
    return summary, cloud.to_dict(), True


def _cmd_envelope(cfg: RunConfig):
    prob = _problem(cfg)
    if prob.point_set:
        raise InputError("envelope needs a level-set problem")
    half = float(cfg.inputs.get("box") or 2.0)
    d = prob.op.d_state
    grid = GridFunction.from_function(prob.F, [-half] * d, [half] * d, cfg.schedule["resolution"])
    env = lambda_envelope(grid, prob.op, max_iter=cfg.schedule["max_iter"],
                          dir_count=cfg.schedule["dir_count"],
                          tol_cone=cfg.tolerances["tol_cone"])
    hist = env.meta["history"]
    print(f"sweeps={len(hist)} min={float(env.values.min())!r}")
    summary = {"sweeps": len(hist), "history": hist, "directions": env.meta["directions"],
               "min": float(env.values.min()), "max": float(env.values.max())}
    return summary, env.to_dict(), True


def _cmd_construct(cfg: RunConfig):
    op = files.load_operator(_need(cfg.operator_ref, "--operator"))
    a = parse_vector(_need(cfg.inputs.get("a"), "--a"), op.d_state)
    b = parse_vector(_need(cfg.inputs.get("b"), "--b"), op.d_state)
    lam = float(_need(cfg.inputs.get("lambda"), "--lambda"))
    n = cfg.schedule["n"]
    fld = lemma1_construct(op, a, b, lam, n, cfg.tolerances["tol_cone"])
    fr = area_fractions(fld, [a, b, np.asarray(fld.meta["cn"])])
    jumps = check_jumps(fld, op, cfg.tolerances["jump_tol"])
    res = weak_residual(fld, op, seeded_bumps(fld, 20, cfg.seed))
    # cn and -cn share the corner fraction
    corner = 1.0 - fr[0] - fr[1]
    passed = jumps.passed and res.value <= cfg.tolerances["residual_tol"]
    print(f"fractions a={fr[0]:.6g} b={fr[1]:.6g} corners={corner:.6g}")
    print(f"jumps max={jumps.max_violation:.3g} residual={res.value:.3g} "
          f"{'pass' if passed else 'FAIL'}")
    summary = {"fractions": {"a": fr[0], "b": fr[1], "corners": corner},
               "cells": len(fld.cells), "theta": fld.meta["theta"], "cn": fld.meta["cn"],
               "jumps": jumps.to_dict(), "residual": res.to_dict()}
    return summary, fld.to_dict(), passed


def _cmd_solve(cfg: RunConfig):
    prob = _problem(cfg)
    s, t = cfg.schedule, cfg.tolerances
    if prob.point_set:
        fld = solve_multi_level(prob, max_levels=s["max_levels"], dist_tol=t["dist_tol"],
                                n0=max(4, s["n"]), tol_cone=t["tol_cone"],
                                hull_params={"t_grid": s["t_grid"]}, hull_depth=s["depth"])
    else:
        fld = solve_one_level(prob, max_levels=s["max_levels"], dist_tol=t["dist_tol"],
                              seed=cfg.seed, dir_count=s["dir_count"], tol_cone=t["tol_cone"])
    report = fld.meta["report"]
    cert = relaxation_certificate([fld], prob, jump_tol=t["jump_tol"],
                                  residual_tol=t["residual_tol"], seed=cfg.seed)
    dist = dist_integral(fld, prob)
    passed = bool(cert["passed"] and dist <= t["dist_tol"])
    print(f"cells={len(fld.cells)} dist_integral={dist!r} certificate="
          f"{'pass' if passed else 'FAIL'}")
    summary = {"report": report, "dist_integral": dist, "certificate": cert}
    return summary, fld.to_dict(), passed


def _cmd_verify(cfg: RunConfig):
    fld = files.load_field(_need(cfg.inputs.get("field"), "--field"))
    t = cfg.tolerances
    if cfg.problem_path:
        prob = _problem(cfg)
        rep = field_report(fld, prob, t["jump_tol"], t["residual_tol"], seed=cfg.seed,
                           dist_tol=t["dist_tol"] if cfg.inputs.get("check_dist") else None)
    else:
        op = files.load_operator(_need(cfg.operator_ref, "--operator or --problem"))
        probs = fld.validate()
        jumps = check_jumps(fld, op, t["jump_tol"])
        res = weak_residual(fld, op, seeded_bumps(fld, 20, cfg.seed))
        rep = {"valid": {"passed": not probs, "problems": probs[:10]}, "jumps": jumps.to_dict(),
               "residual": {**res.to_dict(), "passed": res.value <= t["residual_tol"]}}
        rep["passed"] = all(v["passed"] for v in rep.values())
    for k, v in rep.items():
        if isinstance(v, dict) and "passed" in v:
            print(f"{k}: {'pass' if v['passed'] else 'FAIL'}")
    return rep, None, bool(rep["passed"])


def _cmd_export_svg(cfg: RunConfig):
    src = _need(cfg.inputs.get("field"), "--field")
    out = _need(cfg.out_path, "--out")
    files.export_svg(src, out, cfg.schedule["component"])
    print(f"wrote {out}")
    return {"field": src, "component": cfg.schedule["component"]}, None, True


_DISPATCH = {"cone": _cmd_cone, "hull": _cmd_hull, "envelope": _cmd_envelope,
             "construct": _cmd_construct, "solve": _cmd_solve, "verify": _cmd_verify,
             "export-svg": _cmd_export_svg}


def run(cfg: RunConfig) -> int:
    """Dispatch one command; returns the exit code."""
    summary, artifact, passed = _DISPATCH[cfg.command](cfg)
    if cfg.out_path and cfg.command != "export-svg":
        out = Path(cfg.out_path)
        if artifact is not None:
            files.write_json(out, artifact)
            manifest = _manifest_path(out)
        else:
            manifest = out
        files.write_json(manifest, {"config": cfg.to_dict(), "summary": summary,
                                    "passed": passed})
    elif cfg.out_path:
        files.write_json(_manifest_path(Path(cfg.out_path)),
                         {"config": cfg.to_dict(), "summary": summary, "passed": passed})
    return 0 if passed else 1


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="alam", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--operator", help="built-in name, fixture name or JSON path")
    common.add_argument("--problem", help="problem JSON path or fixture name")
    common.add_argument("--out", help="output path")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tol-cone", type=float, default=DEFAULT_TOL_CONE)
    common.add_argument("--dist-tol", type=float, default=0.05)
    common.add_argument("--jump-tol", type=float, default=1e-9)
    common.add_argument("--residual-tol", type=float, default=1e-6)
    common.add_argument("--n", type=int, default=16)
    common.add_argument("--depth", type=int, default=2)
    common.add_argument("--max-levels", type=int, default=6)
    common.add_argument("--dir-count", type=int, default=16)
    common.add_argument("--t-grid", type=int, default=17)
    common.add_argument("--resolution", type=int, default=65)
    common.add_argument("--max-iter", type=int, default=50)

    c = sub.add_parser("cone", parents=[common], help="cone membership and V_lambda")
    c.add_argument("--lambda", dest="lam", required=True, help="comma separated state vector")
    c = sub.add_parser("hull", parents=[common], help="laminate hull point cloud")
    c.add_argument("--points", help="semicolon separated vectors, e.g. '0,1;0,-1'")
    c.add_argument("--dedup-eps", type=float)
    c = sub.add_parser("envelope", parents=[common], help="Lambda-convex envelope on a grid")
    c.add_argument("--box", type=float, default=2.0, help="half width of the grid box")
    c = sub.add_parser("construct", parents=[common], help="strip laminate between a and b")
    c.add_argument("--a", required=True)
    c.add_argument("--b", required=True)
    c.add_argument("--lambda", dest="lam", required=True, type=float)
    sub.add_parser("solve", parents=[common], help="solve an inclusion problem")
    c = sub.add_parser("verify", parents=[common], help="check a field file")
    c.add_argument("--field", required=True)
    c.add_argument("--check-dist", action="store_true")
    c = sub.add_parser("export-svg", parents=[common], help="render a field file as SVG")
    c.add_argument("--field", required=True)
    c.add_argument("--component", type=int, default=0)
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    tolerances = {"tol_cone": ns.tol_cone, "dist_tol": ns.dist_tol, "jump_tol": ns.jump_tol,
                  "residual_tol": ns.residual_tol}
    schedule = {"n": ns.n, "depth": ns.depth, "max_levels": ns.max_levels,
                "dir_count": ns.dir_count, "t_grid": ns.t_grid, "resolution": ns.resolution,
                "max_iter": ns.max_iter, "component": getattr(ns, "component", 0)}
    inputs = {}
    for key, attr in (("lambda", "lam"), ("a", "a"), ("b", "b"), ("points", "points"),
                      ("dedup_eps", "dedup_eps"), ("box", "box"), ("field", "field"),
                      ("check_dist", "check_dist")):
        if getattr(ns, attr, None) is not None:
            inputs[key] = getattr(ns, attr)
    return RunConfig(ns.command, ns.operator, ns.problem, ns.out, ns.seed, tolerances,
                     schedule, inputs)


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(config_from_args(ns))
    except InputError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except AlamError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
