import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alam.errors import (InputError, NotInConeError, NotInteriorError, RankHypothesisError,
                         RotateFirstError)
from alam.geometry import area_fractions, mean_value
from alam.laminate import (InclusionProblem, certificate_sequence, find_roots_along_cone,
                           lemma1_construct, level_set_from_dict, relaxation_step,
                           solve_cn, solve_multi_level, solve_one_level)
from alam.operator import Operator, builtin_operator, v_lambda
from alam.verify import check_jumps


def circle(xi=(0.5, 0.0), radius=1.0):
    op = builtin_operator("div2")
    return InclusionProblem(op, list(xi), level_sets=(
        level_set_from_dict({"kind": "circle", "radius": radius}, 2),))


def test_solve_cn_examples():
    div2 = builtin_operator("div2")
    assert np.allclose(solve_cn(div2, [0, 1], 1), [1, 0])
    assert np.allclose(solve_cn(div2, [0, 1], 100), [0.1, 0])
    assert np.allclose(solve_cn(builtin_operator("curl2-m1"), [1, 0], 1), [0, -1])
    assert np.array_equal(solve_cn(div2, [0, 0], 9), [0, 0])


def test_solve_cn_errors():
    with pytest.raises(RotateFirstError):
        solve_cn(builtin_operator("div2"), [1, 0], 4)
    with pytest.raises(RankHypothesisError):
        solve_cn(builtin_operator("maxwell3"), np.zeros(6), 4)
    # A2 = 0 makes M1 singular
    flat = Operator.from_matrices([[[1.0, 0.0]], [[0.0, 0.0]]])
    with pytest.raises(RankHypothesisError):
        solve_cn(flat, [0, 1], 4)


@settings(max_examples=40, deadline=None)
@given(s=st.floats(-5, 5), n=st.integers(1, 400))
def test_solve_cn_scaling(s, n):
    div2 = builtin_operator("div2")
    c1 = solve_cn(div2, [0, s], 1)
    assert np.allclose(solve_cn(div2, [0, s], n) * math.sqrt(n), c1, atol=1e-12)


def test_lemma_zero_field():
    fld = lemma1_construct(builtin_operator("div2"), [0, 0], [0, 0], 0.5, 4)
    assert len(fld.cells) == 1
    assert np.array_equal(fld.cells[0].value, [0, 0])


def test_lemma_values_and_mean():
    op = builtin_operator("div2")
    fld = lemma1_construct(op, [0, 1], [0, -1], 0.5, 16)
    cn = np.array(fld.meta["cn"])
    vals = {tuple(np.round(v, 12)) for v in fld.values()}
    expect = {(0.0, 1.0), (0.0, -1.0), tuple(np.round(cn, 12)), tuple(np.round(-cn, 12))}
    assert vals == expect
    assert np.max(np.abs(mean_value(fld))) <= 1e-12
    assert check_jumps(fld, op).passed


def test_lemma_errors():
    op = builtin_operator("div2")
    with pytest.raises(InputError):
        lemma1_construct(op, [0, 1], [0, -1], 0.3, 4)
    with pytest.raises(InputError):
        lemma1_construct(op, [0, 1], [0, -1], 0.5, 1)
    with pytest.raises(NotInConeError):
        lemma1_construct(builtin_operator("sys4"), [1, 0, 1, 0], [-1, 0, -1, 0], 0.5, 4)


@settings(max_examples=20, deadline=None)
@given(lam=st.floats(0.1, 0.9), n=st.sampled_from([4, 9, 25, 100]),
       angle=st.floats(0, 2 * math.pi))
def test_lemma_identities_property(lam, n, angle):
    op = builtin_operator("curl2-m1")
    nu = np.array([math.cos(angle), math.sin(angle)])
    a, b = (1 - lam) * nu, -lam * nu
    fld = lemma1_construct(op, a, b, lam, n)
    fa, fb = area_fractions(fld, [a, b])
    assert abs(fa - (lam - lam * lam / math.sqrt(n))) < 1e-9
    assert abs(fb - ((1 - lam) - lam * (1 - lam) / math.sqrt(n))) < 1e-9
    assert np.max(np.abs(mean_value(fld))) < 1e-9
    assert check_jumps(fld, op).passed


def test_find_roots_examples():
    F = circle().F
    t1, t2 = find_roots_along_cone(F, [0, 0], [1, 0])
    assert abs(t1 + 1) < 1e-10 and abs(t2 - 1) < 1e-10
    t1, t2 = find_roots_along_cone(F, [0.5, 0], [1, 0])
    assert abs(t1 + 1.5) < 1e-10 and abs(t2 - 0.5) < 1e-10
    with pytest.raises(NotInteriorError):
        find_roots_along_cone(F, [2, 0], [1, 0])
    with pytest.raises(InputError):
        find_roots_along_cone(F, [0, 0], [0, 0])


def test_relaxation_step_example():
    prob = circle()
    dirs = [v_lambda(prob.op, [1.0, 0.0])]
    fld, step = relaxation_step(prob, [0.5, 0], directions=dirs)
    assert np.allclose(step.a, [-1, 0]) and np.allclose(step.b, [1, 0])
    assert abs(step.eta - 0.25) < 1e-10
    assert np.allclose(step.eta * step.a + (1 - step.eta) * step.b, [0.5, 0])
    assert np.array_equal(fld.exterior_value, [0.5, 0])
    assert check_jumps(fld, prob.op).passed
    assert np.allclose(mean_value(fld), [0.5, 0], atol=1e-12)


def test_relaxation_step_centre():
    prob = circle((0.0, 0.0))
    _, step = relaxation_step(prob, [0, 0], directions=[v_lambda(prob.op, [0.0, 1.0])])
    assert abs(step.eta - 0.5) < 1e-10


def test_relaxation_step_outside():
    with pytest.raises(NotInteriorError):
        relaxation_step(circle(), [1.5, 0])


def test_certificate_sequence_corner_values_inside():
    prob = circle()
    for fld in certificate_sequence(prob):
        assert np.all(np.linalg.norm(fld.values(), axis=1) <= 1 + 1e-9)


def test_solve_one_level_on_boundary():
    prob = circle((1.0, 0.0))
    fld = solve_one_level(prob)
    assert len(fld.cells) == 1
    assert fld.meta["report"]["stopped"] == "xi on E"


def test_solve_one_level_history():
    prob = circle((0.2, -0.3))
    fld = solve_one_level(prob, dist_tol=0.2)
    hist = fld.meta["report"]["dist_history"]
    assert all(h2 <= h1 + 1e-12 for h1, h2 in zip(hist, hist[1:]))
    assert hist[-1] <= 0.2
    assert check_jumps(fld, prob.op).passed
    assert np.array_equal(fld.exterior_value, prob.xi)


def test_solve_one_level_errors():
    with pytest.raises(NotInteriorError):
        solve_one_level(circle((2.0, 0.0)))
    with pytest.raises(InputError):
        solve_one_level(circle(), schedule={"bogus": 1})


def test_multi_level_constant():
    op = builtin_operator("div2")
    prob = InclusionProblem(op, [0, 1], e_points=[[0, 1], [0, -1]])
    fld = solve_multi_level(prob)
    assert len(fld.cells) == 1 and np.array_equal(fld.cells[0].value, [0, 1])


def test_problem_from_dict():
    prob = InclusionProblem.from_dict({"operator": "div2", "xi": [0.1, 0.2],
                                       "level_sets": [{"kind": "circle", "radius": 2}]})
    assert prob.F([0, 0]) == -4.0
    assert InclusionProblem.from_dict(prob.to_dict()).to_dict() == prob.to_dict()
    with pytest.raises(InputError):
        InclusionProblem.from_dict({"xi": [0, 0], "E_points": [[0, 0]], "colour": 1})
    with pytest.raises(InputError):
        InclusionProblem.from_dict({"xi": [0, 0, 0], "E_points": [[0, 0]]})
    with pytest.raises(InputError):
        InclusionProblem(builtin_operator("div2"), [0, 0])


def test_level_set_kinds():
    band = level_set_from_dict({"kind": "affine-band", "normal": [0, 2], "half_width": 0.5}, 2)
    assert band(np.array([3.0, 0.5])) == 0.0 and band(np.array([0.0, 0.0])) < 0
    expr = level_set_from_dict({"kind": "expr", "expr": "x1**2 + 4*x2**2 - 1"}, 2)
    assert np.allclose(expr(np.array([[1.0, 0.0], [0.0, 0.0]])), [0, -1])
    with pytest.raises(InputError):
        level_set_from_dict({"kind": "expr", "expr": "y + 1"}, 2)
    with pytest.raises(InputError):
        level_set_from_dict({"kind": "blob"}, 2)
    with pytest.raises(InputError):
        level_set_from_dict({"kind": "circle"}, 3)
