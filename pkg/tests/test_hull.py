import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alam.errors import CloudSizeError, InputError
from alam.hull import (GridFunction, HullCloud, hull_distance, hull_iterate, hull_member,
                       hull_member_batch, lambda_envelope, star_shaped_check, star_shaped_shrink)
from alam.operator import builtin_operator

TRI = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def test_two_points_depth_one():
    cloud = hull_iterate([[0, 1], [0, -1]], builtin_operator("div2"), 1, {"t_grid": 5})
    assert len(cloud.points) == 5
    assert np.allclose(np.sort(cloud.points[:, 1]), [-1, -0.5, 0, 0.5, 1])
    assert np.allclose(cloud.points[:, 0], 0)
    new = cloud.levels == 1
    w = cloud.weights[new]
    p = cloud.points[cloud.parents[new]]
    assert np.allclose(w[:, None] * p[:, 0] + (1 - w[:, None]) * p[:, 1], cloud.points[new])


def test_non_cone_pair_stays():
    cloud = hull_iterate([[0, 0, 0, 0], [1, 0, 1, 0]], builtin_operator("sys4"), 2)
    assert len(cloud.points) == 2


def test_triangle_membership():
    op = builtin_operator("div2")
    cloud = hull_iterate(TRI, op, 2, {"t_grid": 17})
    assert hull_member([0.2, 0.2], TRI, op, 3, cloud=cloud)
    assert hull_member([1.0, 0.0], TRI, op, 0)
    assert not hull_member([0.6, 0.6], TRI, op, 3, cloud=cloud)
    assert not hull_member([-0.1, 0.3], TRI, op, 3, cloud=cloud)
    assert not hull_member([0.2, 0.2], TRI, op, 0)
    got = hull_member_batch([[0.2, 0.2], [0.6, 0.6]], TRI, op, 3, cloud=cloud)
    assert got.tolist() == [True, False]


def test_hull_distance():
    assert hull_distance([0.2, 0.2], TRI) < 1e-9
    assert abs(hull_distance([1, 1], TRI) - np.sqrt(0.5)) < 1e-9


def test_star_shaped_shrink_examples():
    out = star_shaped_shrink([[0, 1], [0, -1]], [0, 0], 0.5)
    assert np.allclose(out, [[0, 0.5], [0, -0.5]])
    assert np.allclose(star_shaped_shrink([[2, 2]], [0, 0], 1.0), [[0, 0]])
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(InputError):
            star_shaped_shrink([[0, 1]], [0, 0], bad)


def test_star_shaped_check():
    cloud = hull_iterate(TRI, builtin_operator("div2"), 2, {"t_grid": 9})
    assert star_shaped_check(cloud, [0.2, 0.2])["passed"]
    ang = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    rad = np.repeat([0.8, 0.9, 1.0], len(ang))
    ring = np.column_stack([rad * np.tile(np.cos(ang), 3), rad * np.tile(np.sin(ang), 3)])
    res = star_shaped_check(ring, [0.9, 0.0])
    assert not res["passed"] and res["failures"] > 0
    assert star_shaped_check(np.array([[0.3, 0.3]]), [0.3, 0.3])["passed"]
    assert not star_shaped_check(cloud, [5.0, 5.0])["passed"]


def test_cloud_round_trip():
    cloud = hull_iterate([[0, 1], [0, -1]], builtin_operator("div2"), 2, {"t_grid": 5})
    again = HullCloud.from_dict(cloud.to_dict())
    assert np.array_equal(again.points, cloud.points)
    assert np.array_equal(again.parents, cloud.parents)
    assert again.params == cloud.params and again.depth == cloud.depth
    with pytest.raises(InputError):
        HullCloud.from_dict({"points": [[0, 0]]})


def test_cloud_size_error():
    rng = np.random.default_rng(0)
    E = rng.uniform(size=(200, 2))
    with pytest.raises(CloudSizeError):
        hull_iterate(E, builtin_operator("div2"), 2, {"pair_cap": 1000})


def test_hull_params_validated():
    with pytest.raises(InputError):
        hull_iterate(TRI, builtin_operator("div2"), 1, {"t_grid": 1})
    with pytest.raises(InputError):
        hull_iterate(TRI, builtin_operator("div2"), 1, {"colour": 1})


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(2, 5))
def test_hull_monotone_in_depth(seed, k):
    rng = np.random.default_rng(seed)
    E = rng.uniform(-1, 1, size=(k, 2))
    op = builtin_operator("div2")
    shallow = hull_iterate(E, op, 1, {"t_grid": 5})
    deep = hull_iterate(E, op, 2, {"t_grid": 5})
    # every point of the shallow cloud is kept by the deeper one
    assert np.array_equal(deep.at_depth(1), shallow.points)
    # and every point stays in the convex hull
    assert all(hull_distance(p, E) <= 1e-9 for p in deep.points)


def _grid(fn, res=33):
    return GridFunction.from_function(fn, [-1, -1], [1, 1], res)


def test_envelope_convex_fixed_point():
    grid = _grid(lambda x: np.sum(x * x, axis=-1))
    env = lambda_envelope(grid, builtin_operator("div2"))
    assert np.allclose(env.values, grid.values, atol=1e-12)
    assert len(env.meta["history"]) == 1


def test_envelope_indicator():
    def ind(x):
        on = np.isclose(x[..., 0], 0) & np.isclose(np.abs(x[..., 1]), 1)
        return np.where(on, 0.0, np.inf)
    env = lambda_envelope(_grid(ind), builtin_operator("div2"))
    nodes = env.nodes()
    seg = np.isclose(nodes[..., 0], 0)
    assert np.all(env.values[seg] <= 1e-12)
    assert np.all(env.values[~seg] >= 1e3)


def test_envelope_input_checks():
    with pytest.raises(InputError):
        lambda_envelope(_grid(lambda x: x[..., 0]), builtin_operator("sys4"))
    with pytest.raises(InputError):
        GridFunction([0, 0], [1, 1], 3, np.zeros((3, 4)))


def test_grid_function_round_trip():
    grid = _grid(lambda x: x[..., 0] - 2 * x[..., 1], 9)
    again = GridFunction.from_dict(grid.to_dict())
    assert np.array_equal(again.values, grid.values)
    assert abs(float(grid.interpolate([[0.3, -0.2]])[0]) - 0.7) < 1e-12


@settings(max_examples=15, deadline=None)
@given(c=st.floats(-2, 2), w=st.floats(0.1, 3))
def test_envelope_below_and_above_min(c, w):
    grid = _grid(lambda x: np.cos(3 * x[..., 0]) * w + c * x[..., 1] ** 3, 17)
    env = lambda_envelope(grid, builtin_operator("div2"))
    assert np.all(env.values <= grid.values + 1e-12)
    assert env.values.min() >= grid.values.min() - 1e-12
