import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import random_polytope, vertices
from quantreach.geometry import (
    AhPolytope,
    DegenerateBasisError,
    DimensionMismatchError,
    EmptySetError,
    GeometryError,
    affine_map,
    bounding_box,
    chebyshev_center,
    contains_point,
    feasible_point,
    interior_margin,
    intersect_halfspaces,
    is_feasible,
    linear_transform,
    maximize,
    minimize,
    support_values,
    to_halfspaces,
)
from quantreach.lp import LpStatus

seeds = st.integers(0, 2**32 - 1)


def unit_square():
    return AhPolytope.from_box([0, 0], [1, 1])


def test_box_bounds():
    box = bounding_box(AhPolytope.from_box([-1, 2, 0], [3, 5, 0]))
    np.testing.assert_allclose(box.lo, [-1, 2, 0], atol=1e-9)
    np.testing.assert_allclose(box.hi, [3, 5, 0], atol=1e-9)


def test_dimension_checks():
    with pytest.raises(DimensionMismatchError):
        AhPolytope(np.eye(2), np.zeros(3), np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(DimensionMismatchError):
        AhPolytope(np.eye(2), np.zeros(2), np.ones((1, 3)), np.ones(1))
    with pytest.raises(DimensionMismatchError):
        affine_map(unit_square(), np.eye(3), np.zeros(3))


def test_arrays_are_read_only():
    p = unit_square()
    with pytest.raises(ValueError):
        p.cons_rhs[0] = 5.0


def test_affine_map_rotation_and_shift():
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    q = affine_map(unit_square(), rot, [10.0, 0.0])
    box = bounding_box(q)
    np.testing.assert_allclose(box.lo, [9, 0], atol=1e-9)
    np.testing.assert_allclose(box.hi, [10, 1], atol=1e-9)


def test_projection_to_lower_dimension():
    p = AhPolytope.from_box([0, 0, 0], [1, 2, 3])
    q = affine_map(p, [[1.0, 1.0, 1.0]], [0.0])
    assert q.dim == 1
    assert maximize(q, [1.0]).objective == pytest.approx(6.0)


def test_intersection_cuts_and_empties():
    p = intersect_halfspaces(unit_square(), [[1.0, 1.0]], [1.0])
    assert maximize(p, [1.0, 1.0]).objective == pytest.approx(1.0)
    assert is_feasible(p)
    empty = intersect_halfspaces(unit_square(), [[1.0, 0.0]], [-0.5])
    assert not is_feasible(empty)
    assert feasible_point(empty) is None
    with pytest.raises(EmptySetError):
        bounding_box(empty)


def test_intersection_on_mapped_set_uses_ambient_coordinates():
    p = affine_map(unit_square(), 2 * np.eye(2), [5.0, 5.0])
    q = intersect_halfspaces(p, [[1.0, 0.0]], [6.0])
    assert maximize(q, [1.0, 0.0]).objective == pytest.approx(6.0)
    assert minimize(q, [1.0, 0.0]).objective == pytest.approx(5.0)


def test_unbounded_direction():
    p = AhPolytope.from_halfspaces(np.array([[1.0, 0.0]]), np.array([1.0]))
    assert maximize(p, [0.0, 1.0]).status is LpStatus.UNBOUNDED
    with pytest.raises(GeometryError):
        support_values(p, np.array([[0.0, 1.0]]))


def test_contains_point():
    p = affine_map(unit_square(), [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], [0, 0, 0])
    assert contains_point(p, [0.5, 0.5, 1.0])
    assert not contains_point(p, [0.5, 0.5, 0.5])
    assert not contains_point(p, [2.0, 0.5, 2.5])


def test_chebyshev_center_of_rectangle():
    np.testing.assert_allclose(chebyshev_center(AhPolytope.from_box([0, 0], [4, 4])), [2, 2], atol=1e-9)
    # a 4 x 2 rectangle has a whole segment of centers
    c = chebyshev_center(AhPolytope.from_box([0, 0], [4, 2]))
    assert 1 - 1e-9 <= c[0] <= 3 + 1e-9
    assert c[1] == pytest.approx(1.0)


def test_chebyshev_center_with_equality_and_dropped_dim():
    # x1 pinned to 3 by two opposite rows, x2 free in [0, 2], x3 constant 7 via the center
    basis = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    cons = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    p = AhPolytope(basis, np.array([0.0, 0.0, 7.0]), cons, np.array([3.0, -3.0, 2.0, 0.0]))
    np.testing.assert_allclose(chebyshev_center(p, drop_dims=[2]), [3.0, 1.0, 7.0], atol=1e-9)
    with pytest.raises(GeometryError):
        chebyshev_center(p, drop_dims=[0])


def test_to_halfspaces_rejects_singular_basis():
    p = affine_map(unit_square(), [[1.0, 1.0], [1.0, 1.0]], [0.0, 0.0])
    with pytest.raises(DegenerateBasisError):
        to_halfspaces(p)


def test_interior_margin():
    p = unit_square()
    # a strip of width 0.2 fully inside: margin reaches the half width
    g = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert interior_margin(p, g, [0.6, -0.4]) == pytest.approx(0.1)
    # touching the square only along an edge
    assert interior_margin(p, [[-1.0, 0.0]], [-1.0]) == pytest.approx(0.0, abs=1e-9)
    # margin is capped
    assert interior_margin(p, [[1.0, 0.0]], [100.0], cap=1.0) == pytest.approx(1.0)
    # non-strict rows demand zero slack only
    assert interior_margin(p, g, [0.5, -0.5], strict_rows=[False, False]) == pytest.approx(1.0)
    assert interior_margin(intersect_halfspaces(p, [[1.0, 0.0]], [-1.0]), g, [1.0, 0.0]) is None


def test_dump_is_exact():
    p = AhPolytope.from_box([0.1], [1 / 3])
    text = p.dump()
    assert "0.33333333333333331" in text
    assert text.count("\n") == 3


@given(seeds, st.integers(2, 3))
def test_lp_optimum_matches_vertex_enumeration(seed, n):
    rng = np.random.default_rng(seed)
    g, h = random_polytope(rng, n, 4)
    verts = vertices(g, h)
    w = rng.normal(size=n)
    res = maximize(AhPolytope.from_halfspaces(g, h), w)
    best = (verts @ w).max()
    assert res.objective == pytest.approx(best, rel=1e-7, abs=1e-9)


@given(seeds, st.integers(2, 4), st.integers(1, 4))
def test_affine_map_support_equals_mapped_vertices(seed, n, out):
    rng = np.random.default_rng(seed)
    g, h = random_polytope(rng, n, 3)
    w = rng.normal(size=(out, n))
    b = rng.normal(size=out)
    mapped = affine_map(AhPolytope.from_halfspaces(g, h), w, b)
    d = rng.normal(size=out)
    expected = (vertices(g, h) @ w.T + b) @ d
    assert maximize(mapped, d).objective == pytest.approx(expected.max(), rel=1e-7, abs=1e-8)


@given(seeds)
def test_intersection_support_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    g, h = random_polytope(rng, 2, 3)
    cut_g = rng.normal(size=(2, 2))
    cut_h = rng.uniform(-0.2, 0.5, size=2)
    both = intersect_halfspaces(AhPolytope.from_halfspaces(g, h), cut_g, cut_h)
    verts = vertices(np.vstack([g, cut_g]), np.concatenate([h, cut_h]))
    if len(verts) == 0:
        assert not is_feasible(both)
        return
    d = rng.normal(size=2)
    assert maximize(both, d).objective == pytest.approx((verts @ d).max(), rel=1e-7, abs=1e-8)


@given(seeds)
def test_forward_backward_round_trip(seed):
    rng = np.random.default_rng(seed)
    g, h = random_polytope(rng, 3, 4)
    p = AhPolytope.from_halfspaces(g, h)
    m = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    back = linear_transform(linear_transform(p, m), np.linalg.inv(m))
    dirs = rng.normal(size=(4, 3))
    np.testing.assert_allclose(support_values(back, dirs), support_values(p, dirs), rtol=1e-7, atol=1e-8)


@given(seeds)
def test_chebyshev_center_is_inside(seed):
    rng = np.random.default_rng(seed)
    g, h = random_polytope(rng, 3, 5)
    c = chebyshev_center(AhPolytope.from_halfspaces(g, h))
    assert np.all(g @ c <= h + 1e-7)
