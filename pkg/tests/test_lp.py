from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quantreach.lp import LpStatus, ScipyBackend, SimplexBackend, solve_lp

SIMPLEX = SimplexBackend()
HIGHS = ScipyBackend()


def random_lp(rng, n, k, bounded=True):
    g = rng.normal(size=(k, n))
    h = rng.uniform(0.1, 2.0, size=k) * rng.choice([1.0, 50.0, 1e4])
    if bounded:
        g = np.vstack([g, np.eye(n), -np.eye(n)])
        h = np.concatenate([h, np.full(2 * n, 1e5)])
    return g, h, rng.normal(size=n)


def test_box_minimum():
    g = np.vstack([np.eye(2), -np.eye(2)])
    h = np.array([1.0, 2.0, 3.0, 4.0])
    res = solve_lp(g, h, np.array([1.0, 1.0]))
    assert res.is_optimal
    assert res.objective == pytest.approx(-7.0)
    np.testing.assert_allclose(res.argument, [-3.0, -4.0], atol=1e-9)


def test_infeasible():
    g = np.array([[1.0], [-1.0]])
    h = np.array([0.0, -1.0])  # x <= 0 and x >= 1
    assert solve_lp(g, h, np.array([1.0])).status is LpStatus.INFEASIBLE


def test_unbounded():
    g = np.array([[1.0, 0.0]])
    h = np.array([1.0])
    assert solve_lp(g, h, np.array([1.0, 0.0])).status is LpStatus.UNBOUNDED


def test_no_constraints():
    empty = np.zeros((0, 3))
    assert solve_lp(empty, np.zeros(0), np.zeros(3)).is_optimal
    assert solve_lp(empty, np.zeros(0), np.ones(3)).status is LpStatus.UNBOUNDED


def test_null_row_with_negative_rhs_is_infeasible():
    g = np.array([[0.0, 0.0], [1.0, 0.0]])
    assert solve_lp(g, np.array([-1.0, 1.0]), np.zeros(2)).status is LpStatus.INFEASIBLE


def test_degenerate_vertex():
    # many constraints through the same optimal vertex
    angles = np.linspace(0, np.pi / 2, 30)
    g = np.column_stack([-np.cos(angles), -np.sin(angles)])
    res = solve_lp(g, np.zeros(30), np.array([1.0, 1.0]))
    assert res.objective == pytest.approx(0.0, abs=1e-9)


def test_equality_pair_thin_set():
    g = np.array([[0.0, 1.0], [0.0, -1.0], [1.0, 0.0], [-1.0, 0.0]])
    h = np.array([5.0, -5.0, 2.0, 2.0])
    res = solve_lp(g, h, np.array([0.0, 1.0]))
    assert res.objective == pytest.approx(5.0)


def test_badly_scaled_cost_regression():
    # large right-hand sides once left the vertex ~1e-6 outside the feasible set
    data = np.load(Path(__file__).parent / "data" / "lp_scaled_cost.npz")
    res = SIMPLEX.solve(data["cons_mat"], data["cons_rhs"], data["objective"])
    ref = HIGHS.solve(data["cons_mat"], data["cons_rhs"], data["objective"])
    assert res.objective == pytest.approx(ref.objective, rel=1e-6, abs=1e-7)
    resid = data["cons_mat"] @ res.argument - data["cons_rhs"]
    assert resid.max() <= 1e-6


@pytest.mark.parametrize("seed", range(40))
def test_matches_highs_random(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 9))
    g, h, w = random_lp(rng, n, int(rng.integers(n, 60)), bounded=seed % 5 != 0)
    a = SIMPLEX.solve(g, h, w)
    b = HIGHS.solve(g, h, w)
    assert a.status is b.status
    if a.is_optimal:
        assert a.objective == pytest.approx(b.objective, rel=1e-7, abs=1e-6)
        assert np.max(g @ a.argument - h) <= 1e-6 * max(1.0, np.abs(h).max())


@given(
    st.integers(1, 6),
    st.integers(0, 2**32 - 1),
)
def test_optimum_is_feasible_and_no_worse_than_samples(n, seed):
    rng = np.random.default_rng(seed)
    g, h, w = random_lp(rng, n, 3 * n)
    res = solve_lp(g, h, w)
    # the origin is always feasible (h > 0), so the LP cannot be infeasible
    assert res.is_optimal
    assert np.all(g @ res.argument <= h + 1e-6 * np.linalg.norm(g, axis=1) * max(1.0, np.abs(h).max()))
    samples = rng.uniform(-1, 1, size=(200, n)) * 0.05
    inside = samples[np.all(samples @ g.T <= h, axis=1)]
    if len(inside):
        assert res.objective <= (inside @ w).min() + 1e-7
