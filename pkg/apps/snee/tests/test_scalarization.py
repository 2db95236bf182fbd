import itertools
import math

import numpy as np
import pytest
from scipy.optimize import minimize

from apps.snee.problems import evaluate, make_problem
from apps.snee.scalarization import (
    SimplexGrid,
    grid_frame,
    nearest_grid_index,
    project_simplex,
    simplex_grid,
    weighted_sum,
)


@pytest.mark.parametrize(
    "name, lam, x, gradient",
    [
        ("ZLT1", [1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]),
        ("ZLT1", [1 / 3, 1 / 3, 1 / 3], [1 / 3, 1 / 3, 1 / 3], [0.0, 0.0, 0.0]),
        ("VFM1", [0.4, 0.2, 0.4], [0.4, 0.2], [0.0, 0.0]),
    ],
)
def test_weighted_sum_stationary(name, lam, x, gradient):
    """Test weighted_sum function at closed-form minimizers."""
    result = weighted_sum(make_problem(name), lam, x, order=2)
    np.testing.assert_allclose(result.gradient, gradient, atol=1e-14)
    assert result.hessian.shape == (len(x), len(x))


def test_weighted_sum_linearity():
    """Test that weighted_sum combines the objectives linearly."""
    problem = make_problem("GRV1")
    lam = np.array([0.2, 0.5, 0.3])
    x = np.array([0.3, -0.7])
    ev = evaluate(problem, x, order=2)
    result = weighted_sum(problem, lam, x, order=2)
    assert result.value == pytest.approx(lam @ ev.values, abs=1e-14)
    np.testing.assert_allclose(result.gradient, ev.gradients @ lam, atol=1e-14)
    assert weighted_sum(problem, lam, x).gradient is None
    assert weighted_sum(problem, [1.0, 0.0, 0.0], x).value == pytest.approx(ev.values[0])


def test_weighted_sum_errors():
    """Test weighted_sum function with invalid weights."""
    problem = make_problem("ZLT1")
    with pytest.raises(ValueError):
        weighted_sum(problem, [0.5, 0.5, 0.5], [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        weighted_sum(problem, [0.5, 0.5], [0.0, 0.0, 0.0])


@pytest.mark.parametrize(
    "v, expected",
    [
        ([0.6, 0.6], [0.5, 0.5]),
        ([2.0, 0.0], [1.0, 0.0]),
        ([0.8, 0.1, 0.1], [0.8, 0.1, 0.1]),
        ([-1.0, -1.0, -1.0], [1 / 3, 1 / 3, 1 / 3]),
        ([5.0, -3.0, 0.5, 0.2], [1.0, 0.0, 0.0, 0.0]),
    ],
)
def test_project_simplex(v, expected):
    """Test project_simplex function."""
    result = project_simplex(v)
    np.testing.assert_allclose(result, expected, atol=1e-14)
    np.testing.assert_allclose(project_simplex(result), result, atol=1e-14)


def _projection_oracle(v):
    q = v.size
    res = minimize(
        lambda lam: float(np.sum((lam - v) ** 2)),
        np.full(q, 1.0 / q),
        jac=lambda lam: 2.0 * (lam - v),
        method="SLSQP",
        bounds=[(0.0, 1.0)] * q,
        constraints=[{"type": "eq", "fun": lambda lam: lam.sum() - 1.0}],
        options={"ftol": 1e-15, "maxiter": 500},
    )
    return res.x


def test_project_simplex_oracle():
    """Test project_simplex function against a quadratic program."""
    rng = np.random.default_rng(2024)
    for _ in range(200):
        q = int(rng.integers(2, 6))
        v = rng.normal(0.0, 1.5, q)
        result = project_simplex(v)
        assert np.all(result >= 0)
        assert result.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(result, _projection_oracle(v), atol=1e-6)
        lam = rng.dirichlet(np.ones(q))
        assert np.linalg.norm(result - v) <= np.linalg.norm(lam - v) + 1e-12


@pytest.mark.parametrize(
    "q, step, m",
    [
        (2, 0.5, 3),
        (3, 0.5, 6),
        (2, 0.01, 101),
        (3, 0.02, 1326),
        (5, 0.1, 1001),
    ],
)
def test_simplex_grid(q, step, m):
    """Test simplex_grid function."""
    grid = simplex_grid(q, step)
    assert isinstance(grid, SimplexGrid)
    K = round(1 / step)
    assert grid.m == m == math.comb(K + q - 1, q - 1)
    assert grid.q == q
    assert np.all(grid.points >= 0)
    np.testing.assert_allclose(grid.points.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(grid.counts.sum(axis=1) == K)
    assert len({tuple(row) for row in grid.counts}) == m
    with pytest.raises(ValueError):
        grid.points[0, 0] = 0.5


def test_simplex_grid_order():
    """Test that simplex_grid enumerates the compositions in lexicographic order."""
    grid = simplex_grid(2, 0.5)
    np.testing.assert_allclose(grid.points, [[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]])
    counts = [tuple(c) for c in simplex_grid(3, 0.25).counts]
    expected = sorted(
        c for c in itertools.product(range(5), repeat=3) if sum(c) == 4
    )
    assert counts == expected


@pytest.mark.parametrize(
    "q, step",
    [(1, 0.5), (3, 0.0), (3, 1.5), (3, 0.3)],
)
def test_simplex_grid_errors(q, step):
    """Test simplex_grid function with invalid input."""
    with pytest.raises(ValueError):
        simplex_grid(q, step)


def test_grid_frame():
    """Test grid_frame function."""
    df = grid_frame(simplex_grid(3, 0.5))
    assert list(df.columns) == ["lambda_1", "lambda_2", "lambda_3"]
    assert len(df) == 6


def test_nearest_grid_index():
    """Test nearest_grid_index function."""
    grid = simplex_grid(2, 0.5)
    assert nearest_grid_index(grid, [0.6, 0.4]) == 1
    assert nearest_grid_index(grid, [0.1, 0.9]) == 0
    with pytest.raises(ValueError):
        nearest_grid_index(grid, [0.2, 0.3, 0.5])
