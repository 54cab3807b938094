import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import BSpline

from dropkan.splines import (
    EdgeActivation, EdgeGrid, activation_eval, basis_deriv, basis_eval, silu, silu_deriv,
)


def cox_de_boor(knots, j, k, x):
    """Textbook recursive definition, one basis function at one point."""
    if k == 0:
        return 1.0 if knots[j] <= x < knots[j + 1] else 0.0
    left = right = 0.0
    if knots[j + k] != knots[j]:
        left = (x - knots[j]) / (knots[j + k] - knots[j]) * cox_de_boor(knots, j, k - 1, x)
    if knots[j + k + 1] != knots[j + 1]:
        right = (knots[j + k + 1] - x) / (knots[j + k + 1] - knots[j + 1]) * cox_de_boor(knots, j + 1, k - 1, x)
    return left + right


def naive_basis(grid, x):
    knots = list(grid.knots)
    return np.array([cox_de_boor(knots, j, grid.degree, x) for j in range(grid.n_basis)])


def test_grid_shape():
    grid = EdgeGrid(degree=3, intervals=5)
    assert grid.knots.shape == (5 + 2 * 3 + 1,)
    assert grid.n_basis == 8
    assert np.all(np.diff(grid.knots) > 0)
    assert grid.knots[3] == -1.0 and grid.knots[-4] == pytest.approx(1.0)


@pytest.mark.parametrize("kwargs", [
    {"degree": -1}, {"intervals": 0}, {"range_lo": 1.0, "range_hi": 1.0}, {"range_lo": np.inf},
])
def test_grid_rejects_bad_parameters(kwargs):
    with pytest.raises(ValueError):
        EdgeGrid(**kwargs)


def test_basis_matches_recursive_oracle():
    grid = EdgeGrid(degree=3, intervals=5)
    xs = np.linspace(-1.0, 1.0, 100)
    fast = basis_eval(grid, xs)
    slow = np.array([naive_basis(grid, x) for x in xs])
    np.testing.assert_allclose(fast, slow, atol=1e-14)
    assert fast.min() >= 0.0 and fast.max() <= 1.0
    np.testing.assert_allclose(fast.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("degree,intervals", [(0, 4), (1, 3), (2, 7), (3, 5), (4, 2)])
def test_basis_matches_scipy(degree, intervals):
    grid = EdgeGrid(degree=degree, intervals=intervals, range_lo=-2.0, range_hi=0.5)
    xs = np.linspace(-2.0, 0.5, 37, endpoint=False)
    ref = BSpline.design_matrix(xs, grid.knots, degree).toarray()
    np.testing.assert_allclose(basis_eval(grid, xs), ref, atol=1e-13)


def test_basis_midpoint_partition():
    grid = EdgeGrid()
    assert basis_eval(grid, 0.0).sum() == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("x", [1.0 + 10, -1.0 - 10, 1e6])
def test_basis_vanishes_outside_support(x):
    grid = EdgeGrid()
    assert not basis_eval(grid, x).any()
    assert not basis_deriv(grid, x).any()


@settings(max_examples=200, deadline=None)
@given(degree=st.integers(0, 5), intervals=st.integers(1, 12),
       lo=st.floats(-5, 5), width=st.floats(0.1, 10), u=st.floats(0, 1))
def test_partition_of_unity(degree, intervals, lo, width, u):
    grid = EdgeGrid(degree, intervals, lo, lo + width)
    x = lo + u * width
    values = basis_eval(grid, x)
    assert values.shape == (intervals + degree,)
    assert abs(values.sum() - 1.0) <= 1e-12


def test_basis_values_batch_shape():
    grid = EdgeGrid()
    assert basis_eval(grid, np.zeros((4, 3))).shape == (4, 3, grid.n_basis)


def test_derivative_sums_to_zero():
    grid = EdgeGrid()
    for x in np.linspace(-0.95, 0.95, 21):
        assert abs(basis_deriv(grid, x).sum()) <= 1e-10


def test_derivative_matches_central_differences():
    grid = EdgeGrid()
    x, h = 0.3, 1e-6
    fd = (basis_eval(grid, x + h) - basis_eval(grid, x - h)) / (2 * h)
    np.testing.assert_allclose(basis_deriv(grid, x), fd, rtol=1e-5, atol=1e-9)


def test_derivative_matches_scipy():
    grid = EdgeGrid(degree=3, intervals=5)
    xs = np.linspace(-1.0, 1.0, 50, endpoint=False)
    for j in range(grid.n_basis):
        element = BSpline.basis_element(grid.knots[j : j + grid.degree + 2], extrapolate=False)
        ref = np.nan_to_num(element.derivative()(xs))
        np.testing.assert_allclose(basis_deriv(grid, xs)[:, j], ref, atol=1e-12)


def test_silu_values():
    assert silu(0.0) == 0.0
    assert silu(1.0) == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), abs=1e-15)
    assert silu(1.0) == pytest.approx(0.731058578, abs=1e-9)
    big = silu(np.array([-1000.0, 1000.0]))
    assert np.isfinite(big).all() and big[1] == 1000.0


def test_silu_derivative_matches_central_differences():
    x, h = 0.7, 1e-5
    fd = (silu(x + h) - silu(x - h)) / (2 * h)
    assert abs(silu_deriv(x) - fd) < 1e-8


def test_activation_base_only_at_zero():
    grid = EdgeGrid()
    edge = EdgeActivation(1.0, 0.0, np.ones(grid.n_basis))
    assert activation_eval(edge, grid, 0.0) == 0.0


def test_activation_zero_coefficients():
    grid = EdgeGrid()
    edge = EdgeActivation(0.0, 1.3, np.zeros(grid.n_basis))
    for x in (-3.0, -0.2, 0.0, 0.9, 7.0):
        assert activation_eval(edge, grid, x) == 0.0


def test_activation_matches_independent_evaluation():
    grid = EdgeGrid()
    coeffs = np.random.default_rng(3).normal(0, 0.1, grid.n_basis)
    edge = EdgeActivation(1.0, 1.0, coeffs)
    expected = 0.4 / (1.0 + math.exp(-0.4)) + float(np.dot(coeffs, naive_basis(grid, 0.4)))
    assert activation_eval(edge, grid, 0.4) == pytest.approx(expected, abs=1e-14)


def test_activation_outside_grid_is_base_only():
    grid = EdgeGrid()
    edge = EdgeActivation(0.7, 2.0, np.random.default_rng(0).normal(size=grid.n_basis))
    assert activation_eval(edge, grid, 25.0) == pytest.approx(0.7 * float(silu(25.0)))


def test_activation_affine_in_coefficients():
    grid = EdgeGrid()
    rng = np.random.default_rng(1)
    coeffs = rng.normal(size=grid.n_basis)
    xs = np.linspace(-1, 1, 11)
    one = activation_eval(EdgeActivation(0.0, 1.5, coeffs), grid, xs)
    two = activation_eval(EdgeActivation(0.0, 1.5, 2 * coeffs), grid, xs)
    np.testing.assert_array_equal(two, 2 * one)


def test_activation_is_not_homogeneous():
    grid = EdgeGrid()
    rng = np.random.default_rng(11)
    for _ in range(5):  # ties are a measure-zero event; retry just in case
        edge = EdgeActivation(1.0, 1.0, rng.normal(0, 0.1, grid.n_basis))
        gap = abs(activation_eval(edge, grid, 1.0) - 2 * activation_eval(edge, grid, 0.5))
        if gap > 0:
            break
    assert gap > 0


def test_edge_validation():
    grid = EdgeGrid()
    with pytest.raises(ValueError):
        EdgeActivation(np.nan, 1.0, np.zeros(grid.n_basis))
    with pytest.raises(ValueError):
        activation_eval(EdgeActivation(1.0, 1.0, np.zeros(3)), grid, 0.0)
