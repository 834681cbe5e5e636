import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from shearlayer.numerics import (
    BoundaryLayerGrid,
    Field2D,
    GridError,
    LinearSystem,
    PhysicalGrid,
    SolverFailure,
    diff,
    extend_x,
    integrate,
    read_field_values,
    solve_linear,
    write_field_csv,
)


def test_diff_quadratic_exact():
    g = PhysicalGrid(1.0, 16, 16)
    f = Field2D.from_function(g, lambda x, y: y**2)
    d = diff(f, "y")
    X, Y = g.mesh()
    assert np.abs(d.values - 2 * Y).max() < 1e-12


@pytest.mark.parametrize("axis,order", [("x", 1), ("x", 2), ("y", 1), ("y", 2)])
def test_diff_constant_is_zero(axis, order):
    g = PhysicalGrid(0.5, 10, 12)
    f = Field2D(g, np.full(g.shape, 3.7))
    assert np.abs(diff(f, axis, order).values).max() < 1e-10


def test_diff_sine_second_order():
    errs = []
    for ny in (64, 128):
        g = PhysicalGrid(1.0, 8, ny)
        f = Field2D.from_function(g, lambda x, y: np.sin(y))
        X, Y = g.mesh()
        errs.append(np.abs(diff(f, "y").values - np.cos(Y)).max())
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_diff_rejects_missing_axis():
    g = PhysicalGrid(1.0, 8, 8)
    with pytest.raises(GridError):
        diff(Field2D.zeros(g), "Y")


def test_integrate_examples():
    g = PhysicalGrid(1.0, 32, 32)
    assert integrate(Field2D(g, np.ones(g.shape))) == pytest.approx(2.0, abs=1e-13)
    assert integrate(Field2D.from_function(g, lambda x, y: y), ("x", 0.0)) == pytest.approx(2.0, abs=1e-13)
    g = PhysicalGrid(1.0, 16, 256)
    val = integrate(Field2D.from_function(g, lambda x, y: np.sin(np.pi * y / 2)))
    assert val == pytest.approx(4 / np.pi, abs=1e-4)


def test_integrate_off_grid_line():
    g = PhysicalGrid(1.0, 8, 8)
    with pytest.raises(GridError):
        integrate(Field2D.zeros(g), ("x", 0.13))


def test_half_line_integral_on_layer_grid():
    bg = BoundaryLayerGrid(0.5, 8, 20.0, 200, "bottom")
    f = Field2D.from_function(bg, lambda x, Y: np.exp(-Y))
    vals = integrate(f, ("Y", 0.0))
    assert np.allclose(vals, 1.0, atol=1e-3)


def test_solve_linear_identity():
    b = np.array([1.0, -2.0, 3.5])
    assert np.allclose(solve_linear(LinearSystem(sp.identity(3), b)), b)


def test_solve_linear_dirichlet_laplacian():
    A = sp.diags([[-1.0] * 3, [2.0] * 4, [-1.0] * 3], [-1, 0, 1])
    xs = np.array([1.0, -0.5, 2.0, 0.25])
    x = solve_linear(LinearSystem(A, A @ xs))
    assert np.abs(x - xs).max() < 1e-12


def test_solve_linear_singular():
    A = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(SolverFailure):
        solve_linear(LinearSystem(A, np.array([1.0, 1.0])))


def test_grid_validation():
    with pytest.raises(GridError):
        PhysicalGrid(-1.0, 8, 8)
    with pytest.raises(GridError):
        PhysicalGrid(1.0, 1, 8)


def test_field_rejects_nonfinite():
    g = PhysicalGrid(1.0, 8, 8)
    a = np.zeros(g.shape)
    a[1, 1] = np.nan
    with pytest.raises(FloatingPointError):
        Field2D(g, a)


def test_aligned_layer_grid_nodes_match_physical():
    g = PhysicalGrid(0.5, 32, 64)
    eps = 1e-2
    bg = BoundaryLayerGrid.aligned(g, eps, "bottom")
    assert bg.Y[-1] >= 20.0
    assert np.allclose(math.sqrt(eps) * bg.Y[: g.ny + 1], g.y)
    assert BoundaryLayerGrid.aligned(g, eps, "bottom", min_nY=5000).nY == 5000


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=5, max_size=5))
def test_extend_x_reproduces_quartics(coef):
    x = np.linspace(0.0, 1.0, 21)
    p = np.polynomial.Polynomial(coef)
    ext = extend_x(p(x)[:, None], 3, 4)
    xe = np.concatenate([x[0] - 0.05 * np.arange(3, 0, -1), x, x[-1] + 0.05 * np.arange(1, 5)])
    assert np.allclose(ext[:, 0], p(xe), atol=1e-9 * (1 + np.abs(coef).max()))


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_second_derivative_exact_on_quadratics(a, b, c):
    g = PhysicalGrid(1.0, 9, 10)
    f = Field2D.from_function(g, lambda x, y: a * x**2 + b * x * y + c * y**2)
    assert np.allclose(diff(f, "x", 2).values, 2 * a, atol=1e-8)
    assert np.allclose(diff(f, "y", 2).values, 2 * c, atol=1e-8)


def test_field_csv_roundtrip(tmp_path):
    g = PhysicalGrid(0.5, 8, 10)
    f = Field2D.from_function(g, lambda x, y: np.sin(x) * y)
    write_field_csv(tmp_path / "f.csv", f, ("# tag: 1",))
    vals, header = read_field_values(tmp_path / "f.csv")
    assert np.array_equal(vals, f.values)
    assert "# tag: 1" in header
