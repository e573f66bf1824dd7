import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from matzoh.grid import (
    BOUNDARY,
    EXTERIOR,
    INTERIOR,
    DomainMask,
    Grid,
    GridError,
    OutsideDomainError,
    ScalarField,
    TimeSeriesField,
    gradient,
    hessian,
    interpolate,
    jet_supported,
    laplacian,
    level_set_points,
    local_jet,
    read_field,
    read_series,
    write_field,
    write_series,
)

coef = st.floats(-3, 3, allow_nan=False)


def disk_mask(grid, radius=0.8):
    X, Y = grid.mesh()
    return DomainMask.from_inside(X**2 + Y**2 <= radius**2)


def second_order_nodes(active):
    """Active nodes with a central or two-point one-sided stencil along every axis."""
    ok = active.copy()
    for axis in range(active.ndim):
        p = np.pad(active, [(2, 2) if k == axis else (0, 0) for k in range(active.ndim)])
        n = active.shape[axis]
        sh = {k: np.take(p, np.arange(2 + k, 2 + k + n), axis=axis) for k in (-2, -1, 1, 2)}
        ok &= (sh[-1] & sh[1]) | (sh[1] & sh[2]) | (sh[-1] & sh[-2])
    return ok


def test_from_bounds_snaps_node_count():
    g = Grid.from_bounds([(0, 1), (-1, 1)], 0.25)
    assert g.shape == (5, 9)
    assert g.axes()[1][-1] == pytest.approx(1.0)


def test_grid_rejects_bad_spacing():
    with pytest.raises(GridError):
        Grid((3,), (0.0,), (0.0,))


def test_mask_flags_on_disk():
    g = Grid.from_bounds([(-1, 1), (-1, 1)], 0.1)
    m = disk_mask(g)
    assert m.flags[10, 10] == INTERIOR
    assert m.flags[0, 0] == EXTERIOR
    assert (m.flags == BOUNDARY).any()
    # every interior node has only active neighbours
    act = np.pad(m.active, 1)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            nb = act[1 + di : 1 + di + g.shape[0], 1 + dj : 1 + dj + g.shape[1]]
            assert nb[m.interior].all()


def test_box_normals_point_outward():
    m = DomainMask.box((5, 4))
    assert np.allclose(m.normals[0, 2], [-1, 0])
    assert np.allclose(m.normals[4, 2], [1, 0])
    assert np.allclose(m.normals[2, 2], 0)


def test_scalar_field_exterior_is_nan_and_finite_inside():
    g = Grid.from_bounds([(-1, 1), (-1, 1)], 0.1)
    f = ScalarField.from_function(g, lambda x, y: x + y, disk_mask(g))
    assert np.isnan(f.values[0, 0])
    with pytest.raises(GridError):
        ScalarField(g, DomainMask.box(g.shape), np.full(g.shape, np.inf))


def test_time_series_requires_increasing_times():
    g = Grid.from_bounds([(0, 1)], 0.25)
    f = ScalarField.from_function(g, lambda x: x)
    with pytest.raises(GridError):
        TimeSeriesField((f, f), [0.1, 0.1])


@given(coef, coef, coef, coef, coef, coef)
def test_derivatives_exact_on_quadratics_with_mask(a, b, c, d, e, k):
    g = Grid.from_bounds([(-1, 1), (-1, 1)], 0.1)
    f = ScalarField.from_function(g, lambda x, y: a * x * x + b * x * y + c * y * y + d * x + e * y + k, disk_mask(g))
    act = second_order_nodes(f.mask.active)
    assert act.sum() > 0.9 * f.mask.active.sum()
    X, Y = g.mesh()
    grad, hess = gradient(f), hessian(f)
    assert np.allclose(grad[act][:, 0], (2 * a * X + b * Y + d)[act], atol=1e-9)
    assert np.allclose(grad[act][:, 1], (b * X + 2 * c * Y + e)[act], atol=1e-9)
    assert np.allclose(hess[act], [[2 * a, b], [b, 2 * c]], atol=1e-8)


def test_laplacian_second_order():
    errs = []
    for h in (0.1, 0.05):
        g = Grid.from_bounds([(0, 1), (0, 1)], h)
        f = ScalarField.from_function(g, lambda x, y: np.sin(2 * x) * np.cos(y))
        lap = laplacian(f).values
        exact = -5 * np.sin(2 * g.mesh()[0]) * np.cos(g.mesh()[1])
        errs.append(np.abs(lap - exact)[f.mask.interior].max())
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_small_axis_rejected():
    g = Grid((2, 5), (0, 0), (1, 1))
    with pytest.raises(GridError, match="axis too small"):
        gradient(ScalarField.from_function(g, lambda x, y: x))


def test_interpolate_bilinear_exact_and_outside():
    g = Grid.from_bounds([(0, 1), (0, 2)], 0.25)
    f = ScalarField.from_function(g, lambda x, y: 1 + 2 * x - y + 3 * x * y)
    assert interpolate(f, [0.3, 1.1]) == pytest.approx(1 + 0.6 - 1.1 + 3 * 0.33)
    with pytest.raises(OutsideDomainError, match="outside domain"):
        interpolate(f, [1.5, 0.0])


def test_level_set_points_lie_on_circle():
    g = Grid.from_bounds([(-1, 1), (-1, 1)], 0.02)
    f = ScalarField.from_function(g, lambda x, y: np.hypot(x, y))
    pts = level_set_points(f, 0.5)
    assert len(pts) > 100
    assert np.abs(np.linalg.norm(pts, axis=1) - 0.5).max() < 0.02**2


def test_level_set_out_of_range_is_empty():
    g = Grid.from_bounds([(0, 1)], 0.1)
    f = ScalarField.from_function(g, lambda x: x)
    assert level_set_points(f, 2.0).shape == (0, 1)


@given(nx=st.integers(3, 6), ny=st.integers(3, 6), scale=st.floats(-1e3, 1e3), timed=st.booleans())
def test_field_file_round_trip(nx, ny, scale, timed, tmp_path_factory):
    g = Grid((nx, ny), (-0.5, 0.25), (0.1, 0.3))
    X, Y = g.mesh()
    mask = DomainMask.from_inside(X + Y < 0.4)
    f = ScalarField(g, mask, scale * np.sin(X * 7.1 + Y), 0.125 if timed else None)
    path = tmp_path_factory.mktemp("io") / "f.field"
    write_field(f, path)
    back = read_field(path)
    assert back.grid == g and back.mask == mask and back.time == f.time
    assert np.array_equal(np.nan_to_num(back.values, nan=7.0), np.nan_to_num(f.values, nan=7.0))
    path2 = path.with_name("g.field")
    write_field(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_series_round_trip(tmp_path, sin_series):
    write_series(sin_series, tmp_path)
    back = read_series(tmp_path)
    assert np.array_equal(back.times, sin_series.times)
    assert np.array_equal(back.stack(), sin_series.stack())


def test_local_jet_exact_on_quartic():
    g = Grid.from_bounds([(-1, 1), (-1, 1)], 0.1)
    f = ScalarField.from_function(g, lambda x, y: x**4 - 2 * x**2 * y + y**3 + x * y)
    p = np.array([[0.123, -0.271], [0.5, 0.333]])
    v, grad, hess = local_jet(f, p)
    x, y = p.T
    assert np.allclose(v, x**4 - 2 * x**2 * y + y**3 + x * y, atol=1e-11)
    assert np.allclose(grad[:, 0], 4 * x**3 - 4 * x * y + y, atol=1e-9)
    assert np.allclose(grad[:, 1], -2 * x**2 + 3 * y**2 + x, atol=1e-9)
    assert np.allclose(hess[:, 0, 1], -4 * x + 1, atol=1e-7)
    assert np.allclose(hess[:, 1, 1], 6 * y, atol=1e-7)


def test_local_jet_gradient_converges_fourth_order():
    p = np.array([[0.2137, -0.1313]])
    errs = []
    for h in (0.1, 0.05):
        g = Grid.from_bounds([(-1, 1), (-1, 1)], h)
        f = ScalarField.from_function(g, lambda x, y: np.exp(x) * np.sin(2 * y))
        _, grad, _ = local_jet(f, p)
        x, y = p[0]
        errs.append(np.linalg.norm(grad[0] - [np.exp(x) * np.sin(2 * y), 2 * np.exp(x) * np.cos(2 * y)]))
    assert errs[0] / errs[1] > 10


def test_local_jet_refuses_stencils_touching_exterior():
    g = Grid.from_bounds([(-1, 1), (-1, 1)], 0.1)
    f = ScalarField.from_function(g, lambda x, y: x, disk_mask(g))
    assert jet_supported(f, [[0.0, 0.0]]).all()
    assert not jet_supported(f, [[0.75, 0.0]]).any()
    with pytest.raises(OutsideDomainError):
        local_jet(f, [[0.75, 0.0]])
