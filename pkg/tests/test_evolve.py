import numpy as np
import pytest

from matzoh.evolve import (
    BoundaryCondition,
    CFLError,
    EvolveConfig,
    NumericalError,
    cfl_dt,
    run,
    step,
    trapezoid_mass,
)
from matzoh.grid import DomainMask, Grid, ScalarField
from matzoh.operators import QuasiLinearOperator

HEAT1 = QuasiLinearOperator(1)
HEAT2 = QuasiLinearOperator(2)
ZERO = BoundaryCondition("dirichlet", values=0.0)


def sine_error(n):
    g = Grid.from_bounds([(0, np.pi)], np.pi / n)
    u0 = ScalarField.from_function(g, np.sin, time=0.0)
    series = run(u0, HEAT1, ZERO, EvolveConfig([0.5]))
    x = g.axes()[0]
    return np.abs(series.snapshots[-1].values - np.exp(-0.5) * np.sin(x)).max()


def test_eigenmode_decay_converges_second_order():
    e1, e2 = sine_error(40), sine_error(80)
    assert e1 < 1e-3
    assert 3.3 < e1 / e2 < 4.7


def test_drift_profile_is_reproduced_exactly():
    g = Grid.from_bounds([(-1, 1)], 0.05)
    u0 = ScalarField.from_function(g, lambda x: 0.5 * x**2, time=0.0)
    X = g.axes()[0]
    bc = BoundaryCondition("dirichlet", profile=lambda t: t + 0.5 * X**2)
    series = run(u0, HEAT1, bc, EvolveConfig([0.1, 0.2, 0.3]))
    for snap in series.snapshots:
        assert np.allclose(snap.values, snap.time + 0.5 * X**2, atol=1e-12)


def test_neumann_conserves_trapezoid_mass():
    g = Grid.from_bounds([(0, 1), (0, 2)], 0.05)
    u0 = ScalarField.from_function(g, lambda x, y: np.exp(-10 * ((x - 0.3) ** 2 + (y - 1.2) ** 2)), time=0.0)
    series = run(u0, HEAT2, BoundaryCondition("neumann"), EvolveConfig([0.05, 0.1]))
    m0 = trapezoid_mass(u0)
    for snap in series.snapshots:
        assert abs(trapezoid_mass(snap) - m0) <= 1e-12 * abs(m0)


def test_neumann_requires_box():
    g = Grid.from_bounds([(-1, 1), (-1, 1)], 0.1)
    X, Y = g.mesh()
    u0 = ScalarField.from_function(g, lambda x, y: x, DomainMask.from_inside(X**2 + Y**2 < 0.8))
    with pytest.raises(ValueError, match="box"):
        step(u0, HEAT2, BoundaryCondition("neumann"), 1e-4)


def test_fixed_dt_above_bound_is_rejected():
    g = Grid.from_bounds([(0, 1)], 0.1)
    u0 = ScalarField.from_function(g, np.sin, time=0.0)
    bound = cfl_dt(HEAT1, u0, 1.0)
    assert bound == pytest.approx(0.01 / 2)
    with pytest.raises(CFLError):
        run(u0, HEAT1, ZERO, EvolveConfig([0.1], dt=1.5 * bound))
    run(u0, HEAT1, ZERO, EvolveConfig([0.1], dt=0.9 * bound))


def test_overflow_is_reported():
    g = Grid.from_bounds([(0, 1)], 0.1)
    u0 = ScalarField(g, DomainMask.box(g.shape), np.array([0.0, 1e308, -1e308] * 3 + [0.0, 0.0]), 0.0)
    with np.errstate(all="ignore"), pytest.raises(NumericalError):
        step(u0, HEAT1, ZERO, 1e-3)


def test_snapshot_at_initial_time_is_initial():
    g = Grid.from_bounds([(0, np.pi)], np.pi / 20)
    u0 = ScalarField.from_function(g, np.sin, time=0.0)
    series = run(u0, HEAT1, ZERO, EvolveConfig([0.0, 0.01]))
    expected = u0.values.copy()
    expected[[0, -1]] = 0.0  # boundary data is imposed at the start
    assert np.array_equal(series.snapshots[0].values, expected)
    assert series.times.tolist() == [0.0, 0.01]


def test_p_laplace_cfl_follows_gradient():
    g = Grid.from_bounds([(0, 1)], 0.1)
    op = QuasiLinearOperator(1, "p_laplace", p=4.0)
    slow = ScalarField.from_function(g, lambda x: x)
    fast = ScalarField.from_function(g, lambda x: 3 * x)
    # Lambda = (p - 1) |u'|^{p-2}
    assert cfl_dt(op, slow, 1.0) == pytest.approx(0.01 / (2 * 3))
    assert cfl_dt(op, fast, 1.0) == pytest.approx(0.01 / (2 * 3 * 9))


def test_config_validation():
    with pytest.raises(ValueError):
        EvolveConfig([0.2, 0.1])
    with pytest.raises(ValueError):
        EvolveConfig([0.1], dt=-1)
    with pytest.raises(ValueError):
        BoundaryCondition("dirichlet")
