import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import TIMES, analytic_series
from matzoh.grid import Grid
from matzoh.invariance import (
    EtaTable,
    LevelResolutionError,
    MonotonicityError,
    auto_bins,
    build_eta,
    default_bins,
    determinant_D,
    determinant_xi,
    eta_partials,
    invariance_residual,
    log_form,
    reconstruct,
)

S = np.linspace(0.1, 1.0, 40)
T = np.linspace(0.0, 1.0, 21)


def gauss_table(s, t, T0=0.1):
    """Level function of the 1D heat kernel started at time T0."""
    Tt = T0 + t
    return (4 * np.pi * Tt) ** -0.5 * (s * np.sqrt(4 * np.pi * T0)) ** (T0 / Tt)


def test_default_bins_range():
    assert default_bins(1) == 4
    assert default_bins(10_000) == 100
    assert default_bins(10**7) == 256


def test_auto_bins_backs_off_on_clustered_levels():
    g = Grid.from_bounds([(-1, 1), (-1, 1)], 0.04)
    x = g.mesh()[0].ravel()
    n = auto_bins(0.5 * x**2, 256)
    idx = np.clip((0.5 * x**2 / (0.5 / n)).astype(int), 0, n - 1)
    assert np.mean(np.bincount(idx, minlength=n) == 0) <= 0.2
    assert auto_bins(np.linspace(0, 1, 10_000), 100) == 100


def test_eta_table_of_eigenmode(sin_series):
    table = build_eta(sin_series)
    ok = table.usable
    expected = np.exp(-(table.times - table.tau))[None, :] * table.s_bins[ok, None]
    assert np.allclose(table.eta[ok], expected, atol=1e-12)
    assert invariance_residual(sin_series).max() < 1e-12


def test_reconstruct_round_trip(sin_series):
    table = build_eta(sin_series)
    phi = sin_series.snapshots[0].active_values()
    U = np.stack([s.active_values() for s in sin_series.snapshots])
    assert np.abs(reconstruct(table, phi) - U).max() < 1e-12


def test_two_modes_are_not_invariant():
    g = Grid.from_bounds([(0, np.pi)], np.pi / 200)
    series = analytic_series(g, lambda x, t: np.exp(-t) * np.sin(x) + 0.5 * np.exp(-4 * t) * np.sin(2 * x), TIMES)
    res = invariance_residual(series)
    assert res[0] < 1e-12
    assert res[-1] > 0.05


def test_too_few_snapshots():
    g = Grid.from_bounds([(0, 1)], 0.01)
    with pytest.raises(ValueError, match="4 snapshots"):
        build_eta(analytic_series(g, lambda x, t: x + t, [0, 1, 2]))


def test_empty_bins_are_reported():
    g = Grid.from_bounds([(0, 1)], 0.1)
    series = analytic_series(g, lambda x, t: x**8 + t, [0, 1, 2, 3])
    with pytest.raises(LevelResolutionError, match="bins are empty"):
        build_eta(series, n_bins=40)


def test_constant_phi():
    g = Grid.from_bounds([(0, 1)], 0.1)
    with pytest.raises(LevelResolutionError):
        build_eta(analytic_series(g, lambda x, t: 0 * x + t, [0, 1, 2, 3]))


@pytest.mark.parametrize("fn", [lambda s, t: np.exp(-t) * s, lambda s, t: s + t])
def test_separable_tables_have_zero_determinant(fn):
    p = eta_partials(EtaTable.from_function(fn, S, T))
    assert np.nanmax(np.abs(determinant_D(p).D)) <= 1e-10
    assert not determinant_D(p).any_significant


def test_power_law_affine_table_is_not_significant():
    p = eta_partials(EtaTable.from_function(lambda s, t: s / (1 + 2 * t) + 3, S, T))
    det = determinant_D(p)
    assert np.nanmax(np.abs(det.normalized)) < 1e-8
    assert not det.any_significant


def test_gaussian_table_determinant_matches_closed_form():
    T0 = 0.1
    s = np.linspace(0.3, 1.2, 181)
    t = np.linspace(0.0, 0.1, 101)
    p = eta_partials(EtaTable.from_function(gauss_table, s, t))
    S_, T_ = np.meshgrid(s, t, indexing="ij")
    exact = -p.eta_s**2 * T0 / ((T0 + T_) ** 2 * S_)
    inner = p.interior()
    assert np.max(np.abs(determinant_D(p).D - exact)[inner] / np.abs(exact[inner])) < 1e-2
    assert determinant_D(p).bin_significant[1:-1].all()
    assert np.allclose(log_form(p)[inner], (determinant_D(p).D / p.eta_s**2)[inner], rtol=2e-2)


def test_determinant_xi_reduces_bitwise_at_zero_degree():
    p = eta_partials(EtaTable.from_function(gauss_table, S, T), alpha=0.0)
    a, b = determinant_D(p), determinant_xi(p)
    assert np.array_equal(a.D, b.D, equal_nan=True)
    assert np.array_equal(a.significant, b.significant)
    assert np.array_equal(a.f, b.f, equal_nan=True)
    assert np.array_equal(a.g, b.g, equal_nan=True)


@given(st.floats(-0.9, 3.0))
def test_xi_determinant_identity(alpha):
    p = eta_partials(EtaTable.from_function(gauss_table, S, T), alpha=alpha)
    det = p.xi * p.xi_st - p.xi_s * p.xi_t
    rhs = (alpha + 1) * p.eta_s ** (2 * alpha) * determinant_D(p).D
    assert np.allclose(det, rhs, rtol=1e-9, atol=1e-12 * np.nanmax(np.abs(rhs)))


@given(st.floats(0.1, 10), st.floats(-5, 5))
def test_normalised_determinant_is_affine_invariant(c, d):
    base = determinant_D(eta_partials(EtaTable.from_function(gauss_table, S, T)))
    scaled_s = c * S + d
    fn = lambda s, t: c * gauss_table((s - d) / c, t) + d
    moved = determinant_D(eta_partials(EtaTable.from_function(fn, scaled_s, T)))
    inner = np.isfinite(base.normalized) & np.isfinite(moved.normalized)
    assert np.allclose(moved.normalized[inner], base.normalized[inner], rtol=1e-6)
    assert np.array_equal(moved.bin_significant, base.bin_significant)


def test_decreasing_table_is_rejected():
    with pytest.raises(MonotonicityError) as err:
        eta_partials(EtaTable.from_function(lambda s, t: -s * np.exp(-t), S, T))
    assert 0 in err.value.bins
