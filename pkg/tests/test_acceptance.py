"""End-to-end acceptance checks, one test per criterion.

Each test records its measured quantities with ``record_property``; the
terminal summary prints one PASS/FAIL line per criterion.
"""

import time

import numpy as np
import pytest

from conftest import TIMES, analytic_series, heat_kernel
from matzoh.classify import classify, fit_time_factor, ode_residual, time_factor
from matzoh.cli import main
from matzoh.config import RunConfig, build_series
from matzoh.convex import ConvexBody
from matzoh.grid import DomainMask, Grid, ScalarField, laplacian_values, level_set_points, local_jet
from matzoh.invariance import EtaTable, determinant_D, eta_partials, invariance_residual
from matzoh.isoparametric import (
    aniso_geometry,
    classify_surface,
    fit_gradient_function,
    geodesic_trace,
    isoparametric_residual,
    normalize_to_unit_f,
    parallelism,
)
from matzoh.operators import QuasiLinearOperator, apply_Q_values

A = np.diag([4.0, 1.0])
ELL = ConvexBody(2, "ellipsoid", A=A)


def fmt(x):
    return f"{x:.3g}"


@pytest.mark.criterion(1)
def test_eigen_split_recovery(record_property):
    start = time.perf_counter()
    cfg = RunConfig.from_dict(
        {
            "grid": {"bounds": [[0.0, np.pi]], "spacing": np.pi / 400},
            "initial": {"kind": "eigenmode"},
            "source": "evolve",
            "bc": {"kind": "dirichlet", "value": 0.0},
        }
    )
    series = build_series(cfg)
    rep = classify(series)
    elapsed = time.perf_counter() - start
    for k, v in [("branch", rep.branch), ("lambda", fmt(rep.lambda_)), ("mu", fmt(rep.mu)),
                 ("eigen_residual", fmt(rep.residuals["pde"])), ("seconds", fmt(elapsed))]:
        record_property(k, v)
    assert rep.branch == "eigen_split"
    assert abs(rep.lambda_ - 1) <= 1e-2
    assert abs(rep.mu) <= 1e-3
    assert rep.residuals["pde"] <= 1e-2
    assert elapsed < 30


@pytest.mark.criterion(2)
def test_linear_drift_recovery(record_property):
    start = time.perf_counter()
    g = Grid.from_bounds([(-1, 1), (-1, 1)], 0.02)
    rep = classify(analytic_series(g, lambda x, y, t: t + 0.5 * x**2, TIMES))
    lap_err = float(np.max(np.abs(laplacian_values(rep.w) - 1)[rep.w.mask.interior]))
    evolved = build_series(
        RunConfig.from_dict(
            {"grid": {"bounds": [[-1, 1], [-1, 1]], "spacing": 0.04}, "initial": {"kind": "affine_drift"}, "source": "evolve"}
        )
    )
    rep_ev = classify(evolved)
    elapsed = time.perf_counter() - start
    for k, v in [("branch", rep.branch), ("gamma", fmt(rep.gamma)), ("lap_w_error", fmt(lap_err)),
                 ("evolved_gamma", fmt(rep_ev.gamma)), ("seconds", fmt(elapsed))]:
        record_property(k, v)
    assert rep.branch == "linear_drift" and rep_ev.branch == "linear_drift"
    assert abs(rep.gamma - 1) <= 1e-6
    assert lap_err <= 1e-6
    assert abs(rep_ev.gamma - 1) <= 5e-3
    assert elapsed < 10


@pytest.mark.criterion(3)
def test_gaussian_is_isoparametric(record_property):
    start = time.perf_counter()
    times = np.linspace(0.0, 0.1, 11)
    g1 = Grid.from_bounds([(-1, 1)], 0.004)
    rep1 = classify(analytic_series(g1, heat_kernel(1), times))
    h = 0.02
    g2 = Grid.from_bounds([(-1, 1), (-1, 1)], h)
    series2 = analytic_series(g2, heat_kernel(2), times)
    rep2 = classify(series2)
    phi = series2.snapshots[0]
    surf = classify_surface(phi, 0.5 * (phi.active_values().min() + phi.active_values().max()))
    center_err = float(np.linalg.norm(surf.center))
    elapsed = time.perf_counter() - start
    fits = [r.isoparametric.f_fit.residual for r in (rep1, rep2)] + [r.isoparametric.g_fit.residual for r in (rep1, rep2)]
    for k, v in [("branches", f"{rep1.branch}/{rep2.branch}"), ("max_fit_residual", fmt(max(fits))),
                 ("surface", surf.label), ("center_error", fmt(center_err)), ("seconds", fmt(elapsed))]:
        record_property(k, v)
    for rep in (rep1, rep2):
        assert rep.branch == "isoparametric"
        assert rep.determinant.any_significant
    assert max(fits) <= 1e-2
    assert surf.type == "sphere"
    assert center_err <= 2 * h
    assert elapsed < 60


@pytest.mark.criterion(4)
def test_determinant_dichotomy(record_property):
    s = np.linspace(0.1, 1.0, 40)
    t = np.linspace(0.0, 1.0, 21)
    tau = t[0]
    worst = 0.0
    for fn in (lambda s, t: np.exp(-(t - tau)) * s, lambda s, t: s + (t - tau)):
        worst = max(worst, float(np.nanmax(np.abs(determinant_D(eta_partials(EtaTable.from_function(fn, s, t))).D))))

    def gauss(s, t, T0=0.1):
        T = T0 + t
        return (4 * np.pi * T) ** -0.5 * (s * np.sqrt(4 * np.pi * T0)) ** (T0 / T)

    det = determinant_D(eta_partials(EtaTable.from_function(gauss, np.linspace(0.3, 1.2, 60), np.linspace(0, 0.1, 21))))
    record_property("max_abs_D_separable", fmt(worst))
    record_property("gaussian_significant_bins", f"{int(det.bin_significant.sum())}/{len(det.bin_significant)}")
    assert worst <= 1e-10
    assert det.any_significant


@pytest.mark.criterion(5)
def test_quasilinear_time_factor(record_property):
    t = np.linspace(0.0, 1.0, 1001)
    worst_lam = worst_ode = 0.0
    for alpha, lam in [(1, 3.0), (2, -0.5), (0, 2.0)]:
        a = time_factor(t, 0.0, lam, alpha)
        fit = fit_time_factor(a, t, 0.0, alpha)
        worst_lam = max(worst_lam, abs(fit.lambda_ - lam))
        worst_ode = max(worst_ode, ode_residual(a, t, alpha))
    record_property("max_lambda_error", fmt(worst_lam))
    record_property("max_ode_residual", fmt(worst_ode))
    assert worst_lam <= 1e-6
    assert worst_ode <= 1e-6


@pytest.mark.criterion(6)
def test_isoparametric_catalog(record_property):
    h = 0.04
    g = Grid.from_bounds([(-2.1, 2.1)] * 3, h)
    X, Y, Z = g.mesh()
    heat = QuasiLinearOperator(3)
    R = np.sqrt(X**2 + Y**2 + Z**2)
    rho = np.hypot(X, Y)
    e = np.array([1.0, 2.0, 2.0]) / 3
    cases = [
        ("sphere", R, (R >= 1) & (R <= 2), 1.5),
        ("spherical_cylinder(1)", rho, (rho >= 1) & (rho <= 2), 1.5),
        ("hyperplane", e[0] * X + e[1] * Y + e[2] * Z, None, 0.3),
    ]
    worst, labels = 0.0, []
    for expected, values, inside, level in cases:
        mask = DomainMask.box(g.shape) if inside is None else DomainMask.from_inside(inside)
        phi = ScalarField(g, mask, np.where(mask.active, values, np.nan))
        res = isoparametric_residual(phi, heat)
        worst = max(worst, res.f_fit.residual, res.g_fit.residual)
        labels.append(classify_surface(phi, level).label)
    record_property("max_residual", fmt(worst))
    record_property("types", "/".join(labels))
    assert worst <= 1e-3
    assert labels == [c[0] for c in cases]


@pytest.mark.criterion(7)
def test_anisotropic_identities(record_property, ellipse_field):
    start = time.perf_counter()
    f_fit = fit_gradient_function(ellipse_field, ELL)
    euler = ident = shape = trace = spread = 0.0
    for level in (0.7, 1.0, 1.5):
        pts = level_set_points(ellipse_field, level)[::7]
        _, grad, _ = local_jet(ellipse_field, pts)
        euler = max(euler, float(np.max(np.abs(np.einsum("ni,ni->n", grad, ELL.dH(grad)) - 2 * ELL.H(grad)) / (2 * ELL.H(grad)))))
        geo = aniso_geometry(ellipse_field, pts, ELL, f_fit)
        ident = max(ident, float(geo.identity_residuals.max()))
        shape = max(shape, float(geo.shape_residual.max()))
        trace = max(trace, geo.trace_mismatch)
        spread = max(spread, float(np.std(geo.M) / abs(np.mean(geo.M))))
    elapsed = time.perf_counter() - start
    for k, v in [("euler", fmt(euler)), ("identities", fmt(ident)), ("shape", fmt(shape)),
                 ("trace_mismatch", fmt(trace)), ("M_spread", fmt(spread)), ("seconds", fmt(elapsed))]:
        record_property(k, v)
    assert euler <= 1e-12
    assert ident <= 1e-4
    assert shape <= 1e-4
    assert trace <= 1e-3
    assert spread <= 1e-2
    assert elapsed < 30


@pytest.mark.criterion(8)
def test_geodesics_are_parallel_lines(record_property, ellipse_field):
    psi = normalize_to_unit_f(ellipse_field, fit_gradient_function(ellipse_field, ELL))
    th = np.linspace(0, 2 * np.pi, 20, endpoint=False)
    seeds = np.stack([2 * np.cos(th), np.sin(th)], axis=1)
    traces = [geodesic_trace(psi, y, ELL, 0.3) for y in seeds]
    straight = max(t.straightness for t in traces)
    rate = max(t.max_rate_error for t in traces)
    par = parallelism(traces)
    for k, v in [("straightness", fmt(straight)), ("rate_error", fmt(rate)), ("parallelism", fmt(par)),
                 ("truncated", sum(t.truncated for t in traces))]:
        record_property(k, v)
    assert not any(t.truncated for t in traces)
    assert straight <= 1e-6
    assert rate <= 1e-3
    assert par <= 1e-4


@pytest.mark.criterion(9)
def test_reductions(record_property, sin_series, gauss1_series):
    g = Grid.from_bounds([(0.2, 1.2), (0.1, 0.9)], 0.02)
    field = ScalarField.from_function(g, lambda x, y: np.exp(x) * np.cos(3 * y) + x * y**2)
    lap = laplacian_values(field)
    h_ball, _ = apply_Q_values(QuasiLinearOperator(2, "h_laplace", body=ConvexBody(2)), field)
    np2, _ = apply_Q_values(QuasiLinearOperator(2, "normalized_p_laplace", p=2.0), field)
    same = []
    for series in (sin_series, gauss1_series):
        a, b = classify(series, method="heat"), classify(series, method="generic")
        same.append(
            (a.branch, a.lambda_, a.mu, a.gamma, a.residuals) == (b.branch, b.lambda_, b.mu, b.gamma, b.residuals)
            and np.array_equal(a.determinant.D, b.determinant.D, equal_nan=True)
        )
    record_property("ball_bitwise", np.array_equal(h_ball, lap))
    record_property("p2_bitwise", np.array_equal(np2, lap))
    record_property("paths_identical", all(same))
    assert np.array_equal(h_ball, lap)
    assert np.array_equal(np2, lap)
    assert all(same)


@pytest.mark.criterion(10)
def test_negative_control(record_property, tmp_path):
    g = Grid.from_bounds([(0, np.pi)], np.pi / 400)
    series = analytic_series(g, lambda x, t: np.exp(-t) * np.sin(x) + np.exp(-4 * t) * np.sin(2 * x), TIMES)
    res = invariance_residual(series)
    late = res[series.times >= 0.5]
    cfg = tmp_path / "two_mode.json"
    cfg.write_text(
        '{"grid": {"bounds": [[0.0, 3.141592653589793]], "spacing": 0.007853981633974483},'
        ' "initial": {"kind": "eigenmode", "modes": [{"k": [1]}, {"k": [2]}]}, "source": "analytic"}'
    )
    code = main(["run", "--config", str(cfg), "--report", str(tmp_path / "r.json")])
    record_property("min_late_residual", fmt(late.min()))
    record_property("exit_code", code)
    assert np.all(late > 0.05)
    assert code == 2
