"""Branch decision for series with time-invariant level sets.

The pipeline is: invariance gate, determinant test on the level function
``eta(s, t)``, then either the isoparametric hand-off or an affine fit
``eta = a(t) s + b(t)`` whose time factor decides between an eigen-split
``u = a(t) phi_lambda + mu`` and a linear drift ``u = gamma (t - tau) + w``.

Recovered profiles are relative to the reference time ``tau`` (the first
snapshot): ``phi_lambda = phi - mu`` and ``w = phi``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .grid import ScalarField, TimeSeriesField, gradient
from .invariance import (
    D_FLOOR,
    D_NOISE_FACTOR,
    TOL_INV,
    DeterminantResult,
    EtaTable,
    auto_bins,
    build_eta,
    default_bins,
    determinant_D,
    determinant_xi,
    eta_partials,
    invariance_residual,
)
from .isoparametric import IsoparametricResult, isoparametric_residual
from .operators import G_FLOOR, QuasiLinearOperator, apply_Q_values

log = logging.getLogger(__name__)

BRANCHES = ("isoparametric", "eigen_split", "linear_drift", "mixed", "constant")


class NotInvariantError(ValueError):
    def __init__(self, residuals: np.ndarray, tol: float):
        worst = float(np.max(residuals))
        super().__init__(f"not equipotential-invariant: residual {worst:.3g} exceeds {tol:g}")
        self.residuals = residuals
        self.tol = tol


class TimeFactorError(ValueError):
    pass


@dataclass
class ClassifyConfig:
    n_bins: int | None = None
    tol_inv: float = TOL_INV
    tol_affine: float = 1e-3
    affine_noise_factor: float = 10.0
    d_floor: float = D_FLOOR
    d_factor: float = D_NOISE_FACTOR
    lambda_sigma: float = 3.0
    lambda_floor: float = 1e-9
    min_run: int = 2
    min_interval_bins: int = 4
    tol_iso: float = 1e-2
    constant_tol: float = 1e-12


# --- affine level function and time factor ----------------------------------------


@dataclass
class AffineEtaFit:
    times: np.ndarray
    a: np.ndarray
    b: np.ndarray
    residual: np.ndarray  # per time: weighted RMS deviation / range of eta

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residual))


def fit_affine_eta(table: EtaTable, bins=None) -> AffineEtaFit:
    """Per time, count-weighted least-squares line through ``(s_k, eta(s_k, t))``."""
    use = table.usable & np.isfinite(table.eta).all(axis=1)
    if bins is not None:
        sel = np.zeros_like(use)
        sel[np.asarray(bins)] = True
        use &= sel
    if use.sum() < 2:
        raise ValueError("affine fit needs at least 2 usable bins")
    s = table.s_bins[use]
    w = np.sqrt(table.counts[use].astype(float))
    X = np.column_stack([s, np.ones_like(s)]) * w[:, None]
    E = table.eta[use]
    coef, *_ = np.linalg.lstsq(X, E * w[:, None], rcond=None)
    a, b = coef
    fitted = np.outer(s, a) + b
    weights = table.counts[use].astype(float)
    rms = np.sqrt(np.sum(weights[:, None] * (E - fitted) ** 2, axis=0) / weights.sum())
    rng = E.max(axis=0) - E.min(axis=0)
    resid = np.divide(rms, rng, out=np.zeros_like(rms), where=rng > 0)
    return AffineEtaFit(np.asarray(table.times, dtype=float), a, b, resid)


@dataclass
class TimeFactorFit:
    lambda_: float
    stderr: float
    ode_residual: float
    alpha: float


def _time_derivatives(a: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray, slice]:
    """First and second derivatives of samples; high-order central stencils on uniform times."""
    n = len(t)
    dt = np.diff(t)
    uniform = n > 2 and np.allclose(dt, dt[0], rtol=1e-9, atol=0)
    if uniform and n >= 7:
        h = dt[0]
        c1 = np.array([-1, 9, -45, 0, 45, -9, 1]) / (60 * h)
        c2 = np.array([2, -27, 270, -490, 270, -27, 2]) / (180 * h * h)
        win = np.lib.stride_tricks.sliding_window_view(a, 7)
        return win @ c1, win @ c2, slice(3, n - 3)
    if uniform and n >= 5:
        h = dt[0]
        c1 = np.array([1, -8, 0, 8, -1]) / (12 * h)
        c2 = np.array([-1, 16, -30, 16, -1]) / (12 * h * h)
        win = np.lib.stride_tricks.sliding_window_view(a, 5)
        return win @ c1, win @ c2, slice(2, n - 2)
    if n >= 3:
        d1 = np.gradient(a, t)
        d2 = np.gradient(d1, t)
        return d1[1:-1], d2[1:-1], slice(1, n - 1)
    return np.zeros(0), np.zeros(0), slice(0, 0)


def ode_residual(a: np.ndarray, times: np.ndarray, alpha: float) -> float:
    """Relative finite-difference residual of ``a^(alpha+1) a'' - (alpha+1) a^alpha a'^2 = 0``.

    Normalised by the larger of the two terms and ``max(a)^(alpha+2) / span^2``
    so that a constant factor (zero terms) does not divide noise by zero.
    """
    a = np.asarray(a, dtype=float)
    t = np.asarray(times, dtype=float)
    d1, d2, sl = _time_derivatives(a, t)
    if not len(d1):
        return 0.0
    ai = a[sl]
    t1 = ai ** (alpha + 1) * d2
    t2 = (alpha + 1) * ai**alpha * d1**2
    span = float(t[-1] - t[0])
    scale = max(float(np.max(np.abs(t1))), float(np.max(np.abs(t2))), float(np.max(a)) ** (alpha + 2) / span**2)
    return float(np.max(np.abs(t1 - t2)) / scale)


def fit_time_factor(a_samples, times, tau: float, alpha: float = 0.0) -> TimeFactorFit:
    """Rate ``lambda`` of ``a(t) = exp(-lambda (t - tau))`` (alpha = 0) or
    ``a^(-alpha) = 1 + lambda (t - tau)`` (alpha != 0), by regression through the origin."""
    a = np.asarray(a_samples, dtype=float)
    t = np.asarray(times, dtype=float)
    if np.any(a <= 0):
        raise TimeFactorError("sign change in time factor")
    x = t - tau
    y = -np.log(a) if alpha == 0 else a ** (-alpha) - 1.0
    sxx = float(x @ x)
    if sxx == 0:
        raise TimeFactorError("time factor needs samples away from tau")
    lam = float(x @ y) / sxx
    r = y - lam * x
    dof = max(len(x) - 1, 1)
    stderr = float(np.sqrt((r @ r) / dof / sxx))
    return TimeFactorFit(lam, stderr, ode_residual(a, t, alpha), float(alpha))


def time_factor(t, tau: float, lam: float, alpha: float) -> np.ndarray:
    x = np.asarray(t, dtype=float) - tau
    if alpha == 0:
        return np.exp(-lam * x)
    return (1.0 + lam * x) ** (-1.0 / alpha)


# --- classification ----------------------------------------------------------------


@dataclass
class IntervalReport:
    bins: tuple[int, int]
    s_range: tuple[float, float]
    label: str
    significant_bins: int
    lambda_: float | None = None
    mu: float | None = None
    gamma: float | None = None
    affine_residual: float = 0.0


@dataclass
class ClassificationReport:
    branch: str
    alpha: float
    tau: float
    lambda_: float | None = None
    mu: float | None = None
    gamma: float | None = None
    lambda_stderr: float = 0.0
    phi_lambda: ScalarField | None = field(default=None, repr=False)
    w: ScalarField | None = field(default=None, repr=False)
    residuals: dict = field(default_factory=dict)
    critical_levels: list = field(default_factory=list)
    intervals: list = field(default_factory=list)
    eta_table: EtaTable | None = field(default=None, repr=False)
    determinant: DeterminantResult | None = field(default=None, repr=False)
    affine: AffineEtaFit | None = field(default=None, repr=False)
    isoparametric: IsoparametricResult | None = field(default=None, repr=False)
    method: str = "generic"

    def absolute_profile(self) -> ScalarField | None:
        """``phi_lambda`` in the tau-free form ``u = exp(-lambda t) phi + mu`` (alpha = 0 only)."""
        if self.phi_lambda is None or self.alpha != 0:
            return None
        return self.phi_lambda.with_values(np.exp(self.lambda_ * self.tau) * self.phi_lambda.values)


def _longest_run(flags: np.ndarray) -> int:
    best = run = 0
    for f in flags:
        run = run + 1 if f else 0
        best = max(best, run)
    return best


def _critical(phi: ScalarField, g_floor: float) -> np.ndarray:
    grad = np.nan_to_num(gradient(phi))
    return phi.mask.interior & (np.linalg.norm(grad, axis=-1) < g_floor)


def _intervals(n_bins: int, cut_bins, min_bins: int) -> list[tuple[int, int]]:
    cuts = sorted({int(b) for b in cut_bins if 1 < b < n_bins - 2})
    edges = [-1] + cuts + [n_bins]
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        a, b = lo + 1, hi - 1
        if b - a + 1 >= min_bins:
            out.append((a, b))
    return out


def _series_range(series: TimeSeriesField) -> float:
    return max(s.value_range() for s in series.snapshots)


def classify(
    series: TimeSeriesField,
    operator: QuasiLinearOperator | None = None,
    n_bins: int | None = None,
    config: ClassifyConfig | None = None,
    method: str = "generic",
) -> ClassificationReport:
    """Decide the branch of ``series`` under ``u_t = Q u``.

    ``method="heat"`` uses the heat-equation determinant and exponential time
    factor directly (operator must have alpha = 0); ``"generic"`` uses the
    xi-determinant and the alpha-dependent time factor. Both give identical
    output for alpha = 0.
    """
    config = config or ClassifyConfig()
    op = operator or QuasiLinearOperator(series.grid.dim)
    alpha = op.alpha
    if method not in ("heat", "generic"):
        raise ValueError("method must be 'heat' or 'generic'")
    if method == "heat" and alpha != 0:
        raise ValueError("the heat path needs an alpha = 0 operator")
    tau = series.tau
    phi = series.snapshots[0]
    scale = max(1.0, float(np.abs(phi.active_values()).max()))
    report = ClassificationReport("constant", float(alpha), tau, method=method)

    if phi.value_range() <= config.constant_tol * scale:
        report.residuals = {"invariance": 0.0, "ode": 0.0, "pde": 0.0, "representation": _constant_residual(series)}
        report.mu = float(np.mean(phi.active_values()))
        return report

    n_bins = n_bins or config.n_bins or auto_bins(phi.active_values(), default_bins(int(series.mask.interior.sum())))
    inv = invariance_residual(series, n_bins)
    if np.max(inv) > config.tol_inv:
        raise NotInvariantError(inv, config.tol_inv)

    table = build_eta(series, n_bins)
    partials = eta_partials(table, None if method == "heat" else alpha)
    det = (determinant_D if method == "heat" else determinant_xi)(partials, config.d_floor, config.d_factor)
    report.eta_table, report.determinant = table, det

    g_floor = op.g_floor if op.kind != "heat" else G_FLOOR
    crit = _critical(phi, g_floor)
    lo, w = table.s_bins[0] - 0.5 * table.width, table.width
    crit_vals = phi.values[crit]
    crit_bins = np.clip(((crit_vals - lo) / w).astype(int), 0, n_bins - 1)
    report.critical_levels = sorted(float(np.mean(crit_vals[crit_bins == b])) for b in np.unique(crit_bins))
    spans = _intervals(n_bins, crit_bins, config.min_interval_bins) or [(0, n_bins - 1)]

    sigma_rel = np.max(np.nanmax(partials.sigma, axis=0) / np.maximum(np.ptp(np.nan_to_num(table.eta), axis=0), 1e-300))
    affine_tol = max(config.tol_affine, config.affine_noise_factor * float(sigma_rel))

    intervals = [_classify_interval(table, det, k0, k1, alpha, config, affine_tol) for k0, k1 in spans]
    report.intervals = intervals
    labels = {iv.label for iv in intervals}
    report.residuals = {"invariance": float(np.max(inv)), "ode": 0.0, "pde": 0.0, "representation": 0.0}

    if labels == {"isoparametric"}:
        report.branch = "isoparametric"
        regular = ~crit if op.kind != "heat" else None
        report.isoparametric = isoparametric_residual(phi, op, regular, tol=config.tol_iso)
        report.residuals["pde"] = max(report.isoparametric.f_fit.residual, report.isoparametric.g_fit.residual)
        return report
    if len(labels) > 1 or labels == {"mixed"} or not _consistent(intervals):
        report.branch = "mixed"
        report.residuals["affine"] = max(iv.affine_residual for iv in intervals)
        return report

    affine = fit_affine_eta(table, np.concatenate([np.arange(iv.bins[0], iv.bins[1] + 1) for iv in intervals]))
    report.affine = affine
    report.residuals["affine"] = affine.max_residual
    tf = fit_time_factor(affine.a, affine.times, tau, alpha)
    report.residuals["ode"] = tf.ode_residual
    report.lambda_stderr = tf.stderr
    region = phi.mask.interior & ~crit
    if _lambda_is_zero(tf, affine.times, tau, config):
        report.branch = "linear_drift"
        x = affine.times - tau
        report.gamma = float(x @ affine.b / (x @ x))
        report.lambda_ = 0.0
        report.w = phi
        qw, nodes = apply_Q_values(op, phi, region)
        report.residuals["pde"] = float(np.max(np.abs(qw[nodes] - report.gamma)) / max(1.0, abs(report.gamma)))
    else:
        report.branch = "eigen_split"
        report.lambda_ = tf.lambda_
        one_minus_a = 1.0 - affine.a
        report.mu = float(one_minus_a @ affine.b / (one_minus_a @ one_minus_a))
        report.gamma = 0.0
        report.phi_lambda = phi.with_values(phi.values - report.mu)
        rate = report.lambda_ if alpha == 0 else report.lambda_ / alpha
        qp, nodes = apply_Q_values(op, report.phi_lambda, region)
        pl = report.phi_lambda.values[nodes]
        denom = max(float(np.max(np.abs(rate * pl))), 1e-300)
        report.residuals["pde"] = float(np.max(np.abs(qp[nodes] + rate * pl)) / denom)
    report.residuals["representation"] = verify_representation(report, series)
    return report


def _classify_interval(table, det, k0, k1, alpha, config, affine_tol) -> IntervalReport:
    s_lo = float(table.s_bins[k0] - 0.5 * table.width)
    s_hi = float(table.s_bins[k1] + 0.5 * table.width)
    flags = det.bin_significant[k0 : k1 + 1]
    n_sig = int(flags.sum())
    if _longest_run(flags) >= config.min_run:
        return IntervalReport((k0, k1), (s_lo, s_hi), "isoparametric", n_sig)
    fit = fit_affine_eta(table, np.arange(k0, k1 + 1))
    if fit.max_residual > affine_tol:
        return IntervalReport((k0, k1), (s_lo, s_hi), "mixed", n_sig, affine_residual=fit.max_residual)
    tf = fit_time_factor(fit.a, fit.times, table.tau, alpha)
    if _lambda_is_zero(tf, fit.times, table.tau, config):
        x = fit.times - table.tau
        gamma = float(x @ fit.b / (x @ x))
        return IntervalReport((k0, k1), (s_lo, s_hi), "linear_drift", n_sig, 0.0, None, gamma, fit.max_residual)
    one_minus_a = 1.0 - fit.a
    mu = float(one_minus_a @ fit.b / (one_minus_a @ one_minus_a))
    return IntervalReport((k0, k1), (s_lo, s_hi), "eigen_split", n_sig, tf.lambda_, mu, 0.0, fit.max_residual)


def _consistent(intervals: list[IntervalReport], rtol: float = 1e-2) -> bool:
    """Split intervals must share parameters to be reported as one branch."""
    if len(intervals) < 2:
        return True
    for name in ("lambda_", "mu", "gamma"):
        vals = [getattr(iv, name) for iv in intervals if getattr(iv, name) is not None]
        if vals and np.ptp(vals) > rtol * max(1.0, float(np.max(np.abs(vals)))):
            return False
    return True


def _lambda_is_zero(tf: TimeFactorFit, times: np.ndarray, tau: float, config: ClassifyConfig) -> bool:
    span = float(np.max(times) - tau)
    return abs(tf.lambda_) <= max(config.lambda_sigma * tf.stderr, config.lambda_floor / max(span, 1e-300))


def _constant_residual(series: TimeSeriesField) -> float:
    U = series.stack()[:, series.mask.active]
    scale = max(1.0, float(np.abs(U).max()))
    return float(np.max(np.abs(U - U[0])) / scale)


def verify_representation(report: ClassificationReport, series: TimeSeriesField) -> float:
    """Max over nodes and times of ``|u - reconstruction| / range(u(., t))``."""
    act = series.mask.active
    worst = 0.0
    for snap, t in zip(series.snapshots, series.times):
        if report.branch == "eigen_split":
            a = time_factor(t, report.tau, report.lambda_, report.alpha)
            recon = a * report.phi_lambda.values[act] + report.mu
        elif report.branch == "linear_drift":
            recon = report.w.values[act] + report.gamma * (t - report.tau)
        else:
            raise ValueError("representation is defined for eigen_split and linear_drift only")
        u = snap.values[act]
        rng = max(float(u.max() - u.min()), 1e-300)
        worst = max(worst, float(np.max(np.abs(u - recon)) / rng))
    return worst
