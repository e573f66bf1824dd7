"""Isoparametric analysis: level-function fits, surface typing and anisotropic geometry.

Point-wise geometry (normals, Weingarten maps, curvatures, geodesics) is
evaluated from :func:`matzoh.grid.local_jet`, a local polynomial fit of the
nodal values, which keeps off-grid derivatives accurate to high order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline, make_lsq_spline
from scipy.optimize import least_squares

from .convex import ConvexBody, tangent_basis
from .grid import OutsideDomainError, ScalarField, gradient, jet_supported, level_set_points, local_jet
from .invariance import binned_regression, default_bins
from .operators import DegenerateGradientError, QuasiLinearOperator, apply_G, apply_Q

log = logging.getLogger(__name__)

TOL_ISO = 1e-2
CLUSTER_ABS = 1e-3
CLUSTER_REL = 0.05
WULFF_TOL = 1e-2


# --- level-function fits -------------------------------------------------------


@dataclass
class LevelFunctionFit:
    """``psi ~ F(phi)`` tabulated at knots, with derivative estimates at the knots."""

    knots: np.ndarray
    values: np.ndarray
    derivative_values: np.ndarray
    residual: float
    counts: np.ndarray = field(repr=False, default=None)

    def __call__(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        k, v = self.knots, self.values
        out = np.interp(s, k, v)
        if len(k) > 1:
            lo_slope = (v[1] - v[0]) / (k[1] - k[0])
            hi_slope = (v[-1] - v[-2]) / (k[-1] - k[-2])
            out = np.where(s < k[0], v[0] + lo_slope * (s - k[0]), out)
            out = np.where(s > k[-1], v[-1] + hi_slope * (s - k[-1]), out)
        return out

    def derivative(self, s) -> np.ndarray:
        return np.interp(np.asarray(s, dtype=float), self.knots, self.derivative_values)


def _smooth_derivative(x: np.ndarray, y: np.ndarray, knots: np.ndarray, values: np.ndarray) -> np.ndarray:
    """F' at the knots from a least-squares cubic spline with coarse breakpoints.

    Differencing per-bin values amplifies binning noise by 1/width; a spline
    with about len(knots)/16 intervals averages it out.
    """
    if len(knots) < 2:
        return np.zeros(len(knots))
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n_int = max(4, len(knots) // 16)
    inner = np.linspace(xs[0], xs[-1], n_int + 1)[1:-1]
    t = np.r_[[xs[0]] * 4, inner, [xs[-1]] * 4]
    try:
        spline = make_lsq_spline(xs, ys, t, k=3)
    except (ValueError, np.linalg.LinAlgError):
        return np.gradient(values, knots)
    return spline.derivative()(knots)


def fit_level_function(
    phi: ScalarField, psi: ScalarField, n_knots: int | None = None, region=None, scale: float | None = None
) -> LevelFunctionFit:
    """Fit ``psi = F(phi)`` by local quadratic regression in equal-width phi bins.

    ``residual`` is the RMS of ``psi - F(phi)`` over the fitted nodes divided by
    ``scale`` (default: the larger of the range and the peak magnitude of psi).
    """
    if phi.grid != psi.grid:
        raise ValueError("phi and psi must share a grid")
    nodes = phi.mask.active & psi.mask.active
    if region is not None:
        nodes &= np.asarray(region, dtype=bool)
    x = phi.values[nodes]
    y = psi.values[nodes]
    n_knots = n_knots or default_bins(len(x))
    centres, values, _, _, counts, _ = binned_regression(x, y[None, :], n_knots)
    ok = counts > 0
    knots, vals = centres[ok], values[ok, 0]
    fit = LevelFunctionFit(knots, vals, _smooth_derivative(x, y, knots, vals), 0.0, counts[ok])
    if scale is None:
        scale = max(float(y.max() - y.min()), float(np.abs(y).max()))
    rms = float(np.sqrt(np.mean((y - fit(x)) ** 2)))
    fit.residual = rms / scale if scale > 0 else rms
    return fit


@dataclass
class IsoparametricResult:
    f_fit: LevelFunctionFit
    g_fit: LevelFunctionFit
    passed: bool
    euler_residual: float | None = None
    tol: float = TOL_ISO

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"


def _regular_region(phi: ScalarField, op: QuasiLinearOperator, region) -> np.ndarray:
    nodes = phi.mask.interior.copy()
    if region is not None:
        nodes &= np.asarray(region, dtype=bool)
    if op.kind != "heat":
        small = np.linalg.norm(np.nan_to_num(gradient(phi)), axis=-1) < op.g_floor
        nodes &= ~small
    return nodes


def isoparametric_residual(
    phi: ScalarField, op: QuasiLinearOperator, region=None, n_knots: int | None = None, tol: float = TOL_ISO
) -> IsoparametricResult:
    """Fit ``G phi = f(phi)`` and ``Q phi = g(phi)`` over interior nodes.

    Nodes where ``|D phi|`` drops below the operator's gradient floor are
    excluded for gradient-dependent operators. For ``h_laplace`` the fit of
    ``2H(D phi)`` is compared against the f-fit as a consistency check.
    """
    nodes = _regular_region(phi, op, region)
    if not nodes.any():
        raise DegenerateGradientError("no regular interior nodes", np.argwhere(phi.mask.interior))
    G = apply_G(op, phi, nodes)
    Q = apply_Q(op, phi, nodes)
    gv, qv = G.values[nodes], Q.values[nodes]
    f_fit = fit_level_function(phi, G, n_knots, nodes)
    g_scale = max(float(np.abs(qv).max()), float(np.abs(gv).max()) / max(phi.value_range(), 1e-300))
    g_fit = fit_level_function(phi, Q, n_knots, nodes, scale=g_scale)
    passed = f_fit.residual <= tol and g_fit.residual <= tol
    euler = None
    if op.kind == "h_laplace":
        grad = gradient(phi)[nodes]
        twoH = np.full(phi.grid.shape, np.nan)
        twoH[nodes] = 2 * op.body.H(grad)
        twoH_field = ScalarField(phi.grid, G.mask, twoH)
        h_fit = fit_level_function(phi, twoH_field, n_knots, nodes)
        euler = float(np.max(np.abs(h_fit.values - f_fit.values)) / max(np.abs(f_fit.values).max(), 1e-300))
        passed = passed and euler <= tol
    return IsoparametricResult(f_fit, g_fit, bool(passed), euler, tol)


def fit_gradient_function(phi: ScalarField, body: ConvexBody | None = None, n_knots: int | None = None) -> LevelFunctionFit:
    """f-fit of ``2H(D phi)`` with gradients from local high-order fits at the nodes.

    Grid difference quotients carry O(h^2) errors that make a normalised field
    drift visibly along long geodesics; this variant is the preferred input to
    :func:`normalize_to_unit_f`.
    """
    body = _body(body, phi.grid.dim)
    idx = np.argwhere(phi.mask.interior)
    pts = phi.grid.coordinates(idx)
    ok = jet_supported(phi, pts)
    _, grad, _ = local_jet(phi, pts[ok])
    keep = np.linalg.norm(grad, axis=-1) > 0
    nodes = np.zeros(phi.grid.shape, dtype=bool)
    sel = idx[ok][keep]
    nodes[tuple(sel.T)] = True
    vals = np.full(phi.grid.shape, np.nan)
    vals[tuple(sel.T)] = 2 * body.H(grad[keep])
    twoH = ScalarField(phi.grid, phi.mask, np.where(phi.mask.active, np.nan_to_num(vals), np.nan))
    return fit_level_function(phi, twoH, n_knots, nodes)


def normalize_to_unit_f(phi: ScalarField, f_fit: LevelFunctionFit) -> ScalarField:
    """``psi = F(phi)`` with ``F' = f^{-1/2}``, so that ``G psi = 1`` when ``G phi = f(phi)``.

    ``F`` is the cumulative trapezoid of ``f^{-1/2}`` over the knots, anchored at
    ``F(k_0) = k_0 f(k_0)^{-1/2}`` (so constant ``f`` gives a pure rescale), and
    evaluated through a cubic spline.
    """
    k, f = f_fit.knots, f_fit.values
    if np.any(f <= 0):
        raise ValueError("f must be positive on the phi range")
    w = f ** -0.5
    F = k[0] * w[0] + np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(k))])
    if len(k) < 2:
        return phi.with_values(phi.values * w[0])
    spline = CubicSpline(k, F, extrapolate=True)
    vals = np.full(phi.grid.shape, np.nan)
    act = phi.mask.active
    vals[act] = spline(phi.values[act])
    return phi.with_values(vals)


# --- point-wise geometry -----------------------------------------------------------


def _as_points(x, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return x.reshape(-1, dim), single


def _jet(phi: ScalarField, points: np.ndarray, g_floor: float = 1e-8):
    value, grad, hess = local_jet(phi, points)
    r = np.linalg.norm(grad, axis=-1)
    if np.any(r < g_floor):
        raise DegenerateGradientError("|D phi| below gradient floor at sample points", np.flatnonzero(r < g_floor))
    return value, grad, hess, r


def _body(body: ConvexBody | None, dim: int) -> ConvexBody:
    return body if body is not None else ConvexBody(dim)


def weingarten(phi: ScalarField, x, body: ConvexBody | None = None) -> np.ndarray:
    """``W = D^2h(nu) D^2phi / |D phi|`` at one point ``(N,)`` or many ``(n, N)``."""
    body = _body(body, phi.grid.dim)
    pts, single = _as_points(x, phi.grid.dim)
    _, grad, hess, r = _jet(phi, pts)
    W = body.d2h(grad / r[:, None]) @ hess / r[:, None, None]
    return W[0] if single else W


def aniso_mean_curvature(phi: ScalarField, x, body: ConvexBody | None = None) -> np.ndarray | float:
    """``M = [tr(D^2H D^2phi) - Dphi.D^2H D^2phi Dphi / |Dphi|^2] / h(Dphi)``."""
    body = _body(body, phi.grid.dim)
    pts, single = _as_points(x, phi.grid.dim)
    _, grad, hess, r = _jet(phi, pts)
    M = _mean_curvature(body, grad, hess, r)
    return float(M[0]) if single else M


def _mean_curvature(body, grad, hess, r):
    A = body.d2H(grad) @ hess
    lap_h = np.trace(A, axis1=-2, axis2=-1)
    normal = np.einsum("ni,nij,nj->n", grad, A, grad) / r**2
    return (lap_h - normal) / body.h(grad)


def tangential_trace(W: np.ndarray, nu: np.ndarray) -> np.ndarray:
    T = tangent_basis(nu)
    return np.trace(np.swapaxes(T, -1, -2) @ W @ T, axis1=-2, axis2=-1)


@dataclass
class AnisoGeometry:
    points: np.ndarray
    W: np.ndarray
    M: np.ndarray
    trace_W: np.ndarray
    tangent: np.ndarray
    shape_residual: np.ndarray
    identity_residuals: np.ndarray | None = None

    @property
    def trace_mismatch(self) -> float:
        return float(np.max(np.abs(self.M - self.trace_W)))


def aniso_geometry(phi: ScalarField, points, body: ConvexBody | None = None, f_fit: LevelFunctionFit | None = None) -> AnisoGeometry:
    body = _body(body, phi.grid.dim)
    pts, _ = _as_points(points, phi.grid.dim)
    value, grad, hess, r = _jet(phi, pts)
    nu = grad / r[:, None]
    W = body.d2h(nu) @ hess / r[:, None, None]
    M = _mean_curvature(body, grad, hess, r)
    T = tangent_basis(nu)
    trW = np.trace(np.swapaxes(T, -1, -2) @ W @ T, axis1=-2, axis2=-1)
    shape = _shape_residual(body, grad, hess, W, T)
    ident = _identity_residuals(body, value, grad, hess, f_fit) if f_fit is not None else None
    return AnisoGeometry(pts, W, M, trW, T, shape, ident)


def _identity_residuals(body, value, grad, hess, f_fit) -> np.ndarray:
    """Residuals of the differentiated ``2H(D phi) = f(phi)`` identities, shape ``(n, 3)``.

    1. ``[D^2phi][D^2H] Dphi + [D^2phi] DH = f' Dphi``
    2. ``2 [D^2phi] DH = f' Dphi``
    3. ``[D^2phi][D^2H] Dphi = [D^2phi] DH``

    Each is normalised by the magnitude of its terms, ``|D^2phi| (|D^2H||Dphi| + |DH|) + |f'||Dphi|``.
    """
    d2H = body.d2H(grad)
    DH = body.dH(grad)
    fp = f_fit.derivative(value)
    hDH = np.einsum("nij,nj->ni", hess, DH)
    hHg = np.einsum("nij,njk,nk->ni", hess, d2H, grad)
    rhs = fp[:, None] * grad
    norm = np.linalg.norm
    r = norm(grad, axis=-1)
    hs = norm(hess, ord=2, axis=(-2, -1))
    Hs = norm(d2H, ord=2, axis=(-2, -1))
    scale = hs * (Hs * r + norm(DH, axis=-1)) + np.abs(fp) * r
    scale = np.maximum(scale, 1e-300)
    res = np.stack(
        [
            norm(hHg + hDH - rhs, axis=-1),
            norm(2 * hDH - rhs, axis=-1),
            norm(hHg - hDH, axis=-1),
        ],
        axis=-1,
    )
    return res / scale[:, None]


def check_identities(phi: ScalarField, x, body: ConvexBody | None, f_fit: LevelFunctionFit) -> np.ndarray:
    """Worst normalised residual of each of the three identities over the points."""
    body = _body(body, phi.grid.dim)
    pts, _ = _as_points(x, phi.grid.dim)
    value, grad, hess, _ = _jet(phi, pts)
    return _identity_residuals(body, value, grad, hess, f_fit).max(axis=0)


def _shape_residual(body, grad, hess, W, T) -> np.ndarray:
    R = body.d2H(grad) @ hess / body.h(grad)[:, None, None]
    diff = np.swapaxes(T, -1, -2) @ (W - R) @ T
    return np.abs(diff).reshape(len(grad), -1).max(axis=-1)


def shape_restriction_check(phi: ScalarField, x, body: ConvexBody | None = None) -> float:
    """``max |v^T (W - D^2H D^2phi / h(Dphi)) w|`` over tangent basis pairs (normal pairs excluded)."""
    body = _body(body, phi.grid.dim)
    pts, _ = _as_points(x, phi.grid.dim)
    _, grad, hess, r = _jet(phi, pts)
    nu = grad / r[:, None]
    W = body.d2h(nu) @ hess / r[:, None, None]
    return float(_shape_residual(body, grad, hess, W, tangent_basis(nu)).max())


# --- surface typing -------------------------------------------------------------------


@dataclass
class CurvatureCluster:
    value: float
    multiplicity: int


@dataclass
class SurfaceTypeReport:
    level: float
    type: str
    M: int | None
    clusters: list[CurvatureCluster]
    center: np.ndarray | None
    axis: np.ndarray | None
    fit_residual: float
    n_points: int

    @property
    def label(self) -> str:
        if self.type in ("spherical_cylinder", "wulff_cylinder"):
            return f"{self.type}({self.M})"
        return self.type


def cluster_values(values, abs_gap: float = CLUSTER_ABS, rel_gap: float = CLUSTER_REL) -> list[CurvatureCluster]:
    """Group sorted values; neighbours join when ``|diff| <= max(abs_gap, rel_gap * |mean|)``."""
    vals = np.sort(np.asarray(values, dtype=float))
    groups: list[list[float]] = []
    for v in vals:
        if groups:
            m = float(np.mean(groups[-1]))
            if abs(v - groups[-1][-1]) <= max(abs_gap, rel_gap * abs(m)):
                groups[-1].append(v)
                continue
        groups.append([v])
    return [CurvatureCluster(float(np.mean(g)), len(g)) for g in groups]


def _fit_sphere(points: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Algebraic least-squares sphere; returns centre, radius and RMS distance / radius."""
    A = np.column_stack([2 * points, np.ones(len(points))])
    b = np.sum(points**2, axis=1)
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    c = sol[:-1]
    radius = float(np.sqrt(max(sol[-1] + c @ c, 0.0)))
    dist = np.linalg.norm(points - c, axis=1) - radius
    return c, radius, float(np.sqrt(np.mean(dist**2)) / max(radius, 1e-300))


def _fit_wulff(points: np.ndarray, body: ConvexBody) -> tuple[np.ndarray, float, float]:
    """Translate/scale fit of the Wulff shape: minimise ``gauge(p - c) - r`` over ``(c, r)``."""
    c0 = points.mean(axis=0)
    r0 = float(np.mean(body.gauge(points - c0)))

    def resid(z):
        return body.gauge(points - z[:-1]) - z[-1]

    sol = least_squares(resid, np.append(c0, r0), x_scale="jac")
    c, r = sol.x[:-1], float(sol.x[-1])
    return c, r, float(np.sqrt(np.mean(sol.fun**2)) / max(abs(r), 1e-300))


def _usable_points(phi: ScalarField, pts: np.ndarray, g_floor: float) -> np.ndarray:
    pts = pts[jet_supported(phi, pts)]
    if not len(pts):
        return pts
    _, grad, _ = local_jet(phi, pts)
    return pts[np.linalg.norm(grad, axis=-1) >= g_floor]


def principal_curvatures(phi: ScalarField, points, body: ConvexBody | None = None) -> np.ndarray:
    """Sorted eigenvalues of the tangential shape map, ``(n, N-1)``.

    Isotropic: ``T^T D^2phi T / |Dphi|`` (positive on spheres when phi grows outward);
    anisotropic: tangential part of ``W``.
    """
    pts, _ = _as_points(points, phi.grid.dim)
    _, grad, hess, r = _jet(phi, pts)
    nu = grad / r[:, None]
    T = tangent_basis(nu)
    S = hess / r[:, None, None] if body is None else body.d2h(nu) @ hess / r[:, None, None]
    S = np.swapaxes(T, -1, -2) @ S @ T
    if body is None:
        return np.linalg.eigvalsh(0.5 * (S + np.swapaxes(S, -1, -2)))
    return np.sort(np.linalg.eigvals(S).real, axis=-1)


def classify_surface(
    phi: ScalarField, s: float, body: ConvexBody | None = None, g_floor: float = 1e-8, wulff_tol: float = WULFF_TOL
) -> SurfaceTypeReport:
    """Type the level set ``{phi = s}`` against the sphere / cylinder / hyperplane catalog.

    With ``body`` the anisotropic Weingarten map is used and round types are
    matched against translated, scaled Wulff shapes instead of round spheres.
    """
    dim = phi.grid.dim
    pts = _usable_points(phi, level_set_points(phi, s), g_floor)
    need = max(1, 10 * (dim - 1))
    if len(pts) < need:
        raise ValueError(f"too few level-set samples ({len(pts)} < {need})")
    aniso = body is not None and body.kind != "euclidean_ball"
    if dim == 1:
        if len(pts) >= 2:
            return SurfaceTypeReport(s, "sphere", None, [], pts.mean(axis=0), None, 0.0, len(pts))
        return SurfaceTypeReport(s, "hyperplane", None, [], None, None, 0.0, len(pts))

    kappa = principal_curvatures(phi, pts, body if aniso else None)
    med = np.median(kappa, axis=0)
    clusters = cluster_values(med)
    scale = max(float(np.abs(med).max()), 0.0)
    zero_tol = max(CLUSTER_ABS, CLUSTER_REL * scale)
    zero = [c for c in clusters if abs(c.value) <= zero_tol]
    nonzero = [c for c in clusters if abs(c.value) > zero_tol]
    n_zero = sum(c.multiplicity for c in zero)
    if zero:
        clusters = nonzero + [CurvatureCluster(0.0, n_zero)]
    _, grad, _ = local_jet(phi, pts)
    nu = grad / np.linalg.norm(grad, axis=-1, keepdims=True)
    spread = float(np.max(np.std(kappa, axis=0)) / max(scale, 1.0))

    if not nonzero:
        normal = np.mean(nu, axis=0)
        normal /= np.linalg.norm(normal)
        offsets = pts @ normal
        resid = float(np.std(offsets)) + float(np.max(np.linalg.norm(nu - normal, axis=1)))
        return SurfaceTypeReport(s, "hyperplane", None, clusters, None, normal, resid, len(pts))
    if len(nonzero) > 1:
        return SurfaceTypeReport(s, "unknown", None, clusters, None, None, spread, len(pts))

    m = nonzero[0].multiplicity
    if m == dim - 1:
        if aniso:
            c, _, resid = _fit_wulff(pts, body)
            kind = "wulff_sphere" if resid <= wulff_tol else "unknown"
        else:
            c, _, resid = _fit_sphere(pts)
            kind = "sphere"
        return SurfaceTypeReport(s, kind, m, clusters, c, None, resid, len(pts))

    # cylinder: flat directions are the ones the normals never point along
    evals, evecs = np.linalg.eigh(nu.T @ nu / len(nu))
    axis = evecs[:, : dim - 1 - m]
    proj = np.eye(dim) - axis @ axis.T
    if aniso:
        c, _, resid = _fit_wulff(pts @ proj, body)
        kind = "wulff_cylinder" if resid <= wulff_tol else "unknown"
    else:
        q = pts @ evecs[:, dim - 1 - m :]
        cq, _, resid = _fit_sphere(q)
        c = evecs[:, dim - 1 - m :] @ cq
        kind = "spherical_cylinder"
    ax = axis[:, 0] if axis.shape[1] == 1 else axis
    if ax.ndim == 1 and ax[np.argmax(np.abs(ax))] < 0:
        ax = -ax
    return SurfaceTypeReport(s, kind, m, clusters, c, ax, resid, len(pts))


# --- geodesics ----------------------------------------------------------------------


@dataclass
class GeodesicTrace:
    seed: np.ndarray
    taus: np.ndarray
    curve: np.ndarray
    level_values: np.ndarray
    level_rate: np.ndarray
    straightness: float
    truncated: bool

    @property
    def max_rate_error(self) -> float:
        return float(np.max(np.abs(self.level_rate - 1.0)))


def geodesic_trace(phi: ScalarField, y, body: ConvexBody | None, tau_max: float, n_steps: int = 300) -> GeodesicTrace:
    """RK4 integration of ``gamma' = DH(D phi(gamma))`` from ``gamma(0) = y``.

    Diagnostics: deviation from the straight line ``y + tau DH(D phi(y))``;
    the level rate ``d phi / d tau = D phi . DH(D phi) = 2H(D phi)`` along the
    curve; and ``phi(gamma(tau))`` for cross-seed parallelism checks. A curve
    whose stencil leaves the active nodes is truncated and flagged.
    """
    body = _body(body, phi.grid.dim)
    y = np.asarray(y, dtype=float)

    def field_at(x):
        _, g, _ = local_jet(phi, x[None])
        return body.dH(g)[0]

    dtau = tau_max / n_steps
    curve = [y.copy()]
    truncated = False
    x = y.copy()
    try:
        v0 = field_at(y)
    except OutsideDomainError as exc:
        raise ValueError("seed point is outside the usable domain") from exc
    for _ in range(n_steps):
        try:
            k1 = field_at(x)
            k2 = field_at(x + 0.5 * dtau * k1)
            k3 = field_at(x + 0.5 * dtau * k2)
            k4 = field_at(x + dtau * k3)
            nxt = x + dtau / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            local_jet(phi, nxt[None])
        except OutsideDomainError:
            truncated = True
            break
        x = nxt
        curve.append(x.copy())
    curve = np.asarray(curve)
    taus = dtau * np.arange(len(curve))
    values, grads, _ = local_jet(phi, curve)
    rate = np.einsum("ni,ni->n", grads, body.dH(grads))
    straight = y + taus[:, None] * v0
    deviation = float(np.max(np.linalg.norm(curve - straight, axis=1)))
    return GeodesicTrace(y, taus, curve, values, rate, deviation, truncated)


def parallelism(traces: list[GeodesicTrace]) -> float:
    """Max over tau of the spread of ``phi(gamma_y(tau))`` across seeds (common tau grid)."""
    n = min(len(t.level_values) for t in traces)
    vals = np.stack([t.level_values[:n] for t in traces])
    return float(np.max(vals.max(axis=0) - vals.min(axis=0)))
