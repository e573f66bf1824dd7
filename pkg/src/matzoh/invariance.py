"""Reconstruct ``u(x, t) = eta(phi(x), t)`` from snapshots and test the level-set invariance.

``phi`` is the first snapshot. Levels are binned into equal-width bins; inside
each bin ``eta`` is the intercept of a local quadratic regression of ``u`` on
``phi - s_k`` over a window one bin wide on either side of the centre. The
regression is exact for ``eta`` affine in ``s`` (so ``eta(s, tau) = s`` holds to
rounding), and its residuals over the bin's own nodes give the spread: the
max-min deviation of ``u(., t)`` from a function of ``phi``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import interp1d
from scipy.ndimage import maximum_filter

from .grid import TimeSeriesField

MAX_BINS = 256
EMPTY_BIN_LIMIT = 0.2
TOL_INV = 1e-2
D_FLOOR = 1e-6
D_NOISE_FACTOR = 10.0


class LevelResolutionError(ValueError):
    pass


class MonotonicityError(ValueError):
    def __init__(self, bins):
        super().__init__(f"eta_s <= 0 (eta not increasing in s) at bins {sorted(set(bins))[:10]}")
        self.bins = bins


def default_bins(n_nodes: int) -> int:
    return int(min(MAX_BINS, max(4, np.ceil(np.sqrt(n_nodes)))))


def auto_bins(phi: np.ndarray, n_max: int | None = None) -> int:
    """Largest bin count (halving from ``n_max``) whose empty-bin fraction is acceptable.

    Levels of lattice-sampled fields can be clustered (e.g. ``x^2`` on a grid
    takes few distinct small values), so the size-based default is only a cap.
    """
    phi = np.asarray(phi, dtype=float)
    n = n_max or default_bins(len(phi))
    lo, hi = float(phi.min()), float(phi.max())
    if not hi > lo:
        return n
    while n > 4:
        idx = np.clip(((phi - lo) / ((hi - lo) / n)).astype(int), 0, n - 1)
        if np.mean(np.bincount(idx, minlength=n) == 0) <= EMPTY_BIN_LIMIT:
            break
        n //= 2
    return max(n, 4)


@dataclass
class EtaTable:
    s_bins: np.ndarray  # (n_bins,) bin centres
    times: np.ndarray  # (n_t,)
    eta: np.ndarray  # (n_bins, n_t); NaN for empty bins
    spread: np.ndarray  # (n_bins, n_t)
    counts: np.ndarray  # (n_bins,)

    @property
    def tau(self) -> float:
        return float(self.times[0])

    @property
    def width(self) -> float:
        return float(self.s_bins[1] - self.s_bins[0]) if len(self.s_bins) > 1 else 1.0

    @property
    def usable(self) -> np.ndarray:
        return self.counts > 0

    @classmethod
    def from_function(cls, fn, s_bins, times) -> EtaTable:
        """Exact table ``eta[k, j] = fn(s_k, t_j)`` (zero spread), for closed-form tests."""
        s_bins = np.asarray(s_bins, dtype=float)
        times = np.asarray(times, dtype=float)
        S, T = np.meshgrid(s_bins, times, indexing="ij")
        eta = np.asarray(fn(S, T), dtype=float)
        return cls(s_bins, times, eta, np.zeros_like(eta), np.ones(len(s_bins), dtype=int))

    def monotone_flags(self) -> np.ndarray:
        """Per time: whether eta strictly increases across the occupied bins."""
        flags = []
        for j in range(len(self.times)):
            e = self.eta[self.usable, j]
            flags.append(bool(np.all(np.diff(e) > 0)))
        return np.asarray(flags)


def _series_arrays(series: TimeSeriesField, region=None) -> tuple[np.ndarray, np.ndarray]:
    nodes = series.mask.active.copy()
    if region is not None:
        nodes &= np.asarray(region, dtype=bool)
    phi = series.snapshots[0].values[nodes]
    U = np.stack([s.values[nodes] for s in series.snapshots])
    return phi, U


def binned_regression(phi: np.ndarray, U: np.ndarray, n_bins: int, degree: int = 2):
    """Local-polynomial level function of ``U`` (rows = samples) against ``phi``.

    Returns ``(centres, values, slopes, spread, counts, bin_index)``; ``values``,
    ``slopes`` (d/dphi at the centre) and ``spread`` are shaped ``(n_bins, n_rows)``.
    """
    lo, hi = float(phi.min()), float(phi.max())
    if not hi > lo:
        raise LevelResolutionError("phi is constant: no levels to resolve")
    w = (hi - lo) / n_bins
    centres = lo + w * (np.arange(n_bins) + 0.5)
    bin_index = np.clip(((phi - lo) / w).astype(int), 0, n_bins - 1)
    counts = np.bincount(bin_index, minlength=n_bins)
    empty = np.mean(counts == 0)
    if empty > EMPTY_BIN_LIMIT:
        raise LevelResolutionError(f"insufficient level resolution: {empty:.0%} of bins are empty")
    order = np.argsort(phi, kind="stable")
    phi_sorted = phi[order]
    values = np.full((n_bins, U.shape[0]), np.nan)
    slopes = np.full((n_bins, U.shape[0]), np.nan)
    spread = np.zeros((n_bins, U.shape[0]))
    for k, c in enumerate(centres):
        if counts[k] == 0:
            continue
        a = np.searchsorted(phi_sorted, c - w, side="left")
        b = np.searchsorted(phi_sorted, c + w, side="right")
        idx = order[a:b]
        d = (phi[idx] - c) / w
        distinct = len(np.unique(np.round(d, 9)))
        deg = min(degree, distinct - 1)
        X = np.vander(d, deg + 1, increasing=True)
        Y = U[:, idx].T
        coef, *_ = np.linalg.lstsq(X, Y, rcond=None)
        values[k] = coef[0]
        if deg >= 1:
            slopes[k] = coef[1] / w
        own = bin_index[idx] == k
        if own.sum() > 1:
            resid = (Y - X @ coef)[own]
            spread[k] = resid.max(axis=0) - resid.min(axis=0)
    return centres, values, slopes, spread, counts, bin_index


def build_eta(series: TimeSeriesField, n_bins: int | None = None, region=None) -> EtaTable:
    if len(series) < 4:
        raise ValueError("build_eta needs at least 4 snapshots")
    phi, U = _series_arrays(series, region)
    n_bins = n_bins or auto_bins(phi, default_bins(int(series.mask.interior.sum())))
    centres, values, _, spread, counts, _ = binned_regression(phi, U, n_bins)
    return EtaTable(centres, np.asarray(series.times, dtype=float), values, spread, counts)


def invariance_residual(series: TimeSeriesField, n_bins: int | None = None, region=None) -> np.ndarray:
    """Per time: max over bins of the level spread, normalised by the range of ``u(., t)``."""
    table = build_eta(series, n_bins, region)
    _, U = _series_arrays(series, region)
    rng = U.max(axis=1) - U.min(axis=1)
    worst = table.spread.max(axis=0)
    return np.divide(worst, rng, out=np.zeros_like(worst), where=rng > 0)


def reconstruct(table: EtaTable, phi: np.ndarray) -> np.ndarray:
    """``eta(phi, t)`` piecewise linear in s (extrapolated past the end bins); shape ``(n_t, len(phi))``."""
    ok = table.usable
    fit = interp1d(table.s_bins[ok], table.eta[ok].T, axis=1, fill_value="extrapolate", assume_sorted=True)
    return fit(np.asarray(phi, dtype=float))


# --- partial derivatives on the (s, t) lattice --------------------------------


def _second_derivative(values: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
    """Three-point second derivative on a possibly non-uniform axis; edges copy their neighbour."""
    v = np.moveaxis(values, axis, 0)
    x = np.asarray(coords, dtype=float)
    out = np.full(v.shape, np.nan)
    if len(x) >= 3:
        h1 = (x[1:-1] - x[:-2]).reshape((-1,) + (1,) * (v.ndim - 1))
        h2 = (x[2:] - x[1:-1]).reshape((-1,) + (1,) * (v.ndim - 1))
        out[1:-1] = 2 * (h1 * v[2:] - (h1 + h2) * v[1:-1] + h2 * v[:-2]) / (h1 * h2 * (h1 + h2))
        out[0] = out[1]
        out[-1] = out[-2]
    return np.moveaxis(out, 0, axis)


def _first_derivative(values: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
    if values.shape[axis] < 3:
        return np.gradient(values, coords, axis=axis)
    return np.gradient(values, coords, axis=axis, edge_order=2)


@dataclass
class EtaPartials:
    s: np.ndarray
    times: np.ndarray
    eta: np.ndarray
    eta_s: np.ndarray
    eta_ss: np.ndarray
    eta_t: np.ndarray
    eta_st: np.ndarray
    eta_tt: np.ndarray
    eta_sst: np.ndarray
    sigma: np.ndarray  # per-entry uncertainty of eta
    alpha: float | None = None
    xi: np.ndarray | None = None
    xi_s: np.ndarray | None = None
    xi_t: np.ndarray | None = None
    xi_st: np.ndarray | None = None

    @property
    def ds(self) -> float:
        return float(self.s[1] - self.s[0])

    def interior(self) -> np.ndarray:
        """Lattice entries with a full centred stencil in both s and t."""
        m = np.zeros(self.eta.shape, dtype=bool)
        m[1:-1, 1:-1] = True
        m &= np.isfinite(self.eta_sst) & np.isfinite(self.eta_tt)
        return m


def eta_partials(table: EtaTable, alpha: float | None = None, check_monotone: bool = True) -> EtaPartials:
    E = table.eta
    s, t = table.s_bins, table.times
    ds = table.width
    eta_s = _first_derivative(E, s, 0)
    eta_ss = _second_derivative(E, s, 0)
    eta_t = _first_derivative(E, t, 1)
    eta_tt = _second_derivative(E, t, 1)
    eta_st = _first_derivative(eta_s, t, 1)
    eta_sst = _first_derivative(eta_ss, t, 1)
    if check_monotone:
        bad = np.argwhere(np.isfinite(eta_s) & (eta_s <= 0))
        if len(bad):
            raise MonotonicityError(bad[:, 0].tolist())
    scale = np.nanmax(np.abs(E)) if np.isfinite(E).any() else 1.0
    counts = np.maximum(table.counts, 1)[:, None]
    sigma = table.spread / (2 * np.sqrt(counts)) + 1e-14 * max(scale, ds)
    p = EtaPartials(s, t, E, eta_s, eta_ss, eta_t, eta_st, eta_tt, eta_sst, sigma)
    if alpha is not None:
        a1 = alpha + 1.0
        p.alpha = float(alpha)
        p.xi = eta_s**a1
        p.xi_s = a1 * eta_s**alpha * eta_ss
        p.xi_t = a1 * eta_s**alpha * eta_st
        p.xi_st = a1 * (alpha * eta_s ** (alpha - 1.0) * eta_st * eta_ss + eta_s**alpha * eta_sst)
    return p


# --- determinants --------------------------------------------------------------


@dataclass
class DeterminantResult:
    D: np.ndarray  # raw determinant lattice
    normalized: np.ndarray  # D / eta_s^2 * s_span * t_span (scale-free)
    noise: np.ndarray  # propagated uncertainty of D
    significant: np.ndarray  # two-sided test, interior lattice only
    f: np.ndarray  # split-branch estimates of G phi = f(phi) (NaN where not significant)
    g: np.ndarray  # ... and Q phi = g(phi)
    bin_significant: np.ndarray  # per s-bin verdict

    @property
    def any_significant(self) -> bool:
        return bool(self.bin_significant.any())


def _noise_D(p: EtaPartials) -> np.ndarray:
    ds = p.ds
    dt = np.gradient(p.times) if len(p.times) > 1 else np.ones(1)
    dt = np.broadcast_to(dt[None, :], p.eta.shape)
    sig = maximum_filter(np.nan_to_num(p.sigma), size=3, mode="nearest")
    return (
        np.abs(p.eta_s) * 4 * sig / (ds**2 * dt)
        + np.abs(p.eta_sst) * sig / ds
        + np.abs(p.eta_st) * 4 * sig / ds**2
        + np.abs(p.eta_ss) * sig / (ds * dt)
    )


def _significance(p: EtaPartials, D: np.ndarray, noise: np.ndarray, floor: float, factor: float):
    s_span = float(p.s[-1] - p.s[0]) if len(p.s) > 1 else 1.0
    t_span = float(p.times[-1] - p.times[0]) if len(p.times) > 1 else 1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        normalized = D / p.eta_s**2 * s_span * t_span
        sig = p.interior() & (np.abs(D) > factor * noise) & (np.abs(normalized) > floor)
    inner = p.interior()
    n_inner = inner.sum(axis=1)
    bin_sig = (sig.sum(axis=1) * 2 >= n_inner) & (n_inner > 0)
    return normalized, sig, bin_sig


def determinant_D(p: EtaPartials, floor: float = D_FLOOR, factor: float = D_NOISE_FACTOR) -> DeterminantResult:
    """``D = eta_s eta_sst - eta_st eta_ss`` and the f, g estimates where D is significant."""
    D = p.eta_s * p.eta_sst - p.eta_st * p.eta_ss
    noise = _noise_D(p)
    normalized, sig, bin_sig = _significance(p, D, noise, floor, factor)
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(sig, (p.eta_s * p.eta_tt - p.eta_st * p.eta_t) / D, np.nan)
        g = np.where(sig, (p.eta_t * p.eta_sst - p.eta_tt * p.eta_ss) / D, np.nan)
    return DeterminantResult(D, normalized, noise, sig, f, g, bin_sig)


def determinant_xi(p: EtaPartials, floor: float = D_FLOOR, factor: float = D_NOISE_FACTOR) -> DeterminantResult:
    """``xi xi_st - xi_s xi_t`` with ``xi = eta_s^(alpha+1)``.

    Solving ``xi Q + xi_s/(alpha+1) G = eta_t``, ``xi_t Q + xi_st/(alpha+1) G = eta_tt``
    gives ``G = (alpha+1)(xi eta_tt - xi_t eta_t)/det`` and
    ``Q = (xi_st eta_t - xi_s eta_tt)/det``.
    """
    if p.alpha is None:
        raise ValueError("determinant_xi needs partials computed with alpha")
    a1 = p.alpha + 1.0
    det = p.xi * p.xi_st - p.xi_s * p.xi_t
    # xi xi_st - xi_s xi_t = (alpha+1) eta_s^(2 alpha) D, so the noise scales alike
    noise = a1 * np.abs(p.eta_s) ** (2 * p.alpha) * _noise_D(p)
    with np.errstate(invalid="ignore", divide="ignore"):
        scaled = det / (a1 * p.eta_s ** (2 * p.alpha))
    normalized, sig, bin_sig = _significance(p, scaled, noise / (a1 * np.abs(p.eta_s) ** (2 * p.alpha)), floor, factor)
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(sig, a1 * (p.xi * p.eta_tt - p.xi_t * p.eta_t) / det, np.nan)
        g = np.where(sig, (p.xi_st * p.eta_t - p.xi_s * p.eta_tt) / det, np.nan)
    return DeterminantResult(det, normalized, noise, sig, f, g, bin_sig)


def log_form(p: EtaPartials) -> np.ndarray:
    """``d^2/ds dt log(eta_s)`` by differencing ``log eta_s``; equals ``D / eta_s^2``."""
    with np.errstate(invalid="ignore", divide="ignore"):
        L = np.log(p.eta_s)
    return _first_derivative(_first_derivative(L, p.s, 0), p.times, 1)
