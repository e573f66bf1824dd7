"""Structured Cartesian grids, masked domains and finite-difference calculus.

Values at exterior nodes are stored as NaN; the derivative kernels use that
NaN pattern to pick central, one-sided or fallback stencils, so the mask
never has to be consulted inside the inner loops.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

EXTERIOR, INTERIOR, BOUNDARY = 0, 1, 2
_MASK_CHARS = {EXTERIOR: "E", INTERIOR: "I", BOUNDARY: "B"}
_MASK_CODES = {v: k for k, v in _MASK_CHARS.items()}


class GridError(ValueError):
    pass


class OutsideDomainError(GridError):
    pass


@dataclass(frozen=True)
class Grid:
    shape: tuple[int, ...]
    origin: tuple[float, ...]
    spacing: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "spacing", tuple(float(h) for h in self.spacing))
        if not (len(self.shape) == len(self.origin) == len(self.spacing)) or not self.shape:
            raise GridError("shape, origin and spacing must share one dimension >= 1")
        if any(h <= 0 for h in self.spacing):
            raise GridError("grid spacing must be positive")
        if any(n < 1 for n in self.shape):
            raise GridError("grid shape entries must be >= 1")

    @classmethod
    def from_bounds(cls, bounds: Sequence[tuple[float, float]], spacing: float | Sequence[float]) -> Grid:
        """Grid covering each ``(lo, hi)`` interval, snapping the count to the spacing."""
        if np.isscalar(spacing):
            spacing = [float(spacing)] * len(bounds)
        shape = [int(round((hi - lo) / h)) + 1 for (lo, hi), h in zip(bounds, spacing)]
        return cls(tuple(shape), tuple(lo for lo, _ in bounds), tuple(spacing))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axes(self) -> list[np.ndarray]:
        return [o + h * np.arange(n) for n, o, h in zip(self.shape, self.origin, self.spacing)]

    def coordinates(self, index) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(index, dtype=float) * np.asarray(self.spacing)

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self) -> np.ndarray:
        """Node coordinates as an array of shape ``(*shape, dim)``."""
        return np.stack(self.mesh(), axis=-1)


class DomainMask:
    """Per-node flags (exterior / interior / boundary) plus boundary normals.

    A node is interior when it and every one of its 3**N neighbours lie inside
    the domain, which keeps both the axis stencils and the cross stencil of
    interior nodes free of exterior reads.
    """

    def __init__(self, flags: np.ndarray):
        flags = np.asarray(flags, dtype=np.int8)
        if not np.isin(flags, (EXTERIOR, INTERIOR, BOUNDARY)).all():
            raise GridError("mask flags must be 0 (E), 1 (I) or 2 (B)")
        flags.flags.writeable = False
        self.flags = flags

    @classmethod
    def from_inside(cls, inside: np.ndarray) -> DomainMask:
        inside = np.asarray(inside, dtype=bool)
        padded = np.pad(inside, 1, constant_values=False)
        interior = inside.copy()
        for offset in itertools.product((-1, 0, 1), repeat=inside.ndim):
            sl = tuple(slice(1 + o, 1 + o + n) for o, n in zip(offset, inside.shape))
            interior &= padded[sl]
        flags = np.where(inside, BOUNDARY, EXTERIOR).astype(np.int8)
        flags[interior] = INTERIOR
        return cls(flags)

    @classmethod
    def box(cls, shape: Sequence[int]) -> DomainMask:
        return cls.from_inside(np.ones(tuple(shape), dtype=bool))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.flags.shape

    @cached_property
    def active(self) -> np.ndarray:
        return self.flags != EXTERIOR

    @cached_property
    def interior(self) -> np.ndarray:
        return self.flags == INTERIOR

    @cached_property
    def boundary(self) -> np.ndarray:
        return self.flags == BOUNDARY

    @cached_property
    def is_box(self) -> bool:
        return bool(self.active.all())

    @cached_property
    def normals(self) -> np.ndarray:
        """Outward unit normals at boundary nodes from axis-aligned faces; zero elsewhere."""
        active = np.pad(self.active, 1, constant_values=False)
        n = np.zeros(self.shape + (len(self.shape),))
        for k in range(len(self.shape)):
            fwd = [slice(1, -1)] * len(self.shape)
            bwd = list(fwd)
            fwd[k] = slice(2, None)
            bwd[k] = slice(0, -2)
            n[..., k] = (~active[tuple(fwd)]).astype(float) - (~active[tuple(bwd)]).astype(float)
        norm = np.linalg.norm(n, axis=-1, keepdims=True)
        n = np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)
        n[~self.boundary] = 0.0
        return n

    def __eq__(self, other):
        return isinstance(other, DomainMask) and np.array_equal(self.flags, other.flags)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    mask: DomainMask
    values: np.ndarray
    time: float | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.shape or self.mask.shape != self.grid.shape:
            raise GridError("values and mask must match the grid shape")
        values[~self.mask.active] = np.nan
        if not np.isfinite(values[self.mask.active]).all():
            raise GridError("field values must be finite on non-exterior nodes")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: Grid, fn, mask: DomainMask | None = None, time: float | None = None) -> ScalarField:
        mask = mask or DomainMask.box(grid.shape)
        values = np.asarray(fn(*grid.mesh()), dtype=float) * np.ones(grid.shape)
        values = np.where(mask.active, values, np.nan)
        return cls(grid, mask, values, time)

    def with_values(self, values: np.ndarray, time: float | None = None) -> ScalarField:
        return ScalarField(self.grid, self.mask, values, self.time if time is None else time)

    def active_values(self) -> np.ndarray:
        return self.values[self.mask.active]

    def value_range(self) -> float:
        v = self.active_values()
        return float(v.max() - v.min())


@dataclass(frozen=True, eq=False)
class TimeSeriesField:
    snapshots: tuple[ScalarField, ...]
    times: np.ndarray = field(default=None)

    def __post_init__(self):
        snaps = tuple(self.snapshots)
        if not snaps:
            raise GridError("a time series needs at least one snapshot")
        times = self.times
        if times is None:
            times = [s.time for s in snaps]
        times = np.array(times, dtype=float)
        if len(times) != len(snaps) or np.any(np.diff(times) <= 0):
            raise GridError("snapshot times must be strictly increasing")
        g, m = snaps[0].grid, snaps[0].mask
        if any(s.grid != g or s.mask != m for s in snaps):
            raise GridError("snapshots must share one grid and mask")
        snaps = tuple(s if s.time == t else s.with_values(s.values, float(t)) for s, t in zip(snaps, times))
        times.flags.writeable = False
        object.__setattr__(self, "snapshots", snaps)
        object.__setattr__(self, "times", times)

    @property
    def tau(self) -> float:
        return float(self.times[0])

    @property
    def grid(self) -> Grid:
        return self.snapshots[0].grid

    @property
    def mask(self) -> DomainMask:
        return self.snapshots[0].mask

    def stack(self) -> np.ndarray:
        """Active-node values, shape ``(n_times, n_active)``."""
        return np.stack([s.active_values() for s in self.snapshots])

    def __len__(self):
        return len(self.snapshots)

    def map(self, fn) -> TimeSeriesField:
        return TimeSeriesField(tuple(s.with_values(fn(s.values)) for s in self.snapshots), self.times)


# --- finite differences --------------------------------------------------------


def _check_axes(grid: Grid) -> None:
    if any(n < 3 for n in grid.shape):
        raise GridError("axis too small: finite differences need >= 3 nodes per axis")


def _shift(padded: np.ndarray, axis: int, offset: int, pad: int, n: int) -> np.ndarray:
    sl = [slice(None)] * padded.ndim
    sl[axis] = slice(pad + offset, pad + offset + n)
    return padded[tuple(sl)]


def _fill(out: np.ndarray, candidate: np.ndarray) -> None:
    hole = np.isnan(out)
    out[hole] = candidate[hole]


def _pad_axis(v: np.ndarray, axis: int, pad: int) -> np.ndarray:
    widths = [(0, 0)] * v.ndim
    widths[axis] = (pad, pad)
    return np.pad(v, widths, constant_values=np.nan)


def diff1(v: np.ndarray, axis: int, h: float, fallback: bool = True) -> np.ndarray:
    """First derivative along ``axis``: central, else one-sided O(h^2), else O(h).

    Nodes with no neighbour along ``axis`` get 0, or NaN when ``fallback`` is off.
    """
    n = v.shape[axis]
    p = _pad_axis(v, axis, 2)
    um2, um1, u0, up1, up2 = (_shift(p, axis, k, 2, n) for k in (-2, -1, 0, 1, 2))
    out = (up1 - um1) / (2 * h)
    _fill(out, (-3 * u0 + 4 * up1 - up2) / (2 * h))
    _fill(out, (3 * u0 - 4 * um1 + um2) / (2 * h))
    _fill(out, (up1 - u0) / h)
    _fill(out, (u0 - um1) / h)
    if fallback:
        out[np.isnan(out) & ~np.isnan(v)] = 0.0
    return out


def diff2(v: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Second derivative along ``axis``; every branch is exact on quadratics."""
    n = v.shape[axis]
    p = _pad_axis(v, axis, 3)
    um3, um2, um1, u0, up1, up2, up3 = (_shift(p, axis, k, 3, n) for k in range(-3, 4))
    h2 = h * h
    out = (up1 - 2 * u0 + um1) / h2
    _fill(out, (2 * u0 - 5 * up1 + 4 * up2 - up3) / h2)
    _fill(out, (2 * u0 - 5 * um1 + 4 * um2 - um3) / h2)
    _fill(out, (u0 - 2 * up1 + up2) / h2)
    _fill(out, (u0 - 2 * um1 + um2) / h2)
    out[np.isnan(out) & ~np.isnan(v)] = 0.0
    return out


def gradient(field: ScalarField) -> np.ndarray:
    """Gradient with shape ``(*grid.shape, dim)``; NaN at exterior nodes."""
    _check_axes(field.grid)
    return np.stack([diff1(field.values, k, h) for k, h in enumerate(field.grid.spacing)], axis=-1)


def hessian(field: ScalarField) -> np.ndarray:
    """Symmetric Hessian with shape ``(*grid.shape, dim, dim)``."""
    _check_axes(field.grid)
    v, hs, dim = field.values, field.grid.spacing, field.grid.dim
    out = np.empty(field.grid.shape + (dim, dim))
    # unavailable first derivatives stay NaN so neighbours switch to one-sided stencils
    first = [diff1(v, k, hs[k], fallback=False) for k in range(dim)]
    active = ~np.isnan(v)
    for i in range(dim):
        out[..., i, i] = diff2(v, i, hs[i])
        for j in range(i + 1, dim):
            pair = np.stack([diff1(first[i], j, hs[j], False), diff1(first[j], i, hs[i], False)])
            have = ~np.isnan(pair)
            n = have.sum(axis=0)
            mixed = np.where(have, pair, 0.0).sum(axis=0) / np.maximum(n, 1)
            mixed[~active] = np.nan
            out[..., i, j] = mixed
            out[..., j, i] = mixed
    return out


def laplacian(field: ScalarField) -> ScalarField:
    _check_axes(field.grid)
    return field.with_values(laplacian_values(field))


def laplacian_values(field: ScalarField) -> np.ndarray:
    hs = field.grid.spacing
    lap = np.zeros(field.grid.shape)
    for k in range(field.grid.dim):
        lap += diff2(field.values, k, hs[k])
    return lap


def trace(matrices: np.ndarray) -> np.ndarray:
    """Trace accumulated in the same order as :func:`laplacian_values`."""
    out = np.zeros(matrices.shape[:-2])
    for k in range(matrices.shape[-1]):
        out += matrices[..., k, k]
    return out


# --- interpolation and level sets -------------------------------------------


def interpolate_array(grid: Grid, data: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of node data (scalar or trailing-shaped) at points.

    Raises :class:`OutsideDomainError` if any point lies outside the grid box or
    in a cell touching an exterior node (a NaN corner).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dim = grid.dim
    rel = (points - np.asarray(grid.origin)) / np.asarray(grid.spacing)
    upper = np.asarray(grid.shape) - 1
    tol = 1e-9
    if np.any(rel < -tol) or np.any(rel > upper + tol):
        raise OutsideDomainError("outside domain: point lies outside the grid box")
    rel = np.clip(rel, 0, upper)
    base = np.minimum(np.floor(rel).astype(int), np.maximum(upper - 1, 0))
    frac = rel - base
    # snap round-off so points on cell faces never weight a far corner
    frac[np.abs(frac) < 1e-10] = 0.0
    frac[np.abs(frac - 1.0) < 1e-10] = 1.0
    trailing = data.shape[dim:]
    out = np.zeros((len(points),) + trailing)
    for corner in itertools.product((0, 1), repeat=dim):
        idx = tuple(np.minimum(base[:, k] + corner[k], upper[k]) for k in range(dim))
        w = np.ones(len(points))
        for k, c in enumerate(corner):
            w = w * (frac[:, k] if c else 1.0 - frac[:, k])
        vals = data[idx]
        # exact zero weights must not let a NaN corner poison the result
        contrib = np.where(w.reshape((-1,) + (1,) * len(trailing)) == 0, 0.0, vals)
        if np.isnan(contrib).any():
            raise OutsideDomainError("outside domain: query cell touches an exterior node")
        out += w.reshape((-1,) + (1,) * len(trailing)) * contrib
    return out


def interpolate(field: ScalarField, point) -> float:
    return float(interpolate_array(field.grid, field.values, np.asarray(point, dtype=float))[0])


JET_DEGREE = 4
JET_HALF = 3  # stencil of 2 * JET_HALF nodes per axis around the containing cell


@lru_cache(maxsize=None)
def _jet_operator(dim: int, degree: int, half: int):
    offsets = np.arange(-half + 1, half + 1)
    nodes = np.array(list(itertools.product(offsets, repeat=dim)))
    exps = np.array([e for e in itertools.product(range(degree + 1), repeat=dim) if sum(e) <= degree])
    V = np.prod(nodes[:, None, :].astype(float) ** exps[None], axis=-1)
    return nodes, exps, np.linalg.pinv(V)


def _monomials(frac: np.ndarray, exps: np.ndarray, order: Sequence[int]) -> np.ndarray:
    """Partial derivative ``order`` of every monomial ``frac**e``, shape ``(n_points, n_terms)``."""
    order = np.asarray(order)
    factor = np.ones(len(exps))
    for k, o in enumerate(order):
        for j in range(o):
            factor = factor * (exps[:, k] - j)
    e = np.clip(exps - order, 0, None)
    return np.prod(frac[:, None, :] ** e[None], axis=-1) * factor


def jet_supported(field: ScalarField, points) -> np.ndarray:
    """Whether the local-fit stencil around each point lies on active nodes."""
    grid = field.grid
    points = np.atleast_2d(np.asarray(points, dtype=float))
    rel = (points - np.asarray(grid.origin)) / np.asarray(grid.spacing)
    base = np.floor(rel).astype(int)
    nodes, _, _ = _jet_operator(grid.dim, JET_DEGREE, JET_HALF)
    idx = base[:, None, :] + nodes[None]
    upper = np.asarray(grid.shape) - 1
    inside = np.all((idx >= 0) & (idx <= upper), axis=(1, 2))
    ok = inside.copy()
    if inside.any():
        sub = idx[inside]
        vals = field.values[tuple(sub[..., k] for k in range(grid.dim))]
        ok[inside] = np.isfinite(vals).all(axis=1)
    return ok


def local_jet(field: ScalarField, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Value, gradient and Hessian at arbitrary points from a local polynomial fit.

    A degree-4 least-squares polynomial is fitted to the ``6^N`` nodes around the
    cell containing each point, so derivatives are accurate to ``O(h^4)`` (value),
    ``O(h^4)`` (gradient) and ``O(h^3)`` (Hessian) for smooth data. Raises
    :class:`OutsideDomainError` when a stencil leaves the active nodes.
    """
    grid = field.grid
    dim = grid.dim
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if not jet_supported(field, points).all():
        raise OutsideDomainError("outside domain: local fit stencil leaves the active nodes")
    spacing = np.asarray(grid.spacing)
    rel = (points - np.asarray(grid.origin)) / spacing
    base = np.floor(rel).astype(int)
    frac = rel - base
    nodes, exps, P = _jet_operator(dim, JET_DEGREE, JET_HALF)
    idx = base[:, None, :] + nodes[None]
    vals = field.values[tuple(idx[..., k] for k in range(dim))]
    coef = vals @ P.T
    value = np.sum(coef * _monomials(frac, exps, [0] * dim), axis=1)
    grad = np.empty((len(points), dim))
    hess = np.empty((len(points), dim, dim))
    for i in range(dim):
        order = [0] * dim
        order[i] = 1
        grad[:, i] = np.sum(coef * _monomials(frac, exps, order), axis=1) / spacing[i]
        for j in range(i, dim):
            order2 = list(order)
            order2[j] += 1
            hij = np.sum(coef * _monomials(frac, exps, order2), axis=1) / (spacing[i] * spacing[j])
            hess[:, i, j] = hess[:, j, i] = hij
    return value, grad, hess


def level_set_points(field: ScalarField, s: float) -> np.ndarray:
    """Edge crossings of ``field == s`` by linear interpolation, shape ``(n, dim)``."""
    v = field.values
    vmin, vmax = np.nanmin(v), np.nanmax(v)
    dim = field.grid.dim
    if not (vmin <= s <= vmax):
        return np.empty((0, dim))
    origin, spacing = np.asarray(field.grid.origin), np.asarray(field.grid.spacing)
    chunks = [np.argwhere(v == s).astype(float)]
    for k in range(dim):
        lo = [slice(None)] * dim
        hi = [slice(None)] * dim
        lo[k] = slice(0, -1)
        hi[k] = slice(1, None)
        a, b = v[tuple(lo)], v[tuple(hi)]
        with np.errstate(invalid="ignore"):
            straddle = ((a < s) & (b > s)) | ((a > s) & (b < s))
        idx = np.argwhere(straddle)
        if not len(idx):
            continue
        va, vb = a[straddle], b[straddle]
        t = (s - va) / (vb - va)
        pts = idx.astype(float)
        pts[:, k] += t
        chunks.append(pts)
    pts = np.concatenate(chunks, axis=0)
    return origin + pts * spacing


# --- field file format -------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_field(field: ScalarField, path: str | Path) -> None:
    g = field.grid
    lines = [
        f"dim {g.dim}",
        "shape " + " ".join(str(n) for n in g.shape),
        "origin " + " ".join(_fmt(o) for o in g.origin),
        "spacing " + " ".join(_fmt(h) for h in g.spacing),
        "time " + ("none" if field.time is None else _fmt(field.time)),
    ]
    flags = field.mask.flags
    for index in np.ndindex(*g.shape):
        lines.append(" ".join(str(i) for i in index) + f" {_fmt(field.values[index])} {_MASK_CHARS[int(flags[index])]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_field(path: str | Path) -> ScalarField:
    lines = Path(path).read_text().splitlines()
    header = {}
    for line in lines[:5]:
        key, *rest = line.split()
        header[key] = rest
    dim = int(header["dim"][0])
    shape = tuple(int(x) for x in header["shape"])
    grid = Grid(shape, tuple(float(x) for x in header["origin"]), tuple(float(x) for x in header["spacing"]))
    if grid.dim != dim:
        raise GridError("header dim does not match shape")
    t = header["time"][0]
    time = None if t == "none" else float(t)
    values = np.full(shape, np.nan)
    flags = np.zeros(shape, dtype=np.int8)
    rows = lines[5:]
    if len(rows) != grid.size:
        raise GridError(f"expected {grid.size} node rows, found {len(rows)}")
    for row in rows:
        parts = row.split()
        index = tuple(int(x) for x in parts[:dim])
        values[index] = float(parts[dim])
        flags[index] = _MASK_CODES[parts[dim + 1]]
    return ScalarField(grid, DomainMask(flags), values, time)


def write_series(series: TimeSeriesField, directory: str | Path) -> list[Path]:
    """One ``snapshot_NNNN.field`` file per snapshot, in time order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, snap in enumerate(series.snapshots):
        path = directory / f"snapshot_{k:04d}.field"
        write_field(snap, path)
        paths.append(path)
    return paths


def read_series(directory: str | Path) -> TimeSeriesField:
    paths = sorted(Path(directory).glob("snapshot_*.field"))
    if not paths:
        raise GridError(f"no snapshot files in {directory}")
    snaps = [read_field(p) for p in paths]
    if any(s.time is None for s in snaps):
        raise GridError("series snapshots must carry times")
    return TimeSeriesField(tuple(snaps))
