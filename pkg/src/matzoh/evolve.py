"""Explicit (forward Euler) integration of ``u_t = Q u`` on a masked grid."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .grid import DomainMask, Grid, ScalarField, TimeSeriesField
from .operators import QuasiLinearOperator, apply_Q_values, max_coefficient_eigenvalue

log = logging.getLogger(__name__)


class CFLError(ValueError):
    pass


class NumericalError(RuntimeError):
    def __init__(self, message: str, step_index: int):
        super().__init__(f"{message} at step {step_index}")
        self.step_index = step_index


@dataclass(frozen=True, eq=False)
class BoundaryCondition:
    """Boundary treatment for the explicit scheme.

    ``dirichlet``: boundary nodes take ``values`` (scalar or grid-shaped array),
    or ``profile(t)`` when a time profile is given (used to manufacture drift
    solutions). ``frozen`` holds the initial boundary values. ``neumann``
    imposes ``u_nu = 0`` by mirrored ghost nodes and is limited to box masks.
    """

    kind: str = "frozen"
    values: float | np.ndarray | None = None
    profile: Callable[[float], np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann", "frozen"):
            raise ValueError(f"unknown boundary condition {self.kind!r}")
        if self.kind == "dirichlet" and self.values is None and self.profile is None:
            raise ValueError("dirichlet condition needs values or a time profile")
        if self.values is not None and not np.all(np.isfinite(np.asarray(self.values, dtype=float))):
            raise ValueError("dirichlet values must be finite")

    def boundary_values(self, grid: Grid, t: float) -> np.ndarray | None:
        if self.kind != "dirichlet":
            return None
        if self.profile is not None:
            return np.broadcast_to(np.asarray(self.profile(t), dtype=float), grid.shape)
        return np.broadcast_to(np.asarray(self.values, dtype=float), grid.shape)


@dataclass
class EvolveConfig:
    snapshot_times: Sequence[float]
    dt: float | str = "auto"
    cfl_safety: float = 0.9

    def __post_init__(self):
        self.snapshot_times = [float(t) for t in self.snapshot_times]
        if not self.snapshot_times or np.any(np.diff(self.snapshot_times) <= 0):
            raise ValueError("snapshot_times must be non-empty and strictly increasing")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if self.dt != "auto" and not float(self.dt) > 0:
            raise ValueError("dt must be positive or 'auto'")


def cfl_dt(op: QuasiLinearOperator, field: ScalarField, cfl_safety: float = 0.9) -> float:
    """``safety * min(h^2) / (2 N Lambda)`` with Lambda the largest coefficient eigenvalue."""
    lam = max_coefficient_eigenvalue(op, field)
    if not lam > 0:
        raise CFLError("degenerate operator: largest coefficient eigenvalue is zero")
    h2 = min(h * h for h in field.grid.spacing)
    return cfl_safety * h2 / (2 * field.grid.dim * lam)


def _neumann_rate(op: QuasiLinearOperator, field: ScalarField) -> np.ndarray:
    if not field.mask.is_box:
        raise ValueError("neumann_homogeneous is implemented for box masks only")
    padded_values = np.pad(field.values, 1, mode="reflect")
    g = field.grid
    pgrid = Grid(tuple(n + 2 for n in g.shape), tuple(o - h for o, h in zip(g.origin, g.spacing)), g.spacing)
    padded = ScalarField(pgrid, DomainMask.box(pgrid.shape), padded_values)
    rate, _ = apply_Q_values(op, padded)
    return rate[(slice(1, -1),) * g.dim]


def step(field: ScalarField, op: QuasiLinearOperator, bc: BoundaryCondition, dt: float) -> ScalarField:
    """One forward-Euler step from ``field.time`` (0 if untagged) to ``time + dt``."""
    t0 = 0.0 if field.time is None else field.time
    t1 = t0 + dt
    mask = field.mask
    if bc.kind == "neumann":
        rate = _neumann_rate(op, field)
        new = field.values + dt * rate
    else:
        rate, _ = apply_Q_values(op, field, region=mask.interior)
        new = field.values.copy()
        new[mask.interior] += dt * rate[mask.interior]
        bvals = bc.boundary_values(field.grid, t1)
        if bvals is not None:
            new[mask.boundary] = bvals[mask.boundary]
    if not np.isfinite(new[mask.active]).all():
        raise NumericalError("non-finite values (NaN/overflow)", -1)
    return ScalarField(field.grid, mask, new, t1)


def run(initial: ScalarField, op: QuasiLinearOperator, bc: BoundaryCondition, config: EvolveConfig) -> TimeSeriesField:
    """Integrate from ``initial.time`` to the last snapshot time.

    Snapshots are linear-in-time interpolants between the bracketing steps.
    A numeric ``dt`` is checked against the CFL bound (safety 1) every step;
    ``"auto"`` recomputes the bound per step for gradient-dependent operators.
    """
    t_start = 0.0 if initial.time is None else float(initial.time)
    targets = list(config.snapshot_times)
    if targets[0] < t_start - 1e-12:
        raise ValueError("snapshot times must not precede the initial time")
    mask = initial.mask
    u = initial.with_values(initial.values, t_start)
    if bc.kind == "dirichlet":
        bvals = bc.boundary_values(u.grid, t_start)
        vals = u.values.copy()
        vals[mask.boundary] = bvals[mask.boundary]
        u = u.with_values(vals, t_start)
    fixed_dt = None if config.dt == "auto" else float(config.dt)
    constant_bound = op.kind in ("heat", "normalized_p_laplace")
    bound = cfl_dt(op, u, 1.0) if constant_bound else None

    snaps: list[ScalarField] = []
    pending = 0
    while pending < len(targets) and targets[pending] <= t_start + 1e-12 * max(1.0, abs(t_start)):
        snaps.append(u.with_values(u.values, targets[pending]))
        pending += 1

    n = 0
    t = t_start
    while pending < len(targets):
        if not constant_bound:
            bound = cfl_dt(op, u, 1.0)
        if fixed_dt is None:
            dt = config.cfl_safety * bound
        else:
            dt = fixed_dt
            if dt > bound * (1 + 1e-12):
                raise CFLError(f"dt={dt:g} exceeds the stability bound {bound:g} at step {n}")
        t_next = t_start + (n + 1) * dt if fixed_dt is not None or constant_bound else t + dt
        try:
            nxt = step(u, op, bc, t_next - t)
        except NumericalError:
            raise NumericalError("non-finite values (NaN/overflow)", n) from None
        if np.abs(nxt.values[mask.active]).max() > 1e300:
            raise NumericalError("overflow", n)
        while pending < len(targets) and targets[pending] <= t_next + 1e-12 * max(1.0, abs(t_next)):
            s = targets[pending]
            w = (s - t) / (t_next - t)
            w = min(max(w, 0.0), 1.0)
            snaps.append(u.with_values((1 - w) * u.values + w * nxt.values, s))
            pending += 1
        u, t, n = nxt, t_next, n + 1
    log.debug("evolve: %d steps to t=%g", n, t)
    return TimeSeriesField(tuple(snaps), np.asarray(targets))


def trapezoid_mass(field: ScalarField) -> float:
    """Trapezoid-weighted sum of nodal values on a box (the quantity the Neumann scheme conserves)."""
    w = np.ones(field.grid.shape)
    for k, n in enumerate(field.grid.shape):
        sl = [slice(None)] * field.grid.dim
        for idx in (0, n - 1):
            sl[k] = idx
            w[tuple(sl)] *= 0.5
    return float(np.sum(w * np.nan_to_num(field.values)))
