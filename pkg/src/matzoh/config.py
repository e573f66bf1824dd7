"""Run configuration: grid, domain, operator, initial condition catalog and tolerances.

Configs are plain JSON mappings; every level rejects unknown keys. The
canonical form (all defaults filled in) is what gets hashed, so two files
that differ only in whitespace, key order or spelled-out defaults share a hash.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .classify import ClassifyConfig
from .convex import ConvexBody, body_from_spec
from .evolve import BoundaryCondition, EvolveConfig, run
from .grid import DomainMask, Grid, ScalarField, TimeSeriesField, read_field
from .operators import QuasiLinearOperator, operator_from_spec


class ConfigError(ValueError):
    pass


def _reject_unknown(section: str, spec: dict, allowed) -> None:
    unknown = set(spec) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")


# --- domains ---------------------------------------------------------------------------

DOMAIN_KEYS = {
    "box": set(),
    "ball": {"center", "radius"},
    "annulus": {"center", "r_in", "r_out"},
    "cylinder": {"center", "radius", "axis"},
    "strip": {"normal", "lo", "hi"},
}


def domain_mask(grid: Grid, spec: dict) -> DomainMask:
    """Masks for the bounded domain catalog; ``cylinder`` is round in all axes but ``axis``."""
    spec = dict(spec)
    kind = spec.pop("kind", "box")
    if kind not in DOMAIN_KEYS:
        raise ConfigError(f"unknown domain kind {kind!r}")
    _reject_unknown("domain", spec, DOMAIN_KEYS[kind])
    if kind == "box":
        return DomainMask.box(grid.shape)
    x = grid.points()
    c = np.asarray(spec.get("center", [0.0] * grid.dim), dtype=float)
    r = np.linalg.norm(x - c, axis=-1)
    if kind == "ball":
        inside = r <= float(spec["radius"])
    elif kind == "annulus":
        inside = (r >= float(spec["r_in"])) & (r <= float(spec["r_out"]))
    elif kind == "cylinder":
        d = x - c
        d[..., int(spec.get("axis", grid.dim - 1))] = 0.0
        inside = np.linalg.norm(d, axis=-1) <= float(spec["radius"])
    else:
        n = np.asarray(spec["normal"], dtype=float)
        n = n / np.linalg.norm(n)
        y = x @ n
        inside = (y >= float(spec["lo"])) & (y <= float(spec["hi"]))
    return DomainMask.from_inside(inside)


# --- initial-condition catalog ------------------------------------------------------


@dataclass
class InitialCondition:
    """A catalog entry: ``profile(grid, t)`` is the exact solution when one exists."""

    kind: str
    params: dict

    def exact(self, grid: Grid, t: float, op: QuasiLinearOperator) -> np.ndarray | None:
        X = grid.mesh()
        p = self.params
        if self.kind == "eigenmode" and op.kind == "heat":
            lo = [b for b in p["lo"]]
            L = [b for b in p["length"]]
            out = np.zeros(grid.shape)
            for mode in p["modes"]:
                k = mode["k"]
                lam = sum((ki * np.pi / Li) ** 2 for ki, Li in zip(k, L))
                term = mode.get("amplitude", 1.0) * np.exp(-lam * t) * np.ones(grid.shape)
                for xi, ki, li, Li in zip(X, k, lo, L):
                    term = term * np.sin(ki * np.pi * (xi - li) / Li)
                out += term
            return out
        if self.kind == "gaussian_kernel" and op.kind == "heat":
            c = p.get("center", [0.0] * grid.dim)
            T = p.get("t0", 0.1) + t
            r2 = sum((xi - ci) ** 2 for xi, ci in zip(X, c))
            return p.get("amplitude", 1.0) * (4 * np.pi * T) ** (-grid.dim / 2) * np.exp(-r2 / (4 * T))
        if self.kind == "affine_drift" and op.kind == "heat":
            gamma = p.get("gamma", 1.0)
            axis = p.get("axis", 0)
            return gamma * t + 0.5 * gamma * X[axis] ** 2
        if self.kind == "radial_power" and op.kind == "heat" and p.get("power", 2.0) == 2.0:
            c = p.get("center", [0.0] * grid.dim)
            return sum((xi - ci) ** 2 for xi, ci in zip(X, c)) + 2 * grid.dim * t
        return None

    def initial(self, grid: Grid, op: QuasiLinearOperator) -> np.ndarray:
        if self.kind == "radial_power":
            c = self.params.get("center", [0.0] * grid.dim)
            r = np.sqrt(sum((xi - ci) ** 2 for xi, ci in zip(grid.mesh(), c)))
            return r ** self.params.get("power", 2.0)
        if self.kind == "tabulated":
            return read_field(self.params["path"]).values
        vals = self.exact(grid, 0.0, QuasiLinearOperator(grid.dim))
        return vals


IC_KEYS = {
    "eigenmode": {"modes"},
    "gaussian_kernel": {"t0", "center", "amplitude"},
    "radial_power": {"power", "center"},
    "affine_drift": {"gamma", "axis"},
    "tabulated": {"path"},
}


def initial_condition(spec: dict, grid: Grid) -> InitialCondition:
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in IC_KEYS:
        raise ConfigError(f"unknown initial condition {kind!r}")
    _reject_unknown("initial", spec, IC_KEYS[kind])
    if kind == "eigenmode":
        modes = spec.get("modes", [{"k": [1] * grid.dim, "amplitude": 1.0}])
        for m in modes:
            _reject_unknown("eigenmode mode", m, {"k", "amplitude"})
            if len(m["k"]) != grid.dim:
                raise ConfigError("eigenmode wave numbers must match the grid dimension")
        ax = grid.axes()
        spec["modes"] = modes
        spec["lo"] = [float(a[0]) for a in ax]
        spec["length"] = [float(a[-1] - a[0]) for a in ax]
    if kind == "tabulated" and "path" not in spec:
        raise ConfigError("tabulated initial condition needs a path")
    return InitialCondition(kind, spec)


# --- the run config ---------------------------------------------------------------------


@dataclass
class RunConfig:
    grid: dict
    initial: dict
    domain: dict = field(default_factory=lambda: {"kind": "box"})
    operator: dict = field(default_factory=lambda: {"kind": "heat"})
    body: dict | None = None
    source: str = "auto"
    bc: dict = field(default_factory=lambda: {"kind": "dirichlet", "exact": True})
    evolve: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)

    ANALYSIS_EXTRA = {"method", "surface_levels"}

    def __post_init__(self):
        _reject_unknown("grid", self.grid, {"bounds", "spacing"})
        if "bounds" not in self.grid or "spacing" not in self.grid:
            raise ConfigError("grid needs bounds and spacing")
        if self.source not in ("auto", "analytic", "evolve"):
            raise ConfigError("source must be auto, analytic or evolve")
        _reject_unknown("bc", self.bc, {"kind", "value", "exact"})
        if self.bc.get("kind", "dirichlet") not in ("dirichlet", "neumann", "frozen"):
            raise ConfigError(f"unknown boundary condition {self.bc.get('kind')!r}")
        _reject_unknown("evolve", self.evolve, {"snapshot_times", "dt", "cfl_safety"})
        allowed = {f.name for f in fields(ClassifyConfig)} | self.ANALYSIS_EXTRA
        _reject_unknown("analysis", self.analysis, allowed)
        if self.analysis.get("method", "generic") not in ("heat", "generic"):
            raise ConfigError("analysis.method must be heat or generic")
        # validate the nested builders early so errors surface as config errors
        try:
            g = self.build_grid()
            domain_mask(g, self.domain)
            self.build_operator()
            self.build_body()
            initial_condition(self.initial, g)
            self.evolve_config()
        except ConfigError:
            raise
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    # builders
    def build_grid(self) -> Grid:
        return Grid.from_bounds([tuple(b) for b in self.grid["bounds"]], self.grid["spacing"])

    def build_operator(self) -> QuasiLinearOperator:
        return operator_from_spec(self.operator, len(self.grid["bounds"]))

    def build_body(self) -> ConvexBody | None:
        if self.body is not None:
            return body_from_spec(self.body, len(self.grid["bounds"]))
        op = self.build_operator()
        return op.body

    def evolve_config(self) -> EvolveConfig:
        spec = {"snapshot_times": [0.1 * k for k in range(1, 11)], **self.evolve}
        return EvolveConfig(**spec)

    def classify_config(self) -> ClassifyConfig:
        spec = {k: v for k, v in self.analysis.items() if k not in self.ANALYSIS_EXTRA}
        return ClassifyConfig(**spec)

    @property
    def method(self) -> str:
        return self.analysis.get("method", "generic")

    @property
    def surface_levels(self) -> int:
        return int(self.analysis.get("surface_levels", 3))

    # serialization
    @classmethod
    def from_dict(cls, spec: dict) -> RunConfig:
        if not isinstance(spec, dict):
            raise ConfigError("config must be a mapping")
        allowed = {f.name for f in fields(cls)}
        _reject_unknown("config", spec, allowed)
        missing = {"grid", "initial"} - set(spec)
        if missing:
            raise ConfigError(f"config is missing {sorted(missing)}")
        return cls(**spec)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        try:
            spec = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(spec)

    def canonical(self) -> dict:
        d = asdict(self)
        d["evolve"] = {
            "snapshot_times": self.evolve_config().snapshot_times,
            "dt": self.evolve_config().dt,
            "cfl_safety": self.evolve_config().cfl_safety,
        }
        d["analysis"] = {**asdict(self.classify_config()), "method": self.method, "surface_levels": self.surface_levels}
        d["bc"] = {"kind": "dirichlet", "exact": True, **self.bc}
        return json.loads(json.dumps(d))

    def config_hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


# --- building the series ----------------------------------------------------------------


def build_series(config: RunConfig) -> TimeSeriesField:
    """Sample the exact solution (``analytic``) or integrate the scheme (``evolve``)."""
    grid = config.build_grid()
    mask = domain_mask(grid, config.domain)
    op = config.build_operator()
    ic = initial_condition(config.initial, grid)
    ev = config.evolve_config()
    source = config.source
    if source == "auto":
        source = "analytic" if ic.exact(grid, 0.0, op) is not None else "evolve"
    if source == "analytic":
        if ic.exact(grid, 0.0, op) is None:
            raise ConfigError(f"no exact solution for {ic.kind} under {op.kind}")
        snaps = tuple(ScalarField(grid, mask, ic.exact(grid, t, op), t) for t in ev.snapshot_times)
        return TimeSeriesField(snaps)
    u0 = ScalarField(grid, mask, ic.initial(grid, op), 0.0)
    return run(u0, op, boundary_condition(config, ic, grid, op), ev)


def boundary_condition(config: RunConfig, ic: InitialCondition, grid: Grid, op) -> BoundaryCondition:
    spec = config.bc
    kind = spec.get("kind", "dirichlet")
    if kind != "dirichlet":
        return BoundaryCondition(kind)
    if "value" in spec:
        return BoundaryCondition("dirichlet", values=float(spec["value"]))
    if spec.get("exact", True) and ic.exact(grid, 0.0, op) is not None:
        return BoundaryCondition("dirichlet", profile=lambda t: ic.exact(grid, t, op))
    return BoundaryCondition("frozen")


def to_jsonable(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays and tuples to JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.floating):
        return to_jsonable(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj
