"""Quasi-linear operators ``Q u = sum a_ij(Du) u_ij`` with alpha-homogeneous coefficients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convex import ConvexBody, body_from_spec, body_to_spec
from .grid import EXTERIOR, DomainMask, ScalarField, diff1, gradient, hessian, laplacian_values

G_FLOOR = 1e-8


class DegenerateGradientError(ValueError):
    """Raised when |Du| drops below the gradient floor at interior nodes."""

    def __init__(self, message: str, nodes: np.ndarray):
        super().__init__(f"{message} ({len(nodes)} node(s), first: {nodes[:5].tolist()})")
        self.nodes = nodes


@dataclass(frozen=True, eq=False)
class QuasiLinearOperator:
    dim: int
    kind: str = "heat"
    p: float = 2.0
    body: ConvexBody | None = None
    g_floor: float = G_FLOOR

    def __post_init__(self):
        if self.kind not in ("heat", "p_laplace", "normalized_p_laplace", "h_laplace"):
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.kind in ("p_laplace", "normalized_p_laplace") and not self.p > 1:
            raise ValueError("p-Laplace operators need p > 1")
        if self.kind == "h_laplace":
            if self.body is None or self.body.dim != self.dim:
                raise ValueError("h_laplace needs a body of matching dimension")
        if not self.alpha > -1:
            raise ValueError("homogeneity degree must satisfy alpha > -1")

    @property
    def alpha(self) -> float:
        return self.p - 2.0 if self.kind == "p_laplace" else 0.0

    def coefficients(self, xi) -> np.ndarray:
        """Coefficient matrices ``a(xi)``, shape ``(..., N, N)``."""
        xi = np.asarray(xi, dtype=float)
        shape = xi.shape[:-1] + (self.dim, self.dim)
        eye = np.eye(self.dim)
        if self.kind == "heat":
            return np.broadcast_to(eye, shape).copy()
        r = np.linalg.norm(xi, axis=-1)
        if np.any(r == 0):
            raise DegenerateGradientError("degenerate gradient", np.argwhere(r == 0))
        if self.kind == "h_laplace":
            return self.body.d2H(xi)
        nu = xi / r[..., None]
        a = eye + (self.p - 2.0) * nu[..., :, None] * nu[..., None, :]
        if self.kind == "p_laplace":
            a = r[..., None, None] ** (self.p - 2.0) * a
        return a

    def to_spec(self) -> dict:
        spec = {"kind": self.kind}
        if self.kind in ("p_laplace", "normalized_p_laplace"):
            spec["p"] = self.p
        if self.kind == "h_laplace":
            spec["body"] = body_to_spec(self.body)
        return spec


def operator_from_spec(spec: dict, dim: int) -> QuasiLinearOperator:
    spec = dict(spec)
    kind = spec.pop("kind", "heat")
    body = spec.pop("body", None)
    p = float(spec.pop("p", 2.0))
    g_floor = float(spec.pop("g_floor", G_FLOOR))
    if spec:
        raise ValueError(f"unknown operator keys: {sorted(spec)}")
    if body is not None:
        body = body_from_spec(body, dim)
    return QuasiLinearOperator(dim, kind, p, body, g_floor)


def coefficients(op: QuasiLinearOperator, xi) -> np.ndarray:
    return op.coefficients(xi)


def _evaluation_nodes(op: QuasiLinearOperator, field: ScalarField, grad: np.ndarray, region) -> np.ndarray:
    """Active nodes to evaluate at; interior nodes below the floor are an error."""
    nodes = field.mask.active.copy()
    if region is not None:
        nodes &= np.asarray(region, dtype=bool)
    if op.kind == "heat":
        return nodes
    small = np.linalg.norm(np.nan_to_num(grad), axis=-1) < op.g_floor
    bad = small & nodes & field.mask.interior
    if bad.any():
        raise DegenerateGradientError("|Du| below gradient floor at interior nodes", np.argwhere(bad))
    return nodes & ~small


def _restricted(field: ScalarField, values: np.ndarray, nodes: np.ndarray) -> ScalarField:
    if nodes.all() or np.array_equal(nodes, field.mask.active):
        return field.with_values(values)
    flags = np.where(nodes, field.mask.flags, EXTERIOR)
    return ScalarField(field.grid, DomainMask(flags), np.where(nodes, values, np.nan), field.time)


def apply_Q_values(op: QuasiLinearOperator, field: ScalarField, region=None) -> tuple[np.ndarray, np.ndarray]:
    """Raw ``Q u`` array (NaN off the evaluation set) and the evaluation node mask."""
    if op.kind == "heat":
        nodes = _evaluation_nodes(op, field, None, region)
        return laplacian_values(field), nodes
    grad = gradient(field)
    nodes = _evaluation_nodes(op, field, grad, region)
    hess = hessian(field)
    a = np.full(hess.shape, np.nan)
    a[nodes] = op.coefficients(grad[nodes])
    out = np.zeros(field.grid.shape)
    # accumulate in a fixed (i, j) order so identity coefficients reproduce the Laplacian bitwise
    for i in range(op.dim):
        for j in range(op.dim):
            out += a[..., i, j] * hess[..., i, j]
    return out, nodes


def apply_Q(op: QuasiLinearOperator, field: ScalarField, region=None) -> ScalarField:
    values, nodes = apply_Q_values(op, field, region)
    return _restricted(field, values, nodes)


def apply_G(op: QuasiLinearOperator, field: ScalarField, region=None) -> ScalarField:
    """Generalised gradient ``Du . a(Du) Du``."""
    grad = gradient(field)
    nodes = _evaluation_nodes(op, field, grad, region)
    out = np.full(field.grid.shape, np.nan)
    g = grad[nodes]
    out[nodes] = np.einsum("ni,nij,nj->n", g, op.coefficients(g), g)
    return _restricted(field, out, nodes)


def max_coefficient_eigenvalue(op: QuasiLinearOperator, field: ScalarField) -> float:
    """Largest eigenvalue of ``a(Du)`` over interior nodes."""
    if op.kind == "heat":
        return 1.0
    grad = gradient(field)
    g = grad[field.mask.interior]
    r = np.linalg.norm(g, axis=-1)
    if op.kind == "p_laplace":
        return float(np.max(r ** (op.p - 2.0)) * max(1.0, op.p - 1.0))
    if op.kind == "normalized_p_laplace":
        return max(1.0, op.p - 1.0)
    keep = r >= op.g_floor
    if not keep.any():
        return 0.0
    return float(np.max(np.linalg.eigvalsh(op.coefficients(g[keep]))))


def estimate_alpha(op: QuasiLinearOperator, xi, sigmas=(0.5, 1.0, 2.0, 4.0, 8.0)) -> float:
    """Slope of ``log ||a(sigma xi)||`` against ``log sigma``."""
    xi = np.asarray(xi, dtype=float)
    sig = np.asarray(sigmas, dtype=float)
    norms = [np.linalg.norm(op.coefficients(s * xi)) for s in sig]
    slope, _ = np.polyfit(np.log(sig), np.log(norms), 1)
    return float(slope)


def p_laplace_divergence(field: ScalarField, p: float) -> np.ndarray:
    """``div(|Du|^{p-2} Du)`` by differencing the flux; an independent cross-check of ``apply_Q``."""
    grad = gradient(field)
    r = np.linalg.norm(grad, axis=-1)
    flux = r[..., None] ** (p - 2.0) * grad
    out = np.zeros(field.grid.shape)
    for k, h in enumerate(field.grid.spacing):
        out += diff1(flux[..., k], k, h)
    return out
