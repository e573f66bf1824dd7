"""Support functions of convex bodies and the quadratic H = h^2 / 2.

All evaluators are vectorised over leading axes: ``xi`` has shape ``(..., N)``,
gradients come back as ``(..., N)`` and Hessians as ``(..., N, N)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class SupportError(ValueError):
    pass


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


def _check_nonzero(xi: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(xi, axis=-1)
    if np.any(norm == 0):
        raise SupportError("support undefined at origin")
    return norm


@dataclass(frozen=True, eq=False)
class ConvexBody:
    """A convex body K described through its support function h.

    ``kind`` is one of ``euclidean_ball``, ``ellipsoid`` (``h = sqrt(xi.A.xi)``),
    ``perturbed_ball`` (``h = |xi| + eps * xi.B.xi / |xi|``) or ``custom``.
    Custom bodies supply ``h`` and optionally ``dh``/``d2h``; missing
    derivatives fall back to central differences with step ``1e-5 |xi|``.
    """

    dim: int
    kind: str = "euclidean_ball"
    A: np.ndarray | None = None
    eps: float = 0.0
    B: np.ndarray | None = None
    h_fn: Callable | None = field(default=None, repr=False)
    dh_fn: Callable | None = field(default=None, repr=False)
    d2h_fn: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind == "ellipsoid":
            A = np.asarray(self.A, dtype=float)
            if A.shape != (self.dim, self.dim) or not np.allclose(A, A.T):
                raise SupportError("ellipsoid matrix must be symmetric N x N")
            if np.linalg.eigvalsh(A).min() <= 0:
                raise SupportError("ellipsoid matrix must be positive definite")
            object.__setattr__(self, "A", A)
        elif self.kind == "perturbed_ball":
            B = np.asarray(self.B, dtype=float)
            if B.shape != (self.dim, self.dim) or not np.allclose(B, B.T):
                raise SupportError("perturbation matrix must be symmetric N x N")
            object.__setattr__(self, "B", B)
        elif self.kind == "custom":
            if self.h_fn is None:
                raise SupportError("custom body needs an h evaluator")
        elif self.kind != "euclidean_ball":
            raise SupportError(f"unknown body kind {self.kind!r}")

    # --- h and its derivatives ----------------------------------------------

    def h(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        r = _check_nonzero(xi)
        if self.kind == "euclidean_ball":
            return r
        if self.kind == "ellipsoid":
            return np.sqrt(np.einsum("...i,ij,...j->...", xi, self.A, xi))
        if self.kind == "perturbed_ball":
            return r + self.eps * np.einsum("...i,ij,...j->...", xi, self.B, xi) / r
        return np.asarray(self.h_fn(xi), dtype=float)

    def dh(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        r = _check_nonzero(xi)[..., None]
        if self.kind == "euclidean_ball":
            return xi / r
        if self.kind == "ellipsoid":
            Ax = xi @ self.A
            return Ax / self.h(xi)[..., None]
        if self.kind == "perturbed_ball":
            Bx = xi @ self.B
            q = np.sum(xi * Bx, axis=-1)[..., None]
            return xi / r + self.eps * (2 * Bx / r - q * xi / r**3)
        if self.dh_fn is not None:
            return np.asarray(self.dh_fn(xi), dtype=float)
        return self._fd_gradient(self.h, xi)

    def d2h(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        r = _check_nonzero(xi)[..., None, None]
        eye = np.eye(self.dim)
        if self.kind == "euclidean_ball":
            nu = xi / r[..., 0]
            return (eye - _outer(nu, nu)) / r
        if self.kind == "ellipsoid":
            h = self.h(xi)[..., None, None]
            Ax = xi @ self.A
            return (self.A - _outer(Ax, Ax) / h**2) / h
        if self.kind == "perturbed_ball":
            Bx = xi @ self.B
            q = np.sum(xi * Bx, axis=-1)[..., None, None]
            xx = _outer(xi, xi)
            iso = (eye - xx / r**2) / r
            pert = (
                2 * self.B / r
                - 2 * (_outer(Bx, xi) + _outer(xi, Bx)) / r**3
                - q * eye / r**3
                + 3 * q * xx / r**5
            )
            return iso + self.eps * pert
        if self.d2h_fn is not None:
            return np.asarray(self.d2h_fn(xi), dtype=float)
        return self._fd_gradient(self.dh, xi)

    def _fd_gradient(self, fn, xi: np.ndarray) -> np.ndarray:
        step = 1e-5 * np.linalg.norm(xi, axis=-1)
        cols = []
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = 1.0
            delta = fn(xi + step[..., None] * e) - fn(xi - step[..., None] * e)
            denom = (2 * step).reshape(step.shape + (1,) * (delta.ndim - step.ndim))
            cols.append(delta / denom)
        return np.stack(cols, axis=-1)

    # --- H = h^2 / 2 ----------------------------------------------------------

    def H(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if self.kind == "euclidean_ball":
            _check_nonzero(xi)
            return 0.5 * np.sum(xi * xi, axis=-1)
        return 0.5 * self.h(xi) ** 2

    def dH(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        _check_nonzero(xi)
        if self.kind == "euclidean_ball":
            return xi.copy()
        if self.kind == "ellipsoid":
            return xi @ self.A
        return self.h(xi)[..., None] * self.dh(xi)

    def d2H(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        _check_nonzero(xi)
        shape = xi.shape[:-1] + (self.dim, self.dim)
        if self.kind == "euclidean_ball":
            return np.broadcast_to(np.eye(self.dim), shape).copy()
        if self.kind == "ellipsoid":
            return np.broadcast_to(self.A, shape).copy()
        dh = self.dh(xi)
        return _outer(dh, dh) + self.h(xi)[..., None, None] * self.d2h(xi)

    # --- Wulff shape and C^2_+ sampling ----------------------------------------

    def gauge(self, x, n_directions: int = 4096) -> np.ndarray:
        """Gauge (Minkowski functional) of K, ``max_nu x.nu / h(nu)`` over sampled directions."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "euclidean_ball":
            return np.linalg.norm(x, axis=-1)
        if self.kind == "ellipsoid":
            return np.sqrt(np.einsum("...i,ij,...j->...", x, np.linalg.inv(self.A), x))
        nu = unit_directions(self.dim, n_directions)
        return np.max(x @ (nu / self.h(nu)[:, None]).T, axis=-1)


def support(body: ConvexBody, xi) -> float | np.ndarray:
    return body.h(xi)


def dH(body: ConvexBody, xi) -> np.ndarray:
    return body.dH(xi)


def d2H(body: ConvexBody, xi) -> np.ndarray:
    return body.d2H(xi)


def unit_directions(dim: int, n: int) -> np.ndarray:
    """Quasi-uniform unit vectors; the first one is always ``e_1``."""
    if n < 1:
        raise ValueError("need at least one direction")
    if dim == 1:
        return np.array([[1.0], [-1.0]] * ((n + 1) // 2))[:n]
    if dim == 2:
        theta = 2 * np.pi * np.arange(n) / n
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    if dim == 3:
        if n == 1:
            return np.array([[1.0, 0.0, 0.0]])
        k = np.arange(n)
        z = 1 - 2 * k / (n - 1)
        phi = k * np.pi * (3 - np.sqrt(5))
        rho = np.sqrt(np.clip(1 - z * z, 0, None))
        return np.stack([z, rho * np.cos(phi), rho * np.sin(phi)], axis=-1)
    rng = np.random.default_rng(0)
    v = rng.standard_normal((n, dim))
    v[0] = np.eye(dim)[0]
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def wulff_boundary(body: ConvexBody, n_samples: int) -> np.ndarray:
    """Points ``Dh(nu)`` on the boundary of K for quasi-uniform unit ``nu``."""
    return body.dh(unit_directions(body.dim, n_samples))


def tangent_basis(nu: np.ndarray) -> np.ndarray:
    """Orthonormal bases of ``nu``-perpendicular planes, shape ``(..., N, N-1)``."""
    nu = np.asarray(nu, dtype=float)
    dim = nu.shape[-1]
    flat = nu.reshape(-1, dim)
    out = np.empty((len(flat), dim, dim - 1))
    for i, n in enumerate(flat):
        # columns 1.. of a full QR of [n | I] span the orthogonal complement
        q, _ = np.linalg.qr(np.column_stack([n, np.eye(dim)]), mode="complete")
        out[i] = q[:, 1:]
    return out.reshape(nu.shape[:-1] + (dim, dim - 1))


@dataclass
class C2PlusReport:
    passed: bool
    min_tangential_eigenvalue: float
    max_normal_defect: float


def check_C2_plus(body: ConvexBody, n_directions: int = 512, tol_pd: float = 1e-8, tol_normal: float = 1e-8) -> C2PlusReport:
    nu = unit_directions(body.dim, n_directions)
    d2 = body.d2h(nu)
    normal_defect = float(np.max(np.linalg.norm(np.einsum("...ij,...j->...i", d2, nu), axis=-1)))
    if body.dim == 1:
        return C2PlusReport(normal_defect <= tol_normal, float("inf"), normal_defect)
    T = tangent_basis(nu)
    tangential = np.einsum("...ia,...ij,...jb->...ab", T, d2, T)
    lam = float(np.min(np.linalg.eigvalsh(tangential)))
    return C2PlusReport(lam >= tol_pd and normal_defect <= tol_normal, lam, normal_defect)


def body_from_spec(spec: dict, dim: int | None = None) -> ConvexBody:
    """Build a body from a config mapping such as ``{"kind": "ellipsoid", "A": [[4, 0], [0, 1]]}``."""
    spec = dict(spec)
    kind = spec.pop("kind", "euclidean_ball")
    allowed = {"euclidean_ball": {"dim"}, "ellipsoid": {"A", "dim"}, "perturbed_ball": {"eps", "B", "dim"}}
    if kind not in allowed:
        raise SupportError(f"unknown body kind {kind!r}")
    unknown = set(spec) - allowed[kind]
    if unknown:
        raise SupportError(f"unknown body keys: {sorted(unknown)}")
    if kind == "ellipsoid":
        A = np.asarray(spec["A"], dtype=float)
        return ConvexBody(A.shape[0], "ellipsoid", A=A)
    if kind == "perturbed_ball":
        B = np.asarray(spec["B"], dtype=float)
        return ConvexBody(B.shape[0], "perturbed_ball", eps=float(spec.get("eps", 0.0)), B=B)
    d = spec.get("dim", dim)
    if d is None:
        raise SupportError("euclidean_ball needs a dimension")
    return ConvexBody(int(d), "euclidean_ball")


def body_to_spec(body: ConvexBody) -> dict:
    if body.kind == "ellipsoid":
        return {"kind": "ellipsoid", "A": body.A.tolist()}
    if body.kind == "perturbed_ball":
        return {"kind": "perturbed_ball", "eps": body.eps, "B": body.B.tolist()}
    if body.kind == "euclidean_ball":
        return {"kind": "euclidean_ball", "dim": body.dim}
    return {"kind": "custom", "dim": body.dim}
