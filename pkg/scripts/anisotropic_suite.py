"""Anisotropic mean-curvature and geodesic diagnostics for an ellipse gauge field.

    python3 scripts/anisotropic_suite.py --spacing 0.01 --a 4 --b 1
"""

import argparse

import numpy as np

from matzoh.convex import ConvexBody
from matzoh.grid import DomainMask, Grid, ScalarField, level_set_points
from matzoh.isoparametric import (
    aniso_geometry,
    classify_surface,
    fit_gradient_function,
    geodesic_trace,
    normalize_to_unit_f,
    parallelism,
)


def gauge_field(a: float, b: float, h: float, lo: float = 0.5, hi: float = 1.8) -> ScalarField:
    ha, hb = np.sqrt(a) * hi + 0.1, np.sqrt(b) * hi + 0.1
    g = Grid.from_bounds([(-ha, ha), (-hb, hb)], h)
    X, Y = g.mesh()
    phi = np.sqrt(X**2 / a + Y**2 / b)
    mask = DomainMask.from_inside((phi >= lo) & (phi <= hi))
    return ScalarField(g, mask, np.where(mask.active, phi, np.nan))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--spacing", type=float, default=0.01)
    ap.add_argument("--a", type=float, default=4.0)
    ap.add_argument("--b", type=float, default=1.0)
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args()

    body = ConvexBody(2, "ellipsoid", A=np.diag([args.a, args.b]))
    phi = gauge_field(args.a, args.b, args.spacing)
    f_fit = fit_gradient_function(phi, body)
    print(f"{'level':>6} {'M mean':>10} {'M spread':>10} {'trace':>10} {'shape':>10} {'identities':>11} type")
    for level in (0.7, 1.0, 1.5):
        pts = level_set_points(phi, level)[::5]
        geo = aniso_geometry(phi, pts, body, f_fit)
        surf = classify_surface(phi, level, body)
        print(
            f"{level:6.2f} {np.mean(geo.M):10.6f} {np.std(geo.M) / abs(np.mean(geo.M)):10.2e} "
            f"{geo.trace_mismatch:10.2e} {geo.shape_residual.max():10.2e} {geo.identity_residuals.max():11.2e} {surf.label}"
        )

    psi = normalize_to_unit_f(phi, f_fit)
    th = np.linspace(0, 2 * np.pi, args.seeds, endpoint=False)
    seeds = np.stack([np.sqrt(args.a) * np.cos(th), np.sqrt(args.b) * np.sin(th)], axis=1)
    traces = [geodesic_trace(psi, y, body, 0.3) for y in seeds]
    print(
        f"geodesics: straightness {max(t.straightness for t in traces):.2e}, "
        f"rate error {max(t.max_rate_error for t in traces):.2e}, parallelism {parallelism(traces):.2e}"
    )


if __name__ == "__main__":
    main()
