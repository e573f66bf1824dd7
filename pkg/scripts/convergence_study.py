"""Grid-refinement study: recovered decay rate of the evolved sine mode and
the Laplacian error on the unit-sphere distance field.

    python3 scripts/convergence_study.py --levels 4
"""

import argparse

import numpy as np

from matzoh.classify import classify
from matzoh.evolve import BoundaryCondition, EvolveConfig, run
from matzoh.grid import DomainMask, Grid, ScalarField, laplacian_values
from matzoh.operators import QuasiLinearOperator


def eigen_rate_error(n: int) -> float:
    g = Grid.from_bounds([(0.0, np.pi)], np.pi / n)
    u0 = ScalarField.from_function(g, np.sin, time=0.0)
    series = run(u0, QuasiLinearOperator(1), BoundaryCondition("dirichlet", values=0.0), EvolveConfig(np.arange(1, 11) / 10))
    return abs(classify(series).lambda_ - 1.0)


def radial_laplacian_error(h: float) -> float:
    g = Grid.from_bounds([(-1.6, 1.6)] * 3, h)
    X, Y, Z = g.mesh()
    R = np.sqrt(X**2 + Y**2 + Z**2)
    mask = DomainMask.from_inside((R >= 0.8) & (R <= 1.5))
    phi = ScalarField(g, mask, np.where(mask.active, R, np.nan))
    inner = mask.interior
    return float(np.abs(laplacian_values(phi)[inner] - 2 / R[inner]).max())


def table(rows, label):
    print(f"{label:<10} {'error':>12} {'order':>8}")
    prev = None
    for h, e in rows:
        order = "" if prev is None else f"{np.log2(prev / e):8.2f}"
        print(f"{h:<10.4g} {e:12.3e} {order:>8}")
        prev = e


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, default=4)
    args = ap.parse_args()
    ns = [50 * 2**k for k in range(args.levels)]
    table([(np.pi / n, eigen_rate_error(n)) for n in ns], "spacing")
    print()
    hs = [0.2 / 2**k for k in range(min(args.levels, 3))]
    table([(h, radial_laplacian_error(h)) for h in hs], "spacing")


if __name__ == "__main__":
    main()
