"""Level-set classification of solutions of heat-type parabolic equations."""

from .classify import ClassificationReport, ClassifyConfig, classify, fit_affine_eta, fit_time_factor, verify_representation
from .convex import ConvexBody, check_C2_plus, wulff_boundary
from .evolve import BoundaryCondition, EvolveConfig, run
from .grid import DomainMask, Grid, ScalarField, TimeSeriesField, read_field, write_field
from .invariance import build_eta, determinant_D, determinant_xi, eta_partials, invariance_residual
from .isoparametric import classify_surface, isoparametric_residual
from .operators import QuasiLinearOperator, apply_G, apply_Q

__version__ = "0.1.0"

__all__ = [
    "BoundaryCondition",
    "ClassificationReport",
    "ClassifyConfig",
    "ConvexBody",
    "DomainMask",
    "EvolveConfig",
    "Grid",
    "QuasiLinearOperator",
    "ScalarField",
    "TimeSeriesField",
    "apply_G",
    "apply_Q",
    "build_eta",
    "check_C2_plus",
    "classify",
    "classify_surface",
    "determinant_D",
    "determinant_xi",
    "eta_partials",
    "fit_affine_eta",
    "fit_time_factor",
    "invariance_residual",
    "isoparametric_residual",
    "read_field",
    "run",
    "verify_representation",
    "write_field",
    "wulff_boundary",
]
