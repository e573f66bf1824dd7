"""Schema-versioned JSON reports and CSV plot data."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .classify import ClassificationReport, time_factor
from .config import to_jsonable
from .isoparametric import SurfaceTypeReport

SCHEMA_VERSION = 1
TOOL_VERSION = "0.1.0"


@dataclass
class Report:
    """Everything a run produced, as JSON-native values (so equality survives a round trip)."""

    schema_version: int = SCHEMA_VERSION
    provenance: dict = field(default_factory=dict)
    status: dict = field(default_factory=lambda: {"exit_code": 0, "stage": None, "error": None})
    classification: dict = field(default_factory=dict)
    isoparametric: dict = field(default_factory=dict)
    surfaces: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(to_jsonable(asdict(self)), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> Report:
        data = json.loads(text)
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {data.get('schema_version')!r}")
        return cls(**data)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def read(cls, path: str | Path) -> Report:
        return cls.from_json(Path(path).read_text())

    def normalized(self) -> Report:
        """A copy that survives JSON unchanged (tuples to lists, numpy to Python)."""
        return Report.from_json(self.to_json())


def classification_section(rep: ClassificationReport) -> dict:
    return to_jsonable(
        {
            "branch": rep.branch,
            "method": rep.method,
            "alpha": rep.alpha,
            "tau": rep.tau,
            "lambda": rep.lambda_,
            "lambda_stderr": rep.lambda_stderr,
            "mu": rep.mu,
            "gamma": rep.gamma,
            "residuals": rep.residuals,
            "critical_levels": rep.critical_levels,
            "intervals": [
                {
                    "bins": list(iv.bins),
                    "s_range": list(iv.s_range),
                    "label": iv.label,
                    "significant_bins": iv.significant_bins,
                    "lambda": iv.lambda_,
                    "mu": iv.mu,
                    "gamma": iv.gamma,
                    "affine_residual": iv.affine_residual,
                }
                for iv in rep.intervals
            ],
        }
    )


def diagnostics_section(rep: ClassificationReport, invariance: np.ndarray | None, times) -> dict:
    out: dict = {"residual_vs_time": [], "eta_table": None, "determinant": None, "fg_fits": None}
    if invariance is not None:
        out["residual_vs_time"] = [[float(t), float(r)] for t, r in zip(times, invariance)]
    table = rep.eta_table
    if table is not None:
        out["eta_table"] = {"s": table.s_bins, "times": table.times, "eta": table.eta, "counts": table.counts}
        if rep.affine is not None:
            out["eta_table"]["a"] = rep.affine.a
            out["eta_table"]["b"] = rep.affine.b
    det = rep.determinant
    if det is not None:
        out["determinant"] = {"normalized": det.normalized, "significant": det.significant, "bin_significant": det.bin_significant}
    iso = rep.isoparametric
    if iso is not None:
        out["fg_fits"] = {"knots": iso.f_fit.knots, "f": iso.f_fit.values, "f_prime": iso.f_fit.derivative_values,
                          "g_knots": iso.g_fit.knots, "g": iso.g_fit.values}
    if rep.branch == "eigen_split":
        out["time_factor_model"] = [float(time_factor(t, rep.tau, rep.lambda_, rep.alpha)) for t in times]
    return to_jsonable(out)


def isoparametric_section(iso) -> dict:
    if iso is None:
        return {}
    return to_jsonable(
        {
            "f_residual": iso.f_fit.residual,
            "g_residual": iso.g_fit.residual,
            "euler_residual": iso.euler_residual,
            "verdict": iso.verdict,
            "tol": iso.tol,
        }
    )


def surface_section(s: SurfaceTypeReport) -> dict:
    return to_jsonable(
        {
            "level": s.level,
            "type": s.label,
            "clusters": [{"value": c.value, "multiplicity": c.multiplicity} for c in s.clusters],
            "center": s.center,
            "axis": s.axis,
            "fit_residual": s.fit_residual,
            "n_points": s.n_points,
        }
    )


# --- plot data ------------------------------------------------------------------------

PLOT_FILES = {
    "residual_vs_time.csv": ["t", "invariance_residual"],
    "eta_table.csv": ["s", "t", "eta", "count", "affine_fit"],
    "determinant.csv": ["s", "t", "normalized_D", "significant"],
    "fg_fits.csv": ["s", "f", "f_prime", "g"],
    "curvatures.csv": ["level", "type", "cluster", "value", "multiplicity"],
}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_plot_data(report: Report, out_dir: str | Path) -> list[Path]:
    """Write the CSV files with fixed column order and LF line endings."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    d = report.diagnostics or {}
    rows: dict[str, list] = {name: [] for name in PLOT_FILES}
    rows["residual_vs_time.csv"] = [list(r) for r in d.get("residual_vs_time") or []]
    eta = d.get("eta_table")
    if eta:
        a, b = eta.get("a"), eta.get("b")
        for k, s in enumerate(eta["s"]):
            for j, t in enumerate(eta["times"]):
                fit = a[j] * s + b[j] if a is not None else None
                rows["eta_table.csv"].append([s, t, eta["eta"][k][j], eta["counts"][k], fit])
    det = d.get("determinant")
    if det and eta:
        for k, s in enumerate(eta["s"]):
            for j, t in enumerate(eta["times"]):
                rows["determinant.csv"].append([s, t, det["normalized"][k][j], bool(det["significant"][k][j])])
    fg = d.get("fg_fits")
    if fg:
        g_at = dict(zip(fg["g_knots"], fg["g"]))
        for s, f, fp in zip(fg["knots"], fg["f"], fg["f_prime"]):
            rows["fg_fits.csv"].append([s, f, fp, g_at.get(s)])
    for surf in report.surfaces:
        for i, c in enumerate(surf["clusters"]):
            rows["curvatures.csv"].append([surf["level"], surf["type"], i, c["value"], c["multiplicity"]])
    written = []
    for name, header in PLOT_FILES.items():
        path = out_dir / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows[name]:
                w.writerow([_fmt(v) for v in r])
        written.append(path)
    return written
