"""``matzoh`` command-line front end.

Exit codes: 0 success, 1 configuration error, 2 not invariant,
3 mixed branch (or failed isoparametric verification), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .classify import NotInvariantError, classify
from .config import ConfigError, RunConfig, build_series, to_jsonable
from .convex import SupportError, body_from_spec
from .evolve import CFLError, NumericalError
from .grid import GridError, read_field, read_series, write_series
from .invariance import LevelResolutionError, MonotonicityError, invariance_residual
from .isoparametric import (
    classify_surface,
    fit_gradient_function,
    geodesic_trace,
    isoparametric_residual,
    normalize_to_unit_f,
    parallelism,
)
from .operators import DegenerateGradientError, operator_from_spec
from .report import TOOL_VERSION, Report, classification_section, diagnostics_section, emit_plot_data, isoparametric_section, surface_section

log = logging.getLogger("matzoh")

EXIT_OK, EXIT_CONFIG, EXIT_NOT_INVARIANT, EXIT_MIXED, EXIT_NUMERICAL = 0, 1, 2, 3, 4
NUMERICAL_ERRORS = (NumericalError, LevelResolutionError, MonotonicityError, DegenerateGradientError, FloatingPointError)


def _threads() -> int | None:
    value = os.environ.get("MATZOH_THREADS")
    if not value:
        return None
    try:
        return max(1, int(value))
    except ValueError:
        raise ConfigError(f"MATZOH_THREADS must be an integer, got {value!r}") from None


def _thread_cap():
    n = _threads()
    return threadpool_limits(limits=n) if n else nullcontext()


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, NotInvariantError):
        return EXIT_NOT_INVARIANT
    if isinstance(exc, NUMERICAL_ERRORS):
        return EXIT_NUMERICAL
    return EXIT_CONFIG


def level_choices(phi, n: int) -> list[float]:
    v = phi.active_values()
    lo, hi = float(v.min()), float(v.max())
    return [lo + (hi - lo) * (k + 1) / (n + 1) for k in range(n)]


def surface_reports(phi, levels, body) -> list[dict]:
    out = []
    for s in levels:
        try:
            out.append(surface_section(classify_surface(phi, s, body)))
        except (ValueError, GridError) as exc:
            out.append({"level": s, "type": "unresolved", "error": str(exc)})
    return out


def run_pipeline(config: RunConfig) -> tuple[Report, int]:
    """evolve (or sample) -> invariance -> classify -> isoparametric analysis."""
    start = time.perf_counter()
    report = Report()
    report.provenance = {
        "config_hash": config.config_hash(),
        "tool_version": TOOL_VERSION,
        "threads": _threads(),
        "config": config.canonical(),
    }
    stage = "evolve"
    try:
        series = build_series(config)
        stage = "check-invariance"
        ccfg = config.classify_config()
        op = config.build_operator()
        inv = None
        if series.snapshots[0].value_range() > 0:
            inv = invariance_residual(series, ccfg.n_bins)
            if np.max(inv) > ccfg.tol_inv:
                raise NotInvariantError(inv, ccfg.tol_inv)
        stage = "classify"
        rep = classify(series, op, config=ccfg, method=config.method)
        report.classification = classification_section(rep)
        report.diagnostics = diagnostics_section(rep, inv, series.times)
        code = EXIT_MIXED if rep.branch == "mixed" else EXIT_OK
        if rep.branch == "isoparametric":
            stage = "isoparametric"
            report.isoparametric = isoparametric_section(rep.isoparametric)
            phi = series.snapshots[0]
            report.surfaces = surface_reports(phi, level_choices(phi, config.surface_levels), config.build_body())
    except (ValueError, RuntimeError, ArithmeticError, KeyError, OSError) as exc:
        code = _exit_code(exc)
        report.status = {"exit_code": code, "stage": stage, "error": str(exc)}
        if isinstance(exc, NotInvariantError):
            report.diagnostics = {"residual_vs_time": [[float(t), float(r)] for t, r in zip(series.times, exc.residuals)]}
        log.error("stage %s failed: %s", stage, exc)
    else:
        report.status = {"exit_code": code, "stage": None, "error": None}
    report.provenance["wall_clock_seconds"] = round(time.perf_counter() - start, 3)
    return report.normalized(), code


# --- subcommands ------------------------------------------------------------------------------


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _emit(obj, path: str | None) -> None:
    text = json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_evolve(args) -> int:
    config = RunConfig.load(args.config)
    series = build_series(config)
    write_series(series, args.out)
    log.info("wrote %d snapshots to %s", len(series), args.out)
    return EXIT_OK


def cmd_check_invariance(args) -> int:
    series = read_series(args.series)
    res = invariance_residual(series, args.n_bins)
    ok = bool(np.max(res) <= args.tol)
    _emit({"times": series.times, "residual": res, "tol": args.tol, "invariant": ok}, args.report)
    return EXIT_OK if ok else EXIT_NOT_INVARIANT


def cmd_classify(args) -> int:
    series = read_series(args.series)
    op = operator_from_spec(_load_json(args.operator), series.grid.dim) if args.operator else None
    rep = classify(series, op, args.n_bins, method=args.method)
    report = Report(classification=classification_section(rep), diagnostics=diagnostics_section(rep, None, series.times))
    report.provenance = {"tool_version": TOOL_VERSION}
    if rep.isoparametric is not None:
        report.isoparametric = isoparametric_section(rep.isoparametric)
    code = EXIT_MIXED if rep.branch == "mixed" else EXIT_OK
    report.status = {"exit_code": code, "stage": None, "error": None}
    _write_report(report, args.report)
    return code


def _write_report(report: Report, path: str | None) -> None:
    if path:
        report.write(path)
    else:
        sys.stdout.write(report.to_json())


def cmd_verify(args) -> int:
    phi = read_field(args.field)
    op = operator_from_spec(_load_json(args.operator), phi.grid.dim)
    body = body_from_spec(_load_json(args.body), phi.grid.dim) if args.body else op.body
    iso = isoparametric_residual(phi, op, tol=args.tol)
    report = Report(isoparametric=isoparametric_section(iso), provenance={"tool_version": TOOL_VERSION})
    report.surfaces = surface_reports(phi, level_choices(phi, args.levels), body)
    code = EXIT_OK if iso.passed else EXIT_MIXED
    report.status = {"exit_code": code, "stage": None, "error": None}
    _write_report(report, args.report)
    return code


def _parse_seed(text: str, dim: int) -> np.ndarray:
    try:
        seed = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ConfigError(f"bad seed {text!r}") from None
    if seed.shape != (dim,):
        raise ConfigError(f"seed needs {dim} coordinates")
    return seed


def cmd_geodesic(args) -> int:
    phi = read_field(args.field)
    body = body_from_spec(_load_json(args.body), phi.grid.dim) if args.body else None
    if not args.no_normalize:
        phi = normalize_to_unit_f(phi, fit_gradient_function(phi, body))
    traces = [geodesic_trace(phi, _parse_seed(s, phi.grid.dim), body, args.tau, args.steps) for s in args.seed]
    out = {
        "traces": [
            {
                "seed": t.seed,
                "end": t.curve[-1],
                "straightness": t.straightness,
                "max_level_rate_error": t.max_rate_error,
                "truncated": t.truncated,
            }
            for t in traces
        ],
        "parallelism": parallelism(traces) if len(traces) > 1 else 0.0,
    }
    _emit(out, args.report)
    return EXIT_OK


def cmd_run(args) -> int:
    config = RunConfig.load(args.config)
    report, code = run_pipeline(config)
    if args.report:
        report.write(args.report)
    if args.out:
        emit_plot_data(report, args.out)
        report.write(Path(args.out) / "report.json")
    if not args.report and not args.out:
        sys.stdout.write(report.to_json())
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="matzoh", description="Classify parabolic solutions by their level sets.")
    p.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("evolve", help="sample or integrate a configured series")
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True, help="series directory")
    e.set_defaults(fn=cmd_evolve)

    c = sub.add_parser("check-invariance", help="level-set invariance residual per time")
    c.add_argument("--series", required=True)
    c.add_argument("--n-bins", type=int, default=None)
    c.add_argument("--tol", type=float, default=1e-2)
    c.add_argument("--report")
    c.set_defaults(fn=cmd_check_invariance)

    k = sub.add_parser("classify", help="decide the branch of a series")
    k.add_argument("--series", required=True)
    k.add_argument("--operator")
    k.add_argument("--n-bins", type=int, default=None)
    k.add_argument("--method", choices=("generic", "heat"), default="generic")
    k.add_argument("--report")
    k.set_defaults(fn=cmd_classify)

    v = sub.add_parser("verify-isoparametric", help="fit f, g and type level surfaces")
    v.add_argument("--field", required=True)
    v.add_argument("--operator", required=True)
    v.add_argument("--body")
    v.add_argument("--levels", type=int, default=3)
    v.add_argument("--tol", type=float, default=1e-2)
    v.add_argument("--report")
    v.set_defaults(fn=cmd_verify)

    g = sub.add_parser("geodesic", help="trace integral curves of DH(D phi)")
    g.add_argument("--field", required=True)
    g.add_argument("--body")
    g.add_argument("--seed", required=True, action="append", help="comma-separated point; repeatable")
    g.add_argument("--tau", type=float, default=0.3)
    g.add_argument("--steps", type=int, default=300)
    g.add_argument("--no-normalize", action="store_true", help="skip the f = 1 normalisation")
    g.add_argument("--report")
    g.set_defaults(fn=cmd_geodesic)

    r = sub.add_parser("run", help="full pipeline from a config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="directory for report.json and CSV plot data")
    r.add_argument("--report")
    r.set_defaults(fn=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_cap():
            return args.fn(args)
    except (ConfigError, SupportError, CFLError, GridError, FileNotFoundError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except NotInvariantError as exc:
        log.error("%s", exc)
        return EXIT_NOT_INVARIANT
    except NUMERICAL_ERRORS as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
