"""Run every config in a directory through the full pipeline and tabulate the outcome.

    python3 scripts/run_catalog.py --configs scripts/configs --out runs/
"""

import argparse
import time
from pathlib import Path

from matzoh.config import RunConfig
from matzoh.cli import run_pipeline
from matzoh.report import emit_plot_data


def summarise(name: str, report, code: int, seconds: float) -> str:
    cls = report.classification or {}
    params = ", ".join(f"{k}={cls[k]:.6g}" for k in ("lambda", "mu", "gamma") if cls.get(k) is not None)
    surfaces = ",".join(s["type"] for s in report.surfaces)
    branch = cls.get("branch") or f"failed at {report.status['stage']}"
    return f"{name:<24} exit={code} {branch:<14} {params:<40} {surfaces:<30} {seconds:6.2f}s"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--configs", default=str(Path(__file__).parent / "configs"))
    ap.add_argument("--out", help="write report.json and CSV plot data per config here")
    args = ap.parse_args()

    for path in sorted(Path(args.configs).glob("*.json")):
        start = time.perf_counter()
        report, code = run_pipeline(RunConfig.load(path))
        elapsed = time.perf_counter() - start
        if args.out:
            dest = Path(args.out) / path.stem
            emit_plot_data(report, dest)
            report.write(dest / "report.json")
        print(summarise(path.stem, report, code, elapsed))


if __name__ == "__main__":
    main()
