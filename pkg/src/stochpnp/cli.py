"""Command-line entry point.

    python -m stochpnp run <config.ini>
    python -m stochpnp grid-gamma <config.ini> --grid 0.5,1,2 [--solver NAME]
    python -m stochpnp report <run_dir> [<run_dir> ...] [-o report.csv]

Relative ``output_dir`` values are placed under ``$STOCHPNP_OUTPUT_ROOT``
when it is set.  The exit status is 0 only when every run completed
without divergence; configuration errors exit with status 2.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .experiment import (ConfigError, ExperimentConfig, GridSearchError, ReportError,
                         build_problem, compare_report, grid_search_gamma, run_experiment)

log = logging.getLogger("stochpnp")

EXIT_OK, EXIT_DIVERGED, EXIT_CONFIG = 0, 1, 2


def _parse_grid(text):
    try:
        grid = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be comma-separated numbers, got {text!r}")
    if not grid:
        raise argparse.ArgumentTypeError("grid is empty")
    return grid


def build_parser():
    p = argparse.ArgumentParser(prog="stochpnp", description="Plug-and-play CT reconstruction experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run every solver and seed of a configuration")
    r.add_argument("config")

    g = sub.add_parser("grid-gamma", help="grid-search the denoiser scale gamma")
    g.add_argument("config")
    g.add_argument("--grid", type=_parse_grid, required=True, help="comma-separated gammas")
    g.add_argument("--solver", action="append",
                   help="solver to tune (repeatable; default: all configured solvers)")

    s = sub.add_parser("report", help="align metric histories of run directories")
    s.add_argument("run_dirs", nargs="+")
    s.add_argument("-o", "--output", help="report CSV path (default: stdout)")
    return p


def _cmd_run(args):
    cfg = ExperimentConfig.from_file(args.config)
    out, results = run_experiment(cfg)
    for r in results:
        status = "DIVERGED" if r.diverged else "ok"
        print(f"{r.solver:22s} seed={r.seed:<4d} gamma={r.gamma:<8g} "
              f"final log10 err={r.final_err_log10:+.4f}  {status}")
    print(f"run directory: {out}")
    return EXIT_DIVERGED if any(r.diverged for r in results) else EXIT_OK


def _cmd_grid(args):
    cfg = ExperimentConfig.from_file(args.config)
    problem = build_problem(cfg)
    out = cfg.resolve_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    rows, code = [], EXIT_OK
    for solver in args.solver or cfg.solvers:
        try:
            best, table = grid_search_gamma(cfg, args.grid, solver=solver, problem=problem)
        except GridSearchError as exc:
            log.error("%s", exc)
            best, table, code = None, exc.table, EXIT_DIVERGED
        if any(t["status"] != "ok" for t in table):
            code = EXIT_DIVERGED
        for t in table:
            print(f"{solver:22s} gamma={t['gamma']:<8g} final log10 err="
                  f"{t['final_err_log10']:+.4f}  {t['status']}")
        print(f"{solver}: best gamma = {best}")
        rows += [{**t, "best": t["gamma"] == best} for t in table]
    path = Path(out) / "gamma_grid.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["solver", "gamma", "seed", "final_err_log10",
                                           "min_err_log10", "status", "best"])
        w.writeheader()
        w.writerows(rows)
    print(f"table: {path}")
    return code


def _cmd_report(args):
    rows = compare_report(args.run_dirs, output=args.output)
    if args.output is None:
        w = csv.writer(sys.stdout)
        w.writerow(["run", "solver", "axis", "x", "err_log10_median", "num_seeds",
                    "denoiser_calls_per_datapass"])
        for r in rows:
            w.writerow(list(r.values()))
    else:
        print(f"report: {args.output}")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "grid-gamma":
            return _cmd_grid(args)
        return _cmd_report(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ReportError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
