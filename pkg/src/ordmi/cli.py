"""Command-line entry point.

Subcommands: simulate, ampute, impute, fit, scenario, grid, analyze.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .configio import dump_config, load_config
from .cwgee import cwgee_solve
from .data import read_csv, validate_dataset, write_csv
from .datagen import simulate_dataset
from .errors import ConfigError, DataError, NumericalError
from .harness import (
    METHODS,
    analyze_dataset,
    calibrate_scenario,
    grid_cells,
    run_scenario,
    stream,
    write_grid_csv,
)
from .impute_fcs import fcs_impute
from .impute_jm import jm_impute
from .missingness import apply_missingness, build_rules
from .pooling import METRICS_COLUMNS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ordmi",
        description=(
            "Clustered ordinal data: simulation with informative cluster "
            "size, missingness, multiple imputation, cluster-weighted GEE."
        ),
    )
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, config_required=True):
        sp.add_argument(
            "--config",
            required=config_required,
            help="YAML scenario configuration file",
        )
        sp.add_argument("--seed", type=int, default=None, help="master seed override")

    sp = sub.add_parser("simulate", help="generate a complete dataset CSV")
    add_common(sp)
    sp.add_argument("--out", required=True, help="output CSV path")

    sp = sub.add_parser("ampute", help="apply missingness to a complete CSV")
    add_common(sp)
    sp.add_argument("--data", required=True, help="input complete CSV")
    sp.add_argument("--out", required=True, help="output CSV path")

    sp = sub.add_parser("impute", help="write M completed CSVs")
    add_common(sp)
    sp.add_argument("--data", required=True, help="input CSV with missing values")
    sp.add_argument(
        "--method",
        required=True,
        choices=[m for m in METHODS if m not in ("full", "cca")],
    )
    sp.add_argument("--out-dir", required=True)

    sp = sub.add_parser("fit", help="fit the weighted GEE to one CSV")
    sp.add_argument("--data", required=True)
    sp.add_argument(
        "--weighting",
        default="inverse-cluster-size",
        choices=["inverse-cluster-size", "unweighted"],
    )
    sp.add_argument("--out", default=None, help="write the fit as JSON here")
    sp.add_argument("--categories", type=int, default=4, help="number of y categories")

    sp = sub.add_parser("scenario", help="run one Monte Carlo scenario")
    add_common(sp)
    sp.add_argument("--reps", type=int, default=None, help="override n_replications")
    sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument(
        "--print-config",
        action="store_true",
        help="print the resolved config (with calibrated intercepts) and exit",
    )

    sp = sub.add_parser("grid", help="run a scenario grid")
    add_common(sp)
    sp.add_argument("--reps", type=int, default=None)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out-dir", required=True)

    sp = sub.add_parser("analyze", help="apply methods to an observed dataset CSV")
    add_common(sp, config_required=False)
    sp.add_argument("--data", required=True)
    sp.add_argument(
        "--method",
        action="append",
        required=True,
        choices=list(METHODS),
        help="repeatable; methods to run",
    )
    sp.add_argument("--out-dir", required=True)
    return p


def _load(args) -> tuple:
    cfg, grid = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if getattr(args, "reps", None) is not None:
        cfg = replace(cfg, n_replications=args.reps)
    return cfg, grid


def _read_validated(path: str, n_categories_y: int = 4):
    d = read_csv(path, n_categories_y=n_categories_y)
    report = validate_dataset(d)
    if not report.ok:
        raise DataError("invalid dataset:\n  " + "\n  ".join(report.violations))
    return d


def _cmd_simulate(args) -> int:
    cfg, _ = _load(args)
    d = simulate_dataset(cfg.gen, stream(cfg.master_seed, "simulate"))
    write_csv(d, args.out)
    print(f"wrote {d.n_clusters} clusters / {d.n_members} members to {args.out}")
    return EXIT_OK


def _cmd_ampute(args) -> int:
    cfg, _ = _load(args)
    d = _read_validated(args.data, cfg.gen.true_params.n_categories)
    rules = calibrate_scenario(cfg)
    out = apply_missingness(d, rules, stream(cfg.master_seed, "ampute"))
    write_csv(out, args.out)
    n_missing = sum(m.y is None for c in out.clusters for m in c.members)
    print(f"wrote {args.out} ({n_missing}/{out.n_members} outcome values missing)")
    return EXIT_OK


def _cmd_impute(args) -> int:
    cfg, _ = _load(args)
    d = _read_validated(args.data, cfg.gen.true_params.n_categories)
    rng = stream(cfg.master_seed, "impute", 0, args.method)
    if args.method.startswith("fcs"):
        spec = replace(cfg.fcs, include_cluster_size=args.method.endswith("_cs"))
        completed = fcs_impute(d, spec, rng)
    else:
        spec = replace(cfg.jm, include_cluster_size=args.method.endswith("_cs"))
        completed = jm_impute(d, spec, rng)
    os.makedirs(args.out_dir, exist_ok=True)
    for i, di in enumerate(completed, start=1):
        path = os.path.join(args.out_dir, f"imputed_{i:02d}.csv")
        write_csv(di, path)
    print(f"wrote {len(completed)} completed datasets to {args.out_dir}")
    return EXIT_OK


def _cmd_fit(args) -> int:
    d = _read_validated(args.data, args.categories)
    fit = cwgee_solve(d, weighting=args.weighting)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(fit.to_json())
    for name, est, se in zip(fit.params.names(), fit.params.as_array(), fit.se):
        print(f"{name:>6}  {est: .4f}  (SE {se:.4f})")
    if not fit.converged:
        print("warning: solver did not converge", file=sys.stderr)
    return EXIT_OK


def _cmd_scenario(args) -> int:
    cfg, _ = _load(args)
    rules = calibrate_scenario(cfg)
    if args.print_config:
        print(dump_config(cfg, rules), end="")
        return EXIT_OK
    table = run_scenario(cfg, jobs=args.jobs, rules=rules)
    os.makedirs(args.out_dir, exist_ok=True)
    csv_path = os.path.join(args.out_dir, "metrics.csv")
    table.write_csv(csv_path)
    with open(os.path.join(args.out_dir, "metrics.json"), "w") as fh:
        fh.write(table.to_json())
    print(f"wrote {csv_path}")
    return EXIT_OK


def _cmd_grid(args) -> int:
    cfg, grid = _load(args)
    if not grid:
        raise ConfigError("config has no 'grid' section")
    cells = grid_cells(cfg, grid)
    os.makedirs(args.out_dir, exist_ok=True)
    tables = []
    for i, cell in enumerate(cells):
        table = run_scenario(cell, jobs=args.jobs)
        table.write_csv(os.path.join(args.out_dir, f"cell_{i:03d}.csv"))
        tables.append(table)
    combined = os.path.join(args.out_dir, "grid_long.csv")
    write_grid_csv(tables, combined)
    print(f"wrote {len(cells)} cells and {combined}")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    if args.config:
        cfg, _ = _load(args)
        jm, fcs = cfg.jm, cfg.fcs
        seed = cfg.master_seed
        n_cat = cfg.gen.true_params.n_categories
        cca_orig = cfg.cca_original_sizes
    else:
        jm = fcs = None
        seed = args.seed if args.seed is not None else 0
        n_cat = 4
        cca_orig = False
    d = _read_validated(args.data, n_cat)
    rows = analyze_dataset(
        d,
        tuple(args.method),
        jm=jm,
        fcs=fcs,
        master_seed=seed,
        cca_original_sizes=cca_orig,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    import csv as _csv

    path = os.path.join(args.out_dir, "report.csv")
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["method", "parameter", "estimate", "se"])
        for r in rows:
            writer.writerow(
                [r.method, r.parameter, format(r.estimate, ".10g"), format(r.se, ".10g")]
            )
    params = []
    for r in rows:
        if r.parameter not in params:
            params.append(r.parameter)
    methods = list(dict.fromkeys(r.method for r in rows))
    cell = {(r.method, r.parameter): f"{r.estimate:.3f} ({r.se:.3f})" for r in rows}
    width = max(len(p) for p in params) + 2
    print("method".ljust(10) + "".join(p.rjust(18) for p in params))
    for m in methods:
        print(m.ljust(10) + "".join(cell[(m, p)].rjust(18) for p in params))
    print(f"wrote {path}")
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "ampute": _cmd_ampute,
    "impute": _cmd_impute,
    "fit": _cmd_fit,
    "scenario": _cmd_scenario,
    "grid": _cmd_grid,
    "analyze": _cmd_analyze,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
