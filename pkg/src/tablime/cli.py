"""Command-line interface.

Subcommands: fit-grid, explain, theory, sweep, probe, field. Commands that
compare empirical runs against theory exit nonzero when any check fails.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .grid import BinGrid, bin_id, fit_grid, load_matrix_csv
from .harness import (
    ExperimentConfig,
    concentration_probe,
    default_bandwidth,
    field_map,
    run_experiment,
    sweep_bandwidth,
)
from .models import model_from_json
from .theory import limit_explanation


def _load_model(path):
    with open(path) as fh:
        return model_from_json(fh.read())


def _parse_floats(text):
    return np.array([float(v) for v in text.split(",")])


def _parse_ints(text):
    return np.array([int(v) for v in text.split(",")])


def _add_xi_options(parser):
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--xi", help="comma-separated coordinates of the example")
    group.add_argument("--xi-bins",
                       help="comma-separated 0-based bin indices; uses bin centers")


def _resolve_xi(args, grid):
    if args.xi is not None:
        return _parse_floats(args.xi)
    return grid.bin_center(_parse_ints(args.xi_bins))


def _resolve_nu(value, d):
    return default_bandwidth(d) if value == "default" else float(value)


def _config_from_args(args, grid):
    xi = _resolve_xi(args, grid)
    nu = getattr(args, "nu", "default")
    return ExperimentConfig(
        model=_load_model(args.model),
        grid=grid,
        nu=nu if nu == "default" else float(nu),
        n=args.n,
        lam=getattr(args, "lam", 1.0),
        repetitions=args.reps,
        xi=xi,
        seed=args.seed,
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tablime",
        description="Tabular LIME explanations with closed-form limit checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_grid = sub.add_parser("fit-grid", help="discretize a training CSV")
    p_grid.add_argument("csv")
    p_grid.add_argument("--bins", type=int, default=4)
    p_grid.add_argument("--out", required=True)

    p_explain = sub.add_parser("explain",
                               help="repeated empirical explanations vs theory")
    p_explain.add_argument("--grid", required=True)
    p_explain.add_argument("--model", required=True)
    _add_xi_options(p_explain)
    p_explain.add_argument("--n", type=int, default=5000)
    p_explain.add_argument("--nu", default="default")
    p_explain.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p_explain.add_argument("--reps", type=int, default=100)
    p_explain.add_argument("--seed", type=int, default=0)
    p_explain.add_argument("--out", required=True,
                           help="summary CSV path; a .json report sits beside it")

    p_theory = sub.add_parser("theory", help="closed-form limit explanation")
    p_theory.add_argument("--grid", required=True)
    p_theory.add_argument("--model", required=True)
    _add_xi_options(p_theory)
    p_theory.add_argument("--nu", default="default")
    p_theory.add_argument("--out", required=True)

    p_sweep = sub.add_parser("sweep", help="bandwidth sweep with limit row")
    p_sweep.add_argument("--grid", required=True)
    p_sweep.add_argument("--model", required=True)
    _add_xi_options(p_sweep)
    p_sweep.add_argument("--nus", required=True,
                         help="comma-separated bandwidths")
    p_sweep.add_argument("--n", type=int, default=5000)
    p_sweep.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p_sweep.add_argument("--reps", type=int, default=20)
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("--out", required=True)

    p_probe = sub.add_parser("probe", help="moment concentration probe")
    p_probe.add_argument("--grid", required=True)
    p_probe.add_argument("--model", required=True)
    _add_xi_options(p_probe)
    p_probe.add_argument("--ns", required=True,
                         help="comma-separated increasing sample sizes")
    p_probe.add_argument("--trials", type=int, default=20)
    p_probe.add_argument("--nu", default="default")
    p_probe.add_argument("--seed", type=int, default=0)
    p_probe.add_argument("--out", required=True)

    p_field = sub.add_parser("field", help="2-D explanation field map")
    p_field.add_argument("--grid", required=True)
    p_field.add_argument("--model", required=True)
    p_field.add_argument("--nu", default="default")
    p_field.add_argument("--out", required=True)

    args = parser.parse_args(argv)

    if args.command == "fit-grid":
        grid = fit_grid(load_matrix_csv(args.csv), args.bins)
        grid.save(args.out)
        print(f"wrote {args.out} (d={grid.d}, p={grid.p})")
        return 0

    grid = BinGrid.load(args.grid)

    if args.command == "explain":
        config = _config_from_args(args, grid)
        report = run_experiment(config)
        report.to_csv(args.out)
        report.to_json(str(args.out) + ".json")
        ok = report.all_passed()
        print(f"wrote {args.out}; {int(report.passed.sum())}/{report.passed.size} "
              f"coordinates within tolerance")
        return 0 if ok else 1

    if args.command == "theory":
        model = _load_model(args.model)
        xi = _resolve_xi(args, grid)
        nu = _resolve_nu(args.nu, grid.d)
        expl = limit_explanation(model, grid, bin_id(xi, grid), nu)
        with open(args.out, "w") as fh:
            fh.write(expl.to_json())
        print(f"wrote {args.out}")
        return 0

    if args.command == "sweep":
        config = _config_from_args(args, grid)
        result = sweep_bandwidth(config, _parse_floats(args.nus))
        result.to_csv(args.out)
        flagged = [k for k, v in enumerate(result.sign_changes) if v]
        if flagged:
            print(f"theory sign changes across the sweep at coordinates {flagged}")
        print(f"wrote {args.out}")
        return 0 if result.all_passed() else 1

    if args.command == "probe":
        model = _load_model(args.model)
        xi = _resolve_xi(args, grid)
        config = ExperimentConfig(model=model, grid=grid, nu=args.nu, n=5000,
                                  repetitions=1, xi=xi, seed=args.seed)
        report = concentration_probe(config, _parse_ints(args.ns),
                                     trials=args.trials)
        report.to_csv(args.out)
        ratios = ", ".join(f"{r:.2f}" for r in report.sigma_ratios)
        print(f"wrote {args.out}; sigma error ratios: {ratios}")
        return 0

    if args.command == "field":
        model = _load_model(args.model)
        nu = _resolve_nu(args.nu, grid.d)
        field_map(model, grid, nu).to_csv(args.out)
        print(f"wrote {args.out}")
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
