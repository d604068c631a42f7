"""Command-line front end: fit, select, simulate, bootstrap, basis dump."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import io
from .basis import basis_matrix, make_uniform_basis
from .bootstrap import bootstrap_bands
from .estimation import FitConfig, fit
from .model import auto_model_spec, coefficient_curve
from .selection import lambda_axis, lambda_grid, select, select_coordinate_descent
from .simulation import SimDesign, run_comparison


_OUTPUT_ARGS = {"func", "out", "curves", "report"}  # destinations, not config


def _provenance(cmd: str, args: argparse.Namespace) -> str:
    pairs = sorted((k, v) for k, v in vars(args).items() if k not in _OUTPUT_ARGS)
    return f"vcm {cmd} " + " ".join(f"{k}={v}" for k, v in pairs)


def _thread_budget(args) -> int:
    env = os.environ.get("VCM_THREADS")
    if env:
        return max(1, int(env))
    if getattr(args, "threads", None):
        return max(1, args.threads)
    return os.cpu_count() or 1


def _parse_lambda_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ValueError(f"bad --lambda list {text!r}: {exc}") from exc


def _parse_axis(text: str) -> np.ndarray:
    try:
        lo, hi, num = text.split(":")
        return lambda_axis(float(lo), float(hi), int(num))
    except ValueError as exc:
        raise ValueError(f"bad --grid specification {text!r}; want lo:hi:num") from exc


def _num_basis(text: str) -> int | None:
    if text == "auto":
        return None
    value = int(text)
    if value < 1:
        raise ValueError(f"--num-basis must be positive, got {value}")
    return value


def _build_spec(args, data):
    return auto_model_spec(
        data, order=args.order, num_basis=_num_basis(args.num_basis),
        has_intercept=not args.no_intercept,
        penalize_intercept=args.penalize_intercept, penalty_kind=args.penalty)


def _add_model_flags(p):
    p.add_argument("--order", type=int, default=1, help="spline degree (1 = linear)")
    p.add_argument("--num-basis", default="auto",
                   help="basis functions per term, or 'auto' (= max obs per subject)")
    p.add_argument("--no-intercept", action="store_true",
                   help="drop the time-varying intercept term")
    p.add_argument("--penalize-intercept", action="store_true")
    p.add_argument("--penalty", choices=["identity", "second-diff"], default="identity")
    p.add_argument("--init", choices=["zeros", "ridge", "joint"], default="joint",
                   help="backfitting start (joint = stacked warm start)")


def _cmd_fit(args) -> int:
    data = io.load_csv(args.data)
    spec = _build_spec(args, data)
    model = fit(spec, data, _parse_lambda_list(args.lam), FitConfig(init=args.init))
    prov = _provenance("fit", args)
    if args.out:
        io.save_model(args.out, model, spec, penalty_kind=args.penalty,
                      provenance={"command": prov})
    if args.curves:
        t_lo, t_hi = data.time_range()
        grid = np.linspace(t_lo, t_hi, args.grid)
        start = 0 if spec.has_intercept else 1
        header = ["t"] + [f"beta_{start + j}" for j in range(spec.num_terms)]
        cols = [coefficient_curve(model, spec, j, grid) for j in range(spec.num_terms)]
        rows = [[grid[i]] + [c[i] for c in cols] for i in range(grid.size)]
        io.write_csv(args.curves, header, rows, comment=prov)
    print(f"fit: sigma2={model.sigma2!r} converged={model.converged} "
          f"sweeps={model.iterations}"
          + (f" -> {args.out}" if args.out else ""))
    return 0


def _report_columns(spec):
    start = 0 if spec.has_intercept else 1
    return [f"lambda_{start + j}" for j in spec.penalized_terms]


def _cmd_select(args) -> int:
    data = io.load_csv(args.data)
    spec = _build_spec(args, data)
    axis = _parse_axis(args.grid)
    if len(spec.penalized_terms) <= 3:
        report = select(spec, data, lambda_grid(spec, axis), args.criterion,
                        FitConfig(init=args.init), args.seed, folds=args.folds,
                        gbic_variant=args.gbic_variant)
    else:
        report = select_coordinate_descent(spec, data, axis, args.criterion,
                                           FitConfig(init=args.init), args.seed,
                                           folds=args.folds,
                                           gbic_variant=args.gbic_variant)
    pen = list(spec.penalized_terms)
    rows = []
    for i, lam in enumerate(report.grid):
        rows.append([lam[j] for j in pen] + [report.values[i],
                                             str(report.per_point_fits[i])])
    io.write_csv(args.report, _report_columns(spec) + ["value", "converged"], rows,
                 comment=_provenance("select", args))
    best = report.best_lambdas[pen]
    print(f"select {args.criterion}: best lambda={best.tolist()} "
          f"value={float(report.values[report.best_index])!r} -> {args.report}")
    return 0


def _cmd_simulate(args) -> int:
    design = SimDesign(n=args.n, seed=args.seed, replications=args.reps,
                       x2_per_observation=args.x2_per_observation)
    criteria = tuple(c.strip() for c in args.criteria.split(",") if c.strip())
    result = run_comparison(
        design, criteria=criteria, grid=_parse_axis(args.grid), folds=args.folds,
        order=args.order, num_basis=_num_basis(args.num_basis),
        include_intercept=not args.no_intercept, gbic_variant=args.gbic_variant,
        amse_normalizer=args.amse_normalizer, n_jobs=_thread_budget(args))
    io.write_csv(args.out, ["metric"] + list(result.criteria), result.rows(),
                 comment=_provenance("simulate", args))
    amse_part = " ".join(f"{c}={result.mean_amse[c]!r}" for c in result.criteria)
    print(f"simulate n={args.n} reps={args.reps}: amse {amse_part} -> {args.out}")
    return 0


def _cmd_bootstrap(args) -> int:
    data = io.load_csv(args.data)
    spec, model, _ = io.load_model(args.model)
    t_lo = min(b.t_min for b in spec.bases)
    t_hi = max(b.t_max for b in spec.bases)
    grid = np.linspace(t_lo, t_hi, args.grid)
    bands = bootstrap_bands(spec, data, model.lambdas, args.B, grid, args.seed,
                            FitConfig(init="joint"), level=args.level)
    start = 0 if spec.has_intercept else 1
    rows = []
    for j in range(spec.num_terms):
        for i in range(grid.size):
            rows.append([grid[i], str(start + j), bands.means[j, i],
                         bands.lower[j, i], bands.upper[j, i]])
    io.write_csv(args.out, ["t", "k", "mean", "lo", "hi"], rows,
                 comment=_provenance("bootstrap", args))
    print(f"bootstrap B={args.B}: bands -> {args.out}")
    return 0


def _cmd_basis_dump(args) -> int:
    basis = make_uniform_basis(args.t_min, args.t_max,
                               int(args.num_basis), args.order)
    grid = np.linspace(args.t_min, args.t_max, args.grid)
    mat = basis_matrix(basis, grid)
    header = ["t"] + [f"phi_{m + 1}" for m in range(basis.M)]
    rows = [[grid[i]] + [v for v in mat[i]] for i in range(grid.size)]
    if args.out:
        io.write_csv(args.out, header, rows, comment=_provenance("basis dump", args))
        print(f"basis dump: {basis.M} functions -> {args.out}")
    else:
        print(",".join(header))
        for row in rows:
            print(",".join(repr(float(v)) if not isinstance(v, str) else v
                           for v in row))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vcm",
        description="Time-varying-coefficient regression via penalized B-splines")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model at fixed regularization weights")
    p.add_argument("--data", required=True)
    _add_model_flags(p)
    p.add_argument("--lambda", dest="lam", required=True,
                   help="comma list, one value per penalized term")
    p.add_argument("--out", help="model JSON output path")
    p.add_argument("--curves", help="coefficient-curve CSV output path")
    p.add_argument("--grid", type=int, default=200, help="curve grid points")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("select", help="search a weight grid by GIC, GBIC or CV")
    p.add_argument("--data", required=True)
    _add_model_flags(p)
    p.add_argument("--criterion", required=True, choices=["gic", "gbic", "cv"])
    p.add_argument("--grid", default="1e-6:1e2:9", help="axis as lo:hi:num")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--gbic-variant", choices=["printed", "rederived"],
                   default="printed")
    p.add_argument("--report", required=True, help="report CSV output path")
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("simulate", help="run the selector comparison benchmark")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--criteria", default="gic,gbic,cv")
    p.add_argument("--grid", default="1e-6:1e2:9")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--order", type=int, default=1)
    p.add_argument("--num-basis", default="auto")
    p.add_argument("--no-intercept", action="store_true")
    p.add_argument("--x2-per-observation", action="store_true",
                   help="redraw the binary covariate at every observation")
    p.add_argument("--amse-normalizer", choices=["subject-scaled", "mean"], default="subject-scaled")
    p.add_argument("--gbic-variant", choices=["printed", "rederived"],
                   default="printed")
    p.add_argument("--threads", type=int, default=None,
                   help="replication workers (VCM_THREADS overrides; "
                        "default: all cores)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("bootstrap", help="bootstrap confidence bands for a fitted model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="model JSON from 'fit'")
    p.add_argument("--B", type=int, default=100)
    p.add_argument("--grid", type=int, default=200)
    p.add_argument("--seed", type=int, default=11)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_bootstrap)

    p = sub.add_parser("basis", help="basis utilities")
    bsub = p.add_subparsers(dest="basis_command", required=True)
    d = bsub.add_parser("dump", help="print the basis matrix over a time grid as CSV")
    d.add_argument("--t-min", type=float, default=0.0)
    d.add_argument("--t-max", type=float, default=1.0)
    d.add_argument("--num-basis", required=True)
    d.add_argument("--order", type=int, default=1)
    d.add_argument("--grid", type=int, default=101)
    d.add_argument("--out", help="CSV output path (default: stdout)")
    d.set_defaults(func=_cmd_basis_dump)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface module errors with context, machine-readable
        payload = {"subcommand": args.command, "error": type(exc).__name__,
                   "message": str(exc)}
        print(json.dumps(payload), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
