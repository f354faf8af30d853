"""Command-line surface: single solves, convergence tables, and synthetic
inversions.

Exit codes: 0 on success, 1 on a numerical failure, 2 on usage or input
errors.  EIK_THREADS caps per-source parallelism of the inversion.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys

import numpy as np

from . import fileio
from .analytic import default_params
from .bench import measure_work_unit, run_convergence, solve_case
from .fastmarch import FmConfig, SolverError, fm_solve
from .grid import GridError, ScalarField, SourceSpec, build_distance_factor
from .tomography import forward_data, gauss_newton, make_desk_problem

_CASES = {
    "cgss2d": ("cgss", 2), "cgv2d": ("cgv", 2), "gauss2d": ("gauss", 2),
    "cgss3d": ("cgss", 3), "cgv3d": ("cgv", 3), "gauss3d": ("gauss", 3),
    "const1": ("const", 2), "const1-3d": ("const", 3),
}


def _parse_case(name: str):
    try:
        kind, dim = _CASES[name]
    except KeyError:
        raise GridError(f"unknown case {name!r}; choose from "
                        f"{sorted(_CASES)}") from None
    return default_params(kind, dim)


def _parse_index(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise GridError(f"bad index {text!r}; expected i,j[,k]") from None


def _cmd_solve(args) -> int:
    cfg = FmConfig(order=args.order, mode=args.mode,
                   enforce_monotonicity=args.enforce_monotonicity)
    if args.case:
        case = _parse_case(args.case)
        h = args.h if args.h else (0.025 if case.dim == 2 else 0.05)
        linf, ml2, seconds, sol, grid = solve_case(case, h, cfg)
        unit = measure_work_unit(grid)
        print(f"case {args.case} h={h} order={args.order} mode={args.mode}")
        print(f"errors [linf, mean_l2] = [{linf:.3e}, {ml2:.3e}]")
        print(f"solved in {seconds:.3f}s ({seconds / unit.seconds:.0f} work "
              f"units of {unit.seconds * 1e3:.3f}ms)")
        dist = (build_distance_factor(grid, case.source_spec(grid))
                if args.mode == "factored" else None)
    else:
        if not args.model:
            raise GridError("either --case or --model is required")
        m = fileio.read_field(args.model)
        if np.min(m.values) <= 0.0:
            raise GridError("non-positive slowness in model file")
        if not args.source:
            raise GridError("--model requires --source i,j[,k]")
        grid = m.grid
        src = SourceSpec(_parse_index(args.source))
        dist = (build_distance_factor(grid, src)
                if args.mode == "factored" else None)
        import time
        t0 = time.perf_counter()
        sol = fm_solve(grid, m, src, dist, cfg)
        seconds = time.perf_counter() - t0
        unit = measure_work_unit(grid)
        print(f"model {args.model} order={args.order} mode={args.mode}")
        print(f"solved in {seconds:.3f}s ({seconds / unit.seconds:.0f} work "
              f"units of {unit.seconds * 1e3:.3f}ms)")
    if args.out:
        tau = sol.travel_time(dist)
        fileio.write_field(tau, args.out + ".tau.fld")
        print(f"wrote {args.out}.tau.fld")
        if args.mode == "factored":
            fileio.write_field(sol.tau1, args.out + ".tau1.fld")
            print(f"wrote {args.out}.tau1.fld")
    return 0


def _cmd_convergence(args) -> int:
    case = _parse_case(args.case)
    h_list = [float(x) for x in args.h_list.split(",")]
    orders = [int(x) for x in args.orders.split(",")]
    report = run_convergence(case, h_list, orders, mode=args.mode)
    report.to_csv(args.out)
    print(f"wrote {args.out}")
    for order, (s_inf, s_l2) in report.slopes().items():
        if np.isnan(s_l2):
            print(f"order {order}: slope NA (single h)")
        else:
            print(f"order {order}: fitted log2 slopes "
                  f"linf={s_inf:.2f} mean_l2={s_l2:.2f}")
    return 0


def _write_history_csv(history, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "misfit", "reg", "mu"])
        for row in history:
            w.writerow([row["iteration"], repr(row["misfit"]),
                        repr(row["reg"]), repr(row["mu"])])


def _write_matrix_csv(mat, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for row in np.atleast_2d(mat):
            w.writerow([repr(float(x)) for x in row])


def _cmd_invert(args) -> int:
    m_true = None
    if args.synthetic:
        if args.synthetic != "desk64":
            raise GridError(f"unknown synthetic problem {args.synthetic!r}")
        m_true, survey, cfg, _ = make_desk_problem(seed=args.seed,
                                                   noise_rel=args.noise)
        if args.config:
            cfg = fileio.read_inversion_config(args.config)
    else:
        if not args.survey or not args.config:
            raise GridError("--survey and --config are required without "
                            "--synthetic")
        cfg = fileio.read_inversion_config(args.config)
        survey = fileio.read_survey(args.survey, cfg.mprime_ref.grid)
    init = None
    if args.init == "truth":
        if m_true is None:
            raise GridError("--init truth needs a --synthetic problem")
        init = ScalarField(m_true.grid, cfg.bounds.inverse(m_true.values))
        # a truth start is a consistency run: anchor the regularization
        # there too so the objective is stationary at the start
        cfg = dataclasses.replace(cfg, mprime_ref=init)
    elif args.init:
        init = fileio.read_field(args.init)
    result = gauss_newton(survey, cfg, init)
    prefix = args.out_prefix
    fileio.write_field(result.m_final, prefix + ".m.fld")
    _write_history_csv(result.history, prefix + ".history.csv")
    pred = forward_data(result.m_final, survey, cfg.fm_config)
    _write_matrix_csv(pred - survey.d_obs, prefix + ".residual.csv")
    _write_matrix_csv(survey.d_obs, prefix + ".dobs.csv")
    last = result.history[-1]
    print(f"iterations: {last['iteration']}  misfit: {last['misfit']:.6e}  "
          f"reg: {last['reg']:.6e}")
    if result.stopped_early:
        print("warning: line search could not decrease the objective; "
              "returned the best iterate", file=sys.stderr)
    print(f"wrote {prefix}.m.fld {prefix}.history.csv {prefix}.residual.csv "
          f"{prefix}.dobs.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="eikmarch",
        description="Factored-eikonal fast marching and travel-time "
                    "tomography",
    )
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="single solve of a case or model file")
    ps.add_argument("--case", help=f"analytic case: {', '.join(sorted(_CASES))}")
    ps.add_argument("--model", help="EIKFIELD file of squared slowness")
    ps.add_argument("--source", help="source node i,j[,k] (with --model)")
    ps.add_argument("--h", type=float, default=None, help="grid spacing")
    ps.add_argument("--order", type=int, default=1, choices=(1, 2))
    ps.add_argument("--mode", default="factored",
                    choices=("factored", "plain"))
    ps.add_argument("--enforce-monotonicity", action="store_true")
    ps.add_argument("--out", help="output file prefix")
    ps.set_defaults(func=_cmd_solve)

    pc = sub.add_parser("convergence", help="error table over a list of h")
    pc.add_argument("--case", required=True)
    pc.add_argument("--h-list", required=True, help="comma-separated h values")
    pc.add_argument("--orders", default="1,2", help="comma-separated orders")
    pc.add_argument("--mode", default="factored",
                    choices=("factored", "plain"))
    pc.add_argument("--out", required=True, help="output CSV path")
    pc.set_defaults(func=_cmd_convergence)

    pi = sub.add_parser("invert", help="Gauss-Newton travel-time inversion")
    pi.add_argument("--survey", help="EIKSURV observation file")
    pi.add_argument("--synthetic", help="built-in synthetic problem (desk64)")
    pi.add_argument("--config", help="inversion config file")
    pi.add_argument("--seed", type=int, default=7)
    pi.add_argument("--noise", type=float, default=0.01)
    pi.add_argument("--init", help="starting model: EIKFIELD of the "
                    "unconstrained variable, or 'truth' with --synthetic")
    pi.add_argument("--out-prefix", required=True)
    pi.set_defaults(func=_cmd_invert)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SolverError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (GridError, fileio.FormatError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
