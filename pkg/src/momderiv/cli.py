"""Command line entry point ``momderiv``.

Single-result commands print JSON with ``schema_version`` and the resolved
configuration; ``simulate`` and ``--grid-out`` write CSV.  Exit status is 0
on success, 1 for usage or input errors and 2 for numerical failures.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings

import numpy as np

from . import applications as app
from . import competitors, derivative, dr, montecarlo, qr
from .data import DataError, IndexInterval, load_csv
from .kernels import FAMILIES, KernelSpec

SCHEMA_VERSION = "1.0"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _emit(args, result):
    config = {k: v for k, v in vars(args).items() if k not in ("func",)}
    payload = {"schema_version": SCHEMA_VERSION, "command": args.command,
               "config": config, "result": result}
    print(json.dumps(_jsonable(payload), indent=2))


def _write_grid(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


# --------------------------------------------------------------------------
# shared argument groups


def _add_data(p):
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--response", required=True, help="name of the response column")
    p.add_argument("--intercept", action="store_true", help="prepend a column of ones")


def _add_kernel(p, h_required=True):
    p.add_argument("--kernel", choices=FAMILIES, default="triangular")
    p.add_argument("--h", type=float, required=h_required, default=None, help="bandwidth")


def _add_interval(p):
    p.add_argument("--u-lower", type=float, default=None)
    p.add_argument("--u-upper", type=float, default=None)


def _interval(args, data):
    lo = args.u_lower if args.u_lower is not None else float(data.y.min())
    hi = args.u_upper if args.u_upper is not None else float(data.y.max())
    args.u_lower, args.u_upper = lo, hi
    return IndexInterval(lo, hi)


def _point_x(args, data):
    if args.x is None:
        raise UsageError("--x is required")
    if len(args.x) != data.p:
        raise UsageError(f"--x has {len(args.x)} entries but the design has {data.p} columns "
                         f"({', '.join(data.column_names)})")
    return args.x


def _load(args):
    return load_csv(args.data, args.response, intercept=args.intercept)


def _kern(args):
    if args.h is None or args.h <= 0:
        raise UsageError("--h must be a positive bandwidth")
    return KernelSpec(args.kernel, args.h)


# --------------------------------------------------------------------------
# commands


def cmd_qr_fit(args):
    data = _load(args)
    est = qr.qr_fit(data, args.u)
    _emit(args, {"u": est.u, "theta": est.theta, "objective": est.objective,
                 "converged": est.converged, "columns": list(data.column_names)})
    return 0


def cmd_dr_fit(args):
    data = _load(args)
    est = dr.dr_fit(data, args.u)
    _emit(args, {"u": est.u, "theta": est.theta, "objective": est.objective,
                 "converged": est.converged, "columns": list(data.column_names)})
    return 0


def cmd_qr_deriv(args):
    data = _load(args)
    kernel = _kern(args)
    u = args.u
    if args.method == "moment":
        est = derivative.qr_theta_u(data, u, kernel, symmetrize=args.symmetrize)
        out = {"u": u, "theta": est.theta, "theta_u": est.theta_u,
               "m_theta": est.m_theta.matrix, "m_u": est.m_u.vector,
               "diagnostics": est.diagnostics}
        if args.variance:
            est = derivative.qr_variance(data, est, S=args.variance, seed=args.seed, kernel=kernel)
            out["variance"] = est.variance
            out["sampling_covariance"] = est.sampling_covariance
            out["diagnostics"] = est.diagnostics
    elif args.method == "smoothed":
        grid = competitors.smoothing_grid(u, kernel.h, args.grid_step)
        proc = qr.qr_process(data, grid)
        tu = competitors.smoothed_process_deriv(proc, u, kernel)
        out = {"u": u, "theta": proc.at(u), "theta_u": tu,
               "diagnostics": {"grid_points": int(grid.size)}}
    else:
        res = competitors.augmented_qr(data, u, kernel)
        out = {"u": u, "theta": res.theta, "theta_u": res.theta_u,
               "diagnostics": {"objective": res.objective, "init_objective": res.init_objective,
                               "evaluations": res.evaluations, **res.info}}
    out["columns"] = list(data.column_names)
    _emit(args, out)
    return 0


def cmd_dr_deriv(args):
    data = _load(args)
    kernel = _kern(args)
    interval = _interval(args, data)
    est = derivative.dr_theta_u(data, args.u, kernel, interval)
    out = {"u": args.u, "theta": est.theta, "theta_u": est.theta_u,
           "m_theta": est.m_theta.matrix, "m_u": est.m_u.vector}
    if args.variance:
        est = derivative.dr_variance(data, est, kernel)
        out["variance"] = est.variance
        out["sampling_covariance"] = est.sampling_covariance
    out["diagnostics"] = est.diagnostics
    out["columns"] = list(data.column_names)
    _emit(args, out)
    return 0


def cmd_cdf(args):
    data = _load(args)
    x = _point_x(args, data)
    proc = qr.qr_process(data, app.trimmed_grid(args.epsilon, args.grid_step))
    out = {}
    if args.y is not None:
        out["cdf"] = app.qr_cdf(proc, app.EvalPoint(x, y=args.y), args.epsilon)
    if args.grid_out:
        fitted = proc.thetas @ np.asarray(x)
        ys = np.sort(fitted)
        rows = [(yv, app.qr_cdf(proc, app.EvalPoint(x, y=yv), args.epsilon)) for yv in ys]
        _write_grid(args.grid_out, ["y", "cdf"], rows)
        out["grid_out"] = args.grid_out
    if not out:
        raise UsageError("give --y or --grid-out")
    _emit(args, out)
    return 0


def cmd_density(args):
    data = _load(args)
    kernel = _kern(args)
    x = _point_x(args, data)
    out = {"model": args.model}
    if args.model == "qr":
        proc = qr.qr_process(data, app.trimmed_grid(args.epsilon, args.grid_step))
        if args.y is not None:
            out["density"] = app.qr_density(data, app.EvalPoint(x, y=args.y), kernel,
                                            args.epsilon, process=proc)
            out["cdf"] = app.qr_cdf(proc, app.EvalPoint(x, y=args.y), args.epsilon)
        if args.grid_out:
            rows = []
            for u, th in zip(proc.grid, proc.thetas):
                yv = float(np.asarray(x) @ th)
                try:
                    dv = app.density_quantile(data, app.EvalPoint(x, u=u), kernel)
                except (ArithmeticError, np.linalg.LinAlgError):
                    dv = float("nan")
                rows.append((u, yv, dv))
            _write_grid(args.grid_out, ["u", "y", "density"], rows)
            out["grid_out"] = args.grid_out
    else:
        interval = _interval(args, data)
        level = args.u if args.u is not None else args.y
        if level is not None:
            res = app.dr_density(data, app.EvalPoint(x, u=level), kernel, interval)
            out.update({"u": level, "density": res.value, "negative": res.negative})
        if args.grid_out:
            grid = app.default_dr_grid(data, step=args.grid_step)
            grid = grid[(grid > interval.u_lower) & (grid < interval.u_upper)]
            rows = []
            for u in grid:
                try:
                    v = app.dr_density(data, app.EvalPoint(x, u=u), kernel, interval).value
                except (ArithmeticError, RuntimeError, np.linalg.LinAlgError, ValueError):
                    v = float("nan")
                rows.append((u, v))
            _write_grid(args.grid_out, ["y", "density"], rows)
            out["grid_out"] = args.grid_out
    if len(out) == 1:
        raise UsageError("give --y (qr), --u (dr) or --grid-out")
    _emit(args, out)
    return 0


def cmd_density_quantile(args):
    data = _load(args)
    kernel = _kern(args)
    x = _point_x(args, data)
    out = {"u": args.u, "density_quantile": app.density_quantile(data, app.EvalPoint(x, u=args.u), kernel)}
    if args.powell:
        out["powell_variance"] = app.powell_variance(data, args.u, kernel)
    _emit(args, out)
    return 0


def cmd_auction(args):
    data = _load(args)
    kernel = _kern(args)
    x = _point_x(args, data)
    spec = app.AuctionSpec(args.bidders)
    out = {"u": args.u, "bidders": args.bidders,
           "valuation_quantile": app.auction_quantile(data, app.EvalPoint(x, u=args.u), spec, kernel)}
    if args.grid_out:
        grid = app.trimmed_grid(args.epsilon, args.grid_step)
        rows = []
        for u in grid:
            try:
                rows.append((u, app.auction_quantile(data, app.EvalPoint(x, u=u), spec, kernel)))
            except (ArithmeticError, np.linalg.LinAlgError):
                rows.append((u, float("nan")))
        _write_grid(args.grid_out, ["u", "valuation_quantile"], rows)
        out["grid_out"] = args.grid_out
    _emit(args, out)
    return 0


def cmd_qpe(args):
    data = _load(args)
    kernel = _kern(args)
    x = _point_x(args, data)
    interval = _interval(args, data)
    proc = dr.dr_process(data, app.default_dr_grid(data, step=args.grid_step))
    point = app.EvalPoint(x, tau=args.tau)
    q = app.dr_quantile(proc, point)
    effect = app.qpe(data, point, kernel, interval, process=proc)
    _emit(args, {"tau": args.tau, "quantile": q.value, "monotone": q.monotone, "qpe": effect,
                 "columns": list(data.column_names)})
    return 0


def cmd_simulate(args):
    overrides = {"n_values": args.n, "h_values": args.h, "replications": args.reps,
                 "seed": args.seed, "kernel": args.kernel, "u": args.u}
    if args.table is not None:
        cfg = montecarlo.StudyConfig.for_table(args.table, **overrides)
    else:
        if args.n is None or args.h is None:
            raise UsageError("without --table, give --n and --h")
        cfg = montecarlo.StudyConfig(model=args.model, method=args.method,
                                     n_values=tuple(args.n), h_values=tuple(args.h),
                                     **{k: v for k, v in overrides.items()
                                        if k not in ("n_values", "h_values") and v is not None})
    result = montecarlo.run_study(cfg, threads=args.threads)
    text = result.to_csv()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="momderiv", description="Derivatives of quantile and distribution "
                     "regression coefficient functions and their applications.")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker processes (default: $MOMDERIV_THREADS or 1)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("qr-fit", help="quantile regression at level u")
    _add_data(p)
    p.add_argument("--u", type=float, required=True)
    p.set_defaults(func=cmd_qr_fit)

    p = sub.add_parser("dr-fit", help="distribution regression at threshold u")
    _add_data(p)
    p.add_argument("--u", type=float, required=True)
    p.set_defaults(func=cmd_dr_fit)

    p = sub.add_parser("qr-deriv", help="derivative of the QR coefficient function")
    _add_data(p)
    _add_kernel(p)
    p.add_argument("--u", type=float, required=True)
    p.add_argument("--method", choices=("moment", "smoothed", "aqr"), default="moment")
    p.add_argument("--symmetrize", action="store_true")
    p.add_argument("--variance", type=int, metavar="S", default=None,
                   help="simulate the asymptotic variance with S draws")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-step", type=float, default=montecarlo.SMOOTHED_GRID_STEP,
                   help="process grid step for --method smoothed")
    p.set_defaults(func=cmd_qr_deriv)

    p = sub.add_parser("dr-deriv", help="derivative of the DR coefficient function")
    _add_data(p)
    _add_kernel(p)
    _add_interval(p)
    p.add_argument("--u", type=float, required=True)
    p.add_argument("--variance", action="store_true", help="add the plug-in variance")
    p.set_defaults(func=cmd_dr_deriv)

    p = sub.add_parser("cdf", help="QR-based conditional CDF")
    _add_data(p)
    p.add_argument("--x", type=_floats, default=None)
    p.add_argument("--y", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=app.DEFAULT_EPSILON)
    p.add_argument("--grid-step", type=float, default=app.DEFAULT_GRID_STEP)
    p.add_argument("--grid-out", default=None)
    p.set_defaults(func=cmd_cdf)

    p = sub.add_parser("density", help="conditional density from QR or DR")
    _add_data(p)
    _add_kernel(p)
    _add_interval(p)
    p.add_argument("--model", choices=("qr", "dr"), default="qr")
    p.add_argument("--x", type=_floats, default=None)
    p.add_argument("--y", type=float, default=None)
    p.add_argument("--u", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=app.DEFAULT_EPSILON)
    p.add_argument("--grid-step", type=float, default=app.DEFAULT_GRID_STEP)
    p.add_argument("--grid-out", default=None)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("density-quantile", help="conditional density at the u-quantile")
    _add_data(p)
    _add_kernel(p)
    p.add_argument("--u", type=float, required=True)
    p.add_argument("--x", type=_floats, default=None)
    p.add_argument("--powell", action="store_true", help="also report the QR sandwich variance")
    p.set_defaults(func=cmd_density_quantile)

    p = sub.add_parser("qpe", help="quantile partial effect from DR")
    _add_data(p)
    _add_kernel(p)
    _add_interval(p)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--x", type=_floats, default=None)
    p.add_argument("--grid-step", type=float, default=app.DEFAULT_GRID_STEP)
    p.set_defaults(func=cmd_qpe)

    p = sub.add_parser("auction", help="private-value quantile from bid data")
    _add_data(p)
    _add_kernel(p)
    p.add_argument("--u", type=float, required=True)
    p.add_argument("--bidders", type=int, required=True)
    p.add_argument("--x", type=_floats, default=None)
    p.add_argument("--epsilon", type=float, default=app.DEFAULT_EPSILON)
    p.add_argument("--grid-step", type=float, default=app.DEFAULT_GRID_STEP)
    p.add_argument("--grid-out", default=None)
    p.set_defaults(func=cmd_auction)

    p = sub.add_parser("simulate", help="Monte Carlo study (CSV on stdout)")
    p.add_argument("--table", type=int, choices=(1, 2, 3), default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=_ints, default=None)
    p.add_argument("--h", type=_floats, default=None)
    p.add_argument("--u", type=float, default=None)
    p.add_argument("--model", choices=("qr", "dr"), default="qr")
    p.add_argument("--method", choices=("moment", "smoothed", "aqr"), default="moment")
    p.add_argument("--kernel", choices=FAMILIES, default="triangular")
    p.add_argument("--out", default=None, help="also write the CSV to this file")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.threads = montecarlo.resolve_threads(args.threads)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            code = args.func(args)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        return code
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return 0 if e.code in (0, None) else 1
    except (DataError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError,
            derivative.EmptyKernelSupportError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
