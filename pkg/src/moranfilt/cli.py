"""Command-line entry point: ``moranfilt {estimate,eigen,simulate,benchmark}``.

Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.
"""

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from . import simgen
from .eigenbase import exact_basis_from_coords, nystrom_moran_eigen
from .errors import MoranfiltError, NumericalError, ParameterError
from .esf import DEFAULT_SCREEN, fit_esf, fit_lm
from .reesf import compute_moments, fit_reesf_moments
from .spatial_graph import KernelSpec, estimate_range_mst, select_knots

log = logging.getLogger("moranfilt")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
DEFAULT_KNOTS = 200


class UsageError(ParameterError):
    pass


def fmt(x):
    """Round-trip exact decimal text (17 significant digits)."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, default=_json_default)
        fh.write("\n")


# -- dataset files ---------------------------------------------------------

def read_dataset(path, coord_cols, response=None, covariates=None):
    """Read a DatasetFile CSV.

    Returns ``(coords, y, X_without_intercept, covariate_names)``; ``y`` is
    None when ``response`` is None.
    """
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise UsageError(f"{path}: empty file")
        rows = [r for r in reader if r]
    index = {h: i for i, h in enumerate(header)}
    if covariates is None and response is not None:
        covariates = [h for h in header if h not in (*coord_cols, response)]
    wanted = list(coord_cols) + ([response] if response else []) + list(covariates or [])
    for name in wanted:
        if name not in index:
            raise UsageError(f"column {name!r} not found in {path} (have {header})")
    data = {}
    for name in wanted:
        j = index[name]
        col = np.empty(len(rows))
        for i, r in enumerate(rows):
            try:
                col[i] = float(r[j])
            except (ValueError, IndexError):
                raise UsageError(f"column {name!r}, row {i + 2}: not a decimal number")
        if not np.all(np.isfinite(col)):
            raise UsageError(f"column {name!r} contains non-finite values")
        data[name] = col
    coords = np.column_stack([data[c] for c in coord_cols])
    y = data[response] if response else None
    covs = list(covariates or [])
    X = np.column_stack([data[c] for c in covs]) if covs else np.empty((len(rows), 0))
    min_rows = max(len(covs) + 1 + 2, 10) if response else 10
    if len(rows) < min_rows:
        raise UsageError(f"{path}: need at least {min_rows} rows, found {len(rows)}")
    return coords, y, X, covs


# -- shared pipeline pieces ------------------------------------------------

def _kernel(args, coords, timings):
    if args.range is None:
        t0 = time.perf_counter()
        r = estimate_range_mst(coords, seed=args.seed)
        timings["range"] = time.perf_counter() - t0
    else:
        if not args.range > 0:
            raise UsageError(f"--range must be positive, got {args.range}")
        r = args.range
    return KernelSpec(args.kernel, r)


def _basis(args, coords, spec, timings):
    n = len(coords)
    if args.knots < 2:
        raise UsageError(f"--knots must be at least 2, got {args.knots}")
    L = min(args.knots, n)
    t0 = time.perf_counter()
    knots = select_knots(coords, L, args.seed)
    timings["knots"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    basis = nystrom_moran_eigen(coords, knots, spec)
    timings["eigen"] = time.perf_counter() - t0
    return basis


def _with_stage(stage, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except NumericalError as exc:
        exc.stage = stage
        raise
    except np.linalg.LinAlgError as exc:
        err = NumericalError(str(exc))
        err.stage = stage
        raise err from exc


def cmd_estimate(args):
    coords, y, Xraw, names = read_dataset(
        args.data, args.coords, args.response, args.covariates)
    n = len(y)
    X = np.column_stack([np.ones(n), Xraw])
    coef_names = ["(Intercept)"] + names
    screen = None if args.screen == "off" else _threshold(args.screen)
    timings = dict(range=0.0, knots=0.0, eigen=0.0, moments=0.0, optimize=0.0, solve=0.0)
    spec = _kernel(args, coords, timings)
    theta = None
    variance = {}
    selected = None
    if args.model == "lm":
        t0 = time.perf_counter()
        fit = _with_stage("solve", fit_lm, X, y)
        timings["solve"] = time.perf_counter() - t0
        L_ret = 0
        variance["sigma2"] = fit.sigma2
    else:
        basis = _with_stage("eigen", _basis, args, coords, spec, timings)
        if args.model == "esf":
            t0 = time.perf_counter()
            fit = _with_stage("solve", fit_esf, X, y, basis, screening=screen)
            timings["solve"] = time.perf_counter() - t0
            selected = fit.selected.tolist()
            L_ret = len(fit.selected)
            variance["sigma2"] = fit.sigma2
        else:
            t0 = time.perf_counter()
            mo = compute_moments(X, y, basis)
            timings["moments"] = time.perf_counter() - t0
            t0 = time.perf_counter()
            fit = _with_stage("optimize", fit_reesf_moments, mo, basis.values, None, None, None)
            timings["optimize"] = time.perf_counter() - t0
            t0 = time.perf_counter()
            fit.residuals = y - X @ fit.beta - basis.vectors @ fit.gamma
            timings["solve"] = time.perf_counter() - t0
            L_ret = basis.L
            theta = dict(alpha=fit.theta.alpha, sigma_gamma2=fit.theta.sigma_gamma2)
            variance.update(sigma2=fit.sigma2,
                            random_effect_variance=fit.sigma2 * fit.theta.sigma_gamma2,
                            loglik=fit.loglik)
    for name, b, se in zip(coef_names, fit.beta, fit.beta_se):
        if not (np.isfinite(b) and np.isfinite(se) and se > 0):
            raise NumericalError(f"coefficient {name!r} has no finite estimate/se")
    mc = _with_stage("diagnostics", dg.residual_mc_z, fit.residuals, coords, spec,
                     seed=args.seed)

    report = dict(
        model=args.model, n=n, K=X.shape[1], L_retained=L_ret,
        knots_requested=None if args.model == "lm" else args.knots,
        kernel=dict(family=spec.family.value, range=spec.range),
        screen=None if args.model != "esf" else screen,
        selected=selected, theta=theta,
        coefficients=[dict(name=nm, estimate=b, se=se, z=b / se)
                      for nm, b, se in zip(coef_names, fit.beta, fit.beta_se)],
        variance_components=variance, residual_mc=mc.to_dict(),
        runtime=timings, seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", report)
    fitted = y - fit.residuals
    write_csv(out / "residuals.csv", ["id", "fitted", "residual"],
              ((i + 1, f, e) for i, (f, e) in enumerate(zip(fitted, fit.residuals))))
    _print_summary(report)
    return EXIT_OK


def _print_summary(report):
    print(f"model: {report['model']}  n={report['n']}  K={report['K']}  "
          f"L_retained={report['L_retained']}")
    k = report["kernel"]
    print(f"kernel: {k['family']}  range={k['range']:.6g}")
    if report["theta"]:
        t = report["theta"]
        print(f"theta: alpha={t['alpha']:.6g}  sigma_gamma2={t['sigma_gamma2']:.6g}")
    print(f"{'coefficient':<16}{'estimate':>14}{'se':>14}{'z':>10}")
    for c in report["coefficients"]:
        print(f"{c['name']:<16}{c['estimate']:>14.6g}{c['se']:>14.6g}{c['z']:>10.3f}")
    mc = report["residual_mc"]
    print(f"residual MC={mc['mc']:.6g}  z={mc['z']:.3f}"
          + ("  (subsampled)" if mc["subsampled"] else ""))


def _threshold(text):
    try:
        value = float(text)
    except ValueError:
        raise UsageError(f"--screen must be a number or 'off', got {text!r}")
    if not 0 <= value < 1:
        raise UsageError(f"--screen must be in [0, 1), got {value}")
    return value


def cmd_eigen(args):
    coords, _, _, _ = read_dataset(args.data, args.coords)
    timings = {}
    spec = _kernel(args, coords, timings)
    if args.exact:
        basis = _with_stage("eigen", exact_basis_from_coords, coords, spec)
    else:
        basis = _with_stage("eigen", _basis, args, coords, spec, timings)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cols = [f"ev_{l + 1}" for l in range(basis.L)]
    write_csv(out / "eigenvectors.csv", ["id"] + cols,
              ([i + 1, *row] for i, row in enumerate(basis.vectors)))
    write_csv(out / "eigenvalues.csv", cols, [basis.values])
    print(f"retained {basis.L} eigenvectors", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args):
    if not 0 <= args.sigma_gamma_x <= 1:
        raise UsageError(f"--sigma-gamma-x must be in [0, 1], got {args.sigma_gamma_x}")
    if args.sigma_gamma < 0:
        raise UsageError("--sigma-gamma must be nonnegative")
    beta = tuple(args.beta) if args.beta else simgen.DEFAULT_BETA
    cfg = simgen.SimConfig(
        n=args.n, L_gen=args.knots, beta_true=beta, sigma_gamma=args.sigma_gamma,
        sigma_gamma_x=args.sigma_gamma_x, alpha_true=args.alpha,
        r_true_multiplier=args.r_mult, kernel=args.kernel, replications=1,
        base_seed=args.seed, estimators=("LM",),
    )
    rep = _with_stage("simulate", simgen.simulate_dataset, cfg, 0)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True)
    cov_names = [f"x{k}" for k in range(1, len(beta))]
    write_csv(out, ["x_coord", "y_coord", *cov_names, "y"],
              (np.concatenate([c, x[1:], [yy]]) for c, x, yy in zip(rep.coords, rep.X, rep.y)))
    truth = dict(
        beta=list(beta), theta=dict(alpha=args.alpha, sigma_gamma2=args.sigma_gamma**2),
        sigma2=1.0, sigma_gamma_x=args.sigma_gamma_x, r_estimated=rep.r,
        r_true=rep.r * args.r_mult, kernel=args.kernel, L_gen=rep.truth_basis.L,
        truth_basis=rep.truth_basis.mode.value, seeds=rep.seeds,
    )
    write_json(out.with_name(out.stem + ".truth.json"), truth)
    print(f"wrote {args.n} rows to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_benchmark(args):
    if args.preset:
        configs = simgen.presets(args.preset, args.replications, args.seed,
                                 tuple(args.n) if args.n else None)
        if args.no_z:
            configs = [simgen.with_overrides(c, compute_z=False) for c in configs]
    else:
        configs = []
        for n in args.n or [5_000]:
            for sg in args.sigma_gamma:
                for sx in args.sigma_gamma_x:
                    configs.append(simgen.SimConfig(
                        n=n, L_fit=tuple(args.L), sigma_gamma=sg, sigma_gamma_x=sx,
                        alpha_true=args.alpha, r_true_multiplier=args.r_mult,
                        kernel=args.kernel, replications=args.replications or 10,
                        base_seed=args.seed, estimators=tuple(args.estimators),
                        compute_z=not args.no_z))
    table = simgen.run_matrix(configs, jobs=args.jobs)
    records = table.records()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "report.csv", list(simgen.REPORT_COLUMNS),
              ([rec[c] for c in simgen.REPORT_COLUMNS] for rec in records))
    write_json(out / "report.json", dict(
        preset=args.preset, seed=args.seed, jobs=args.jobs,
        configs=[simgen.config_to_dict(c) for c in configs], rows=records))
    for rec in records:
        print(f"{rec['estimator']:<10} n={rec['n']:<7} sg={rec['sigma_gamma']:<4} "
              f"sgx={rec['sigma_gamma_x']:<4} a={rec['alpha_true']:<4} k={rec['kernel']} "
              f"bias={rec['bias']:+.4f} rmse={rec['rmse']:.4f} "
              f"rmspe={rec['rmspe_se']:.4f} z={rec['mean_z_mc']:.2f} "
              f"t={rec['mean_fit_seconds']:.3f}s fail={rec['failures']}")
    if records and all(rec["replications"] == 0 for rec in records):
        print("every replication failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# -- argument parsing ------------------------------------------------------

def _add_data_args(p, response=True):
    p.add_argument("data", help="input CSV")
    p.add_argument("--coords", nargs=2, default=["x_coord", "y_coord"], metavar=("X", "Y"),
                   help="coordinate column names")
    if response:
        p.add_argument("--response", default="y")
        p.add_argument("--covariates", nargs="*", default=None,
                       help="covariate columns (default: every other column)")


def _add_basis_args(p):
    p.add_argument("--knots", type=int, default=DEFAULT_KNOTS)
    p.add_argument("--kernel", choices=["exp", "sph", "gau"], default="exp")
    p.add_argument("--range", type=float, default=None,
                   help="kernel range (default: longest MST edge)")
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="moranfilt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="fit LM / fast ESF / fast RE-ESF to a CSV")
    _add_data_args(p)
    _add_basis_args(p)
    p.add_argument("--model", choices=["lm", "esf", "resf"], default="resf")
    p.add_argument("--screen", default=str(DEFAULT_SCREEN),
                   help="correlation screening threshold for esf, or 'off'")
    p.add_argument("--out", default="moranfilt_out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("eigen", help="export approximated Moran eigenvectors")
    _add_data_args(p, response=False)
    _add_basis_args(p)
    p.add_argument("--exact", action="store_true", help="dense exact decomposition")
    p.add_argument("--out", default="moranfilt_eigen")
    p.set_defaults(func=cmd_eigen)

    p = sub.add_parser("simulate", help="write a synthetic dataset")
    p.add_argument("--n", type=int, default=5_000)
    p.add_argument("--sigma-gamma", type=float, default=1.0)
    p.add_argument("--sigma-gamma-x", type=float, default=0.0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--r-mult", type=float, default=1.0)
    p.add_argument("--kernel", choices=["exp", "sph", "gau"], default="exp")
    p.add_argument("--knots", type=int, default=DEFAULT_KNOTS, help="basis size of the truth")
    p.add_argument("--beta", type=float, nargs="+", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="simulated.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="Monte Carlo comparison of estimators")
    p.add_argument("--preset", choices=["table234", "table5", "scaling", "appendixB",
                                        "appendixC"])
    p.add_argument("--n", type=int, nargs="+", default=None)
    p.add_argument("--sigma-gamma", type=float, nargs="+", default=[1.0])
    p.add_argument("--sigma-gamma-x", type=float, nargs="+", default=[0.0])
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--r-mult", type=float, default=1.0)
    p.add_argument("--kernel", choices=["exp", "sph", "gau"], default="exp")
    p.add_argument("--L", type=int, nargs="+", default=[200])
    p.add_argument("--estimators", nargs="+", default=["LM", "fE", "fRE"])
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--no-z", action="store_true", help="skip residual Moran tests")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="moranfilt_bench")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"moranfilt: numerical failure in stage '{exc.stage}': {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MoranfiltError, ValueError) as exc:
        print(f"moranfilt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
