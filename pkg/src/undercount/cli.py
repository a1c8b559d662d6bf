"""
Command-line interface.

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .design import STAGES, ParseError, build_design, parse_csv
from .distribution import GammaCountDist, pmf_table, truncation_point
from .inference import ProfileError, predict, prediction_grid, profile, profile_region_2d, wald_ci
from .mle import CurvatureError, EvaluationError, aic, fit_gamma_count, lrt, test_alpha_one
from .poisson import (
    IterationLimitError,
    SingularDesignError,
    fit_poisson,
    pearson_dispersion,
    pearson_dispersion_test,
    quasi_f_test,
)
from .renewal import (
    RenewalConfig,
    _default_workers,
    count_frequencies,
    simulate_events,
    simulate_first_window_counts,
)
from .report import format_table, gamma_count_report, poisson_report
from .special import DomainError

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

MODELS = ("poisson", "quasipoisson", "gammacount")


class InputError(Exception):
    pass


class NumericalFailure(Exception):
    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload


def _r(x):
    """Machine-output number: shortest round-trip representation."""
    if x is None:
        return ""
    x = float(x)
    return repr(x) if math.isfinite(x) else ""


def _write(text, out):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _load(path):
    try:
        return parse_csv(path)
    except FileNotFoundError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except (ParseError, ValueError) as exc:
        raise InputError(str(exc)) from None


def _fit(data, model, predictor):
    X = build_design(data, predictor)
    y = data.counts
    if model == "gammacount":
        pois = fit_poisson(X, y)
        return X, fit_gamma_count(X, y), pois
    fit = fit_poisson(X, y)
    return X, fit, fit


# --- subcommands -------------------------------------------------------------

def cmd_fit(args):
    data = _load(args.data)
    try:
        X, fit, pois = _fit(data, args.model, args.predictor)
    except SingularDesignError as exc:
        raise InputError(f"predictor {args.predictor}: {exc}") from None
    if args.model == "gammacount":
        report = gamma_count_report(fit, pois, data, args.predictor)
    else:
        report = poisson_report(fit, data, args.predictor, quasi=args.model == "quasipoisson")
    text = format_table(report) if args.table else report.to_json() + "\n"
    _write(text, args.out)
    if not report.convergence.converged or report.convergence.curvature_error:
        return EXIT_NUMERIC
    return EXIT_OK


def _compare_rows(data, model, workers):
    def job(k):
        try:
            return k, "ok", _fit(data, model, k)
        except SingularDesignError:
            return k, "rank-deficient", None
        except (IterationLimitError, EvaluationError, np.linalg.LinAlgError):
            return k, "not-converged", None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(1, 6)))
    else:
        results = [job(k) for k in range(1, 6)]

    rows = []
    prev = None
    for k, status, res in results:
        row = {"predictor": k, "status": status}
        if res is not None:
            _, fit, pois = res
            if model == "gammacount" and (not fit.converged or fit.curvature_error):
                row["status"] = "not-converged" if not fit.converged else "curvature"
            row["np"] = fit.n_params
            if model == "quasipoisson":
                row["deviance"] = fit.deviance
                row["phi"] = pearson_dispersion(fit)
                row["dispersion_stat"], row["dispersion_p"] = pearson_dispersion_test(fit)
            else:
                row["loglik"] = fit.loglik
                row["aic"] = aic(fit)
            if model == "gammacount":
                row["alpha"] = fit.alpha
                row["alpha1_stat"], row["alpha1_p"] = test_alpha_one(fit, pois)
            if prev is not None:
                row["diff_np"] = fit.n_params - prev.n_params
                if model == "quasipoisson":
                    t = quasi_f_test(prev, fit)
                    row["F"], row["p_value"] = t.F, t.p
                else:
                    t = lrt(prev, fit)
                    row["lrt_stat"], row["p_value"] = t.stat, t.p
            prev = fit if row["status"] == "ok" else None
        else:
            prev = None
        rows.append(row)
    return rows


_COMPARE_COLUMNS = {
    "poisson": ("predictor", "np", "loglik", "aic", "diff_np", "lrt_stat", "p_value", "status"),
    "gammacount": ("predictor", "np", "loglik", "aic", "diff_np", "lrt_stat", "p_value",
                   "alpha", "alpha1_stat", "alpha1_p", "status"),
    "quasipoisson": ("predictor", "np", "deviance", "diff_np", "F", "p_value",
                     "phi", "dispersion_stat", "dispersion_p", "status"),
}


def cmd_compare(args):
    data = _load(args.data)
    rows = _compare_rows(data, args.model, _default_workers())
    cols = _COMPARE_COLUMNS[args.model]
    if args.format == "json":
        payload = {"model": args.model, "columns": list(cols),
                   "rows": [{c: r.get(c) for c in cols} for r in rows]}
        text = json.dumps(payload, indent=2, allow_nan=False) + "\n"
    else:
        def cell(r, c):
            v = r.get(c)
            if isinstance(v, (float, np.floating)):
                return _r(v)
            return "" if v is None else str(v)
        text = _csv_text(cols, [[cell(r, c) for c in cols] for r in rows])
    _write(text, args.out)
    return EXIT_NUMERIC if any(r["status"] in ("not-converged", "curvature") for r in rows) else EXIT_OK


def cmd_profile(args):
    data = _load(args.data)
    if args.model == "quasipoisson":
        raise InputError("profiling needs a likelihood; use --model poisson or gammacount")
    try:
        X, fit, _ = _fit(data, args.model, args.predictor)
    except SingularDesignError as exc:
        raise InputError(str(exc)) from None
    if args.model == "gammacount" and (not fit.converged or fit.curvature_error):
        raise NumericalFailure("Gamma-count fit did not converge; cannot profile")
    y = data.counts
    summary = {"model": args.model, "predictor": args.predictor, "param": args.param, "level": args.level}
    try:
        if args.with_param:
            region = profile_region_2d(X, y, fit, (args.param, args.with_param), levels=tuple(args.levels),
                                       n_grid=args.grid)
            summary.update({
                "params": list(region.names),
                "mle": [float(v) for v in region.mle],
                "thresholds": {str(k): v for k, v in region.thresholds.items()},
            })
            rows = [[_r(xv), _r(yv), _r(region.deviance[a, b])]
                    for a, xv in enumerate(region.x_grid) for b, yv in enumerate(region.y_grid)]
            header = (region.names[0], region.names[1], "deviance")
        else:
            trace, ci = profile(X, y, fit, args.param, level=args.level)
            wald = wald_ci(fit, args.param, level=args.level)
            summary.update({
                "estimate": trace.mle_value,
                "max_loglik": trace.mle_loglik,
                "ci": [ci.lower, ci.upper],
                "ci_open": [ci.lower_open, ci.upper_open],
                "wald_ci": [float(wald[0]), float(wald[1])],
                "cutoff": ci.cutoff,
            })
            rows = [[_r(v), _r(l), _r(d)] for v, l, d in trace.rows()]
            header = (args.param, "profile_loglik", "deviance")
    except ProfileError as exc:
        raise InputError(str(exc)) from None
    if args.csv:
        _write(_csv_text(header, rows), args.csv)
    _write(json.dumps(summary, indent=2, allow_nan=False) + "\n", args.out)
    return EXIT_OK


def cmd_predict(args):
    data = _load(args.data)
    try:
        _, fit, _ = _fit(data, args.model, args.predictor)
    except SingularDesignError as exc:
        raise InputError(str(exc)) from None
    if args.model == "gammacount" and (not fit.converged or fit.curvature_error):
        raise NumericalFailure("Gamma-count fit did not converge; cannot predict")
    stages = tuple(args.stage) if args.stage else STAGES
    grid = prediction_grid(step=args.step, stages=stages)
    model = args.model if args.model != "gammacount" else None
    band = predict(fit, grid, level=args.level, model=model, predictor_id=args.predictor)
    rows = [[r.stage, _r(r.defoliation), _r(r.eta_hat), _r(r.se_eta), _r(r.mean_count), _r(r.lower), _r(r.upper)]
            for r in band.rows]
    _write(_csv_text(("stage", "def", "eta_hat", "se_eta", "mean_count", "lower", "upper"), rows), args.out)
    return EXIT_OK


def cmd_simulate(args):
    try:
        cfg = RenewalConfig(args.alpha, args.mean_tau, args.horizon, args.window, args.seed)
    except DomainError as exc:
        raise InputError(str(exc)) from None
    if args.mode == "windows":
        counts = simulate_events(cfg).window_counts
    else:
        n = args.replicates if args.replicates is not None else cfg.n_windows
        counts = simulate_first_window_counts(cfg.alpha, cfg.mean_interarrival, cfg.window_width, n, cfg.seed)
    _write("count\n" + "".join(f"{int(c)}\n" for c in counts), args.out)
    if args.pmf_out:
        d = GammaCountDist(cfg.alpha, cfg.beta, cfg.window_width)
        n_max = max(int(counts.max()) if counts.size else 0, truncation_point(d))
        table = pmf_table(d, n_max)
        freq = count_frequencies(counts, n_max)
        rows = [[n, _r(freq[n]), _r(p)] for n, p in enumerate(table.probs)]
        _write(_csv_text(("n", "empirical", "analytic"), rows), args.pmf_out)
    return EXIT_OK


def cmd_pmf(args):
    try:
        d = GammaCountDist.from_linear_predictor(args.alpha, args.eta, args.horizon)
        table = pmf_table(d, args.nmax)
    except DomainError as exc:
        raise InputError(str(exc)) from None
    rows = [[n, _r(p)] for n, p in table.as_rows()]
    _write(_csv_text(("n", "probability"), rows), args.out)
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def _level(text):
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("level must lie in (0, 1)")
    return v


def _positive(text):
    v = float(text)
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError("must be a positive number")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="undercount", description="Gamma-count regression toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp, predictor_default=None):
        sp.add_argument("--data", required=True, help="CSV with header count,def,stage,rep")
        sp.add_argument("--model", choices=MODELS, required=predictor_default is None,
                        default=None if predictor_default is None else "gammacount")
        if predictor_default is None:
            sp.add_argument("--predictor", type=int, choices=range(1, 6), required=True)
        else:
            sp.add_argument("--predictor", type=int, choices=range(1, 6), default=predictor_default)
        sp.add_argument("--out", help="write to this file instead of stdout")

    sp = sub.add_parser("fit", help="fit one model and emit a report")
    data_args(sp)
    fmt = sp.add_mutually_exclusive_group()
    fmt.add_argument("--json", action="store_true", help="JSON report (default)")
    fmt.add_argument("--table", action="store_true", help="human-readable table")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("compare", help="fit predictors 1-5 and test consecutive pairs")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", choices=MODELS, required=True)
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("profile", help="profile likelihood interval (or 2-D region)")
    data_args(sp, predictor_default=5)
    sp.add_argument("--param", required=True, help="parameter name, e.g. alpha or (Intercept)")
    sp.add_argument("--level", type=_level, default=0.95)
    sp.add_argument("--with-param", help="second parameter: emit a 2-D profile region instead")
    sp.add_argument("--levels", type=_level, nargs="+", default=[0.90, 0.95, 0.99])
    sp.add_argument("--grid", type=int, default=41, help="2-D region: points per axis (odd)")
    sp.add_argument("--csv", help="write the profile grid as CSV to this file")
    sp.set_defaults(func=cmd_profile)

    sp = sub.add_parser("predict", help="expected counts with confidence bands")
    data_args(sp, predictor_default=5)
    sp.add_argument("--level", type=_level, default=0.95)
    sp.add_argument("--step", type=_positive, default=0.01)
    sp.add_argument("--stage", action="append", choices=STAGES)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("simulate", help="simulate a Gamma renewal process and count events")
    sp.add_argument("--alpha", type=_positive, required=True)
    sp.add_argument("--mean-tau", type=_positive, required=True)
    sp.add_argument("--horizon", type=_positive, required=True)
    sp.add_argument("--window", type=_positive, default=1.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--mode", choices=("windows", "replicates"), default="windows")
    sp.add_argument("--replicates", type=int, help="replicates mode: number of realizations")
    sp.add_argument("--pmf-out", help="write empirical vs analytic pmf CSV to this file")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("pmf", help="Gamma-count pmf at alpha and linear predictor eta")
    sp.add_argument("--alpha", type=_positive, required=True)
    sp.add_argument("--eta", type=float, required=True)
    sp.add_argument("--nmax", type=int, required=True)
    sp.add_argument("--horizon", type=_positive, default=1.0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_pmf)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalFailure, CurvatureError, EvaluationError, IterationLimitError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # DesignError, ParseError, DomainError and extrapolation refusals
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
