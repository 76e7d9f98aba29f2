"""Command-line interface: ``finreg {fit,cv,predict,simulate}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

from . import __version__
from .cv import kfold_cv, lambda_path
from .dataio import SCHEMA_VERSION, Standardizer, build_model, design_matrix, parse_dataset, read_fit_file, \
    template_model, write_json, _clean
from .design import CUMULATIVE, INTERVAL, SURVIVAL
from .errors import DataError, FinregError
from .fista import fit_fista
from .inference import category_grid, natural_scale_table, predict_probs, wald_table
from .prox_newton import SolverOptions, fit

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
P_DISPLAY_FLOOR = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _family(s):
    return s.replace("-", "_")


def _add_model_args(p):
    p.add_argument("--data", required=True, help="CSV file with lower/upper or category columns")
    p.add_argument("--family", default="gaussian", choices=["gaussian", "logistic", "extreme-value"])
    p.add_argument("--model", default="interval", choices=[INTERVAL, CUMULATIVE, SURVIVAL])
    p.add_argument("--scale", default="known", choices=["known", "unknown"])
    p.add_argument("--basis", default="exponential", choices=["exponential", "weibull"],
                   help="survival baseline (survival model only)")
    p.add_argument("--no-intercept", action="store_true")
    p.add_argument("--predictors", help="comma-separated predictor columns (default: all others)")
    p.add_argument("--lambda1", type=float, default=0.0)
    p.add_argument("--lambda2", type=float, default=0.0)
    p.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=None,
                   help="fit on standardized predictors (default: on for penalized fits)")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--solver", default="prox-newton", choices=["prox-newton", "fista"])
    p.add_argument("--out", help="write the JSON result here")
    p.add_argument("--json", action="store_true", help="print JSON instead of text")


def build_parser():
    parser = _Parser(prog="finreg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_fit = sub.add_parser("fit", help="fit one model")
    _add_model_args(p_fit)

    p_cv = sub.add_parser("cv", help="cross-validate lambda1 and refit")
    _add_model_args(p_cv)
    p_cv.add_argument("--k-folds", type=int, default=5)
    p_cv.add_argument("--n-lambda", type=int, default=50)
    p_cv.add_argument("--lambda-ratio", type=float, default=1e-2)
    p_cv.add_argument("--lambda-grid", help="comma-separated lambda1 values (overrides the path)")
    p_cv.add_argument("--seed", type=int, default=0)
    p_cv.add_argument("--one-se", action="store_true")

    p_pred = sub.add_parser("predict", help="category probabilities from a fit file")
    p_pred.add_argument("--fit-file", required=True)
    p_pred.add_argument("--data", required=True, help="CSV with the predictor columns")
    p_pred.add_argument("--grid", help="comma-separated cut points (interval/survival models)")
    p_pred.add_argument("--out")
    p_pred.add_argument("--json", action="store_true")

    p_sim = sub.add_parser("simulate", help="run the misspecification simulation")
    p_sim.add_argument("--config", required=True, help="JSON file with simulation settings")
    p_sim.add_argument("--out-dir", help="directory for report.json/report.csv/plot_data.csv")
    p_sim.add_argument("--json", action="store_true")
    return parser


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"not a comma-separated list of numbers: {text!r}") from None


class _Prepared:
    """Model built from CLI arguments, possibly on standardized predictors."""

    def __init__(self, args, penalized):
        preds = args.predictors.split(",") if args.predictors else None
        self.ds = parse_dataset(args.data, predictors=preds)
        self.kind = args.model
        self.family = _family(args.family)
        self.scale = "unknown" if args.scale == "unknown" else "known_one"
        self.intercept = not args.no_intercept and self.kind != CUMULATIVE
        self.standardize = penalized if args.standardize is None else args.standardize
        kw = dict(kind=self.kind, family=self.family, scale=self.scale, basis=args.basis,
                  intercept=self.intercept)
        self.raw = build_model(self.ds, **kw)
        X, self.columns = design_matrix(self.ds, self.intercept)
        self.std = None
        self.model = self.raw
        if self.standardize and X.shape[1]:
            # centering needs an intercept or cutpoints to absorb the shift
            can_center = self.intercept or self.kind == CUMULATIVE
            self.std = Standardizer.fit(X, center=can_center)
            self.model = build_model(self.ds, X=self.std.transform(X), **kw)

    def to_raw(self, theta):
        if self.std is None:
            return np.asarray(theta, float)
        off = self.model.meta["x_offset"]
        if self.kind == CUMULATIVE:
            return self.std.unstandardize(theta, off, slice(0, off), +1.0)
        shift = off if self.intercept else None
        return self.std.unstandardize(theta, off, shift, -1.0)

    def spec(self):
        grid = category_grid(self.raw)
        return {
            "kind": self.kind, "family": self.family, "scale": self.scale,
            "basis": self.raw.meta.get("basis"), "intercept": self.intercept,
            "predictors": list(self.ds.column_names), "design_columns": list(self.columns),
            "labels": list(self.raw.labels), "n_obs": self.raw.n,
            "n_categories": int(grid) if self.kind == CUMULATIVE else None,
            "grid": None if self.kind == CUMULATIVE else [float(g) for g in grid],
        }


def _solve(prep, pen, args, theta0=None):
    solver = fit_fista if args.solver == "fista" else fit
    return solver(prep.model, pen, SolverOptions(tol=args.tol), theta0)


def _finish_fit(prep, res, pen):
    """Translate a fit to raw-scale coefficients and attach inference when unpenalized."""
    theta = prep.to_raw(res.theta_hat)
    res.theta_hat = theta
    out = {"model": prep.spec(), "fit": res.to_dict(),
           "penalty": {"lambda1": pen.lambda1, "lambda2": pen.lambda2,
                       "standardized": prep.std is not None},
           "coefficients": dict(zip(prep.raw.labels, theta.tolist()))}
    if not res.penalized and res.converged:
        table = wald_table(prep.raw, res)
        out["inference"] = table.to_dict()
        if prep.kind == INTERVAL and prep.scale == "unknown":
            out["natural_scale"] = natural_scale_table(prep.raw, res).to_dict()
    return out


def _fmt(x, p_value=False):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "NA"
    if p_value and x < P_DISPLAY_FLOOR:
        return "0"
    return f"{x:.4g}"


def format_table(table: dict, title: str) -> str:
    cols = table["labels"]
    rows = [("Est.", [_fmt(v) for v in table["estimates"]]),
            ("S.E.", [_fmt(v) for v in table["std_errors"]]),
            ("p-value", [_fmt(v, True) for v in table["p_values"]])]
    width = max(8, *(len(c) for c in cols), *(len(v) for _, vals in rows for v in vals)) + 1
    head = " " * 8 + "".join(c.rjust(width) for c in cols)
    lines = [title, head, "-" * len(head)]
    for name, vals in rows:
        lines.append(name.ljust(8) + "".join(v.rjust(width) for v in vals))
    return "\n".join(lines)


def _fit_text(out) -> str:
    f = out["fit"]
    lines = [f"model: {out['model']['kind']} ({out['model']['family']}), n = {f['n_obs']}",
             f"converged: {f['converged']} after {f['outer_iters']} outer iterations, "
             f"||J||_inf = {f['j_norm']:.3g}",
             f"objective: {f['objective']:.10g}   log-likelihood: {f['loglik']:.6g}"]
    if "inference" in out:
        lines.append(f"BIC: {out['inference']['bic']:.6g}")
        lines.append("")
        lines.append(format_table(out["inference"], "Coefficients"))
        if "natural_scale" in out:
            lines.append("")
            lines.append(format_table(out["natural_scale"], "Latent scale and regression coefficients"))
    else:
        lines.append(f"penalty: lambda1 = {f['lambda1']:.6g}, lambda2 = {f['lambda2']:.6g}")
        width = max(len(k) for k in out["coefficients"]) + 2
        for k, v in out["coefficients"].items():
            lines.append(f"  {k.ljust(width)}{v: .6g}")
    return "\n".join(lines)


def _emit(out, args, text):
    if getattr(args, "out", None):
        write_json(out, args.out)
    if args.json:
        print(json.dumps(_clean({"schema_version": SCHEMA_VERSION, **out}), indent=2))
    else:
        print(text)


def cmd_fit(args) -> int:
    prep = _Prepared(args, penalized=args.lambda1 > 0 or args.lambda2 > 0)
    pen = prep.model.penalty_default.with_lambdas(args.lambda1, args.lambda2)
    res = _solve(prep, pen, args)
    out = _finish_fit(prep, res, pen)
    _emit(out, args, _fit_text(out))
    if not res.converged:
        print(f"error: fit did not converge: {res.message}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_cv(args) -> int:
    prep = _Prepared(args, penalized=True)
    pen = prep.model.penalty_default.with_lambdas(lambda2=args.lambda2)
    opts = SolverOptions(tol=args.tol)
    if args.lambda_grid:
        grid = np.array(_floats(args.lambda_grid))
        if np.any(grid < 0):
            raise UsageError("lambda values must be nonnegative")
    else:
        grid = lambda_path(prep.model, pen, args.n_lambda, args.lambda_ratio, opts)
    cvres = kfold_cv(prep.model, pen, grid, args.k_folds, args.seed, opts, one_se=args.one_se)
    # refit along the path down to the selected value
    theta = None
    for lam in cvres.lambdas[: cvres.selected_index + 1]:
        res = _solve(prep, pen.with_lambdas(lambda1=lam), args, theta)
        theta = res.theta_hat
    sel_pen = pen.with_lambdas(lambda1=cvres.selected_lambda)
    out = _finish_fit(prep, res, sel_pen)
    out["cv"] = cvres.to_dict()
    lines = [f"{args.k_folds}-fold cross-validation (seed {args.seed}), "
             f"{len(cvres.lambdas)} lambda values, {cvres.n_invalid} failed cells",
             f"{'lambda1':>12} {'mean loss':>10} {'s.e.':>10}"]
    for i, (lam, m, s) in enumerate(zip(cvres.lambdas, cvres.mean_loss, cvres.se_loss)):
        mark = " *" if i == cvres.selected_index else ""
        lines.append(f"{lam:12.6g} {_fmt(m):>10} {_fmt(s):>10}{mark}")
    lines.append(f"selected lambda1 = {cvres.selected_lambda:.6g}")
    lines.append("")
    lines.append(_fit_text(out))
    _emit(out, args, "\n".join(lines))
    if not res.converged:
        print(f"error: final fit did not converge: {res.message}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def category_labels(spec, grid):
    if spec["kind"] == CUMULATIVE:
        return [str(j) for j in range(1, spec["n_categories"] + 1)]
    first = "0" if spec["kind"] == SURVIVAL else "-inf"
    bounds = [first] + [f"{g:g}" for g in grid] + ["inf"]
    return [f"[{a},{b})" for a, b in zip(bounds[:-1], bounds[1:])]


def predict_rows(doc: dict, X, grid=None) -> np.ndarray:
    """Category probabilities for each row of the design matrix ``X``."""
    spec = doc["model"]
    template = template_model(spec)
    theta = np.array(doc["fit"]["theta_hat"], dtype=float)
    if spec["kind"] == CUMULATIVE:
        g = spec["n_categories"]
    else:
        g = np.asarray(spec["grid"] if grid is None else grid, float)
    return np.vstack([predict_probs(template, theta, x, g) for x in X])


def cmd_predict(args) -> int:
    doc = read_fit_file(args.fit_file)
    spec = doc["model"]
    ds = parse_dataset(args.data, predictors=spec["predictors"], require_response=False)
    X, _ = design_matrix(ds, spec["intercept"])
    grid = _floats(args.grid) if args.grid else None
    probs = predict_rows(doc, X, grid)
    labels = category_labels(spec, spec["grid"] if grid is None else grid)
    out = {"categories": labels, "probabilities": probs.tolist()}
    width = max(10, *(len(c) for c in labels)) + 1
    lines = ["row".rjust(5) + "".join(c.rjust(width) for c in labels)]
    for i, row in enumerate(probs, start=1):
        lines.append(str(i).rjust(5) + "".join(f"{p:.6f}".rjust(width) for p in row))
    _emit(out, args, "\n".join(lines))
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .sim import SimConfig, run_sweep, write_reports

    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"no such file: {args.config}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"config is not valid JSON: {exc}") from None
    sizes = raw.pop("interval_sizes", None) or [raw.get("interval_size", 1.0)]
    out_dir = args.out_dir or raw.pop("out_dir", None)
    try:
        config = SimConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad simulation config: {exc}") from None
    reports = run_sweep(config, sizes)
    out = {"reports": [r.to_dict() for r in reports]}
    if out_dir:
        paths = write_reports(reports, out_dir)
        out["files"] = {k: str(v) for k, v in paths.items()}
    lines = [f"{'size':>6} {'method':>12} {'SSE':>12} {'(MC s.e.)':>10} {'misclass':>9} {'(MC s.e.)':>10}"]
    for r in reports:
        for m in r.methods:
            se = r.mc_standard_errors[m]
            lines.append(f"{r.config['interval_size']:6g} {m:>12} {r.sse_nonzero[m]:12.5g} "
                         f"{se['sse']:10.3g} {r.mean_misclass[m]:9.4f} {se['misclass']:10.3g}")
    _emit(out, args, "\n".join(lines))
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "cv": cmd_cv, "predict": cmd_predict, "simulate": cmd_simulate}


def _fail(kind, message, code):
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except DataError as exc:
        return _fail("data", str(exc), EXIT_DATA)
    except (FinregError, np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        return _fail("numerical", str(exc), EXIT_NUMERICAL)
    except ValueError as exc:
        return _fail("data", str(exc), EXIT_DATA)
    except OSError as exc:
        return _fail("data", str(exc), EXIT_DATA)


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
