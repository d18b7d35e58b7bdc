"""Batch command line front end.

Subcommands ``pca``, ``depth``, ``simulate-fse``, ``are``,
``influence-grid`` and ``diagnose`` read CSV input and write a
``report.json`` (metadata and summaries) next to CSV payloads in
``--output-dir``.  Exit codes: 0 success, 2 validation error, 3
convergence or numerical failure, 4 I/O error.  Failures print one line
``error[Code]: message`` on stderr.
"""

import argparse
import os
import sys
import time

import numpy as np

from . import __version__
from . import _io
from . import numkernel as nk
from .asymptotics import ARE_MC_N, DEFAULT_MC_N, are_eigvec, influence_grid
from .depth import MAD_TO_SD, DepthKind, EllipticalModel, fit_depth
from .diagnostics import (CUTOFF_LEVEL, diagnose, squared_distance_quantiles,
                          unexplained_variance)
from .errors import DegenerateModel, DepthPCAError, InvalidInput, NotPositiveDefinite
from .ranks import rank_transform, spatial_median
from .scatter import EstimatorKind, ScatterFit, fit_scatter
from .simulation import SimPlan, run_fse

IO_EXIT = 4
DEFAULT_ARE_ESTIMATORS = "scm,tyler,dcm-halfspace,dcm-mahalanobis,dcm-projection"
DEFAULT_GRID_ESTIMATORS = "sample-cov,scm,tyler,dcm-halfspace,dcm-mahalanobis,dcm-projection"
_MAD_CHOICES = {"normal": MAD_TO_SD, "raw": 1.0}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidInput(message)


def _csv_list(text, conv=str):
    if isinstance(text, (list, tuple)):
        items = list(text)
    else:
        items = [t for t in str(text).split(",") if t.strip()]
    try:
        return [conv(str(t).strip()) if not isinstance(t, (int, float)) else conv(t) for t in items]
    except ValueError as exc:
        raise InvalidInput(f"bad list entry in {text!r}: {exc}") from None


def _estimators(text, depth=None):
    out = []
    for name in _csv_list(text):
        if name in ("dcm", "wtyler"):
            if depth is None:
                raise InvalidInput(f"estimator {name} needs --depth")
            name = f"{name}-{DepthKind.parse(depth).value}"
        out.append(EstimatorKind.parse(name))
    if not out:
        raise InvalidInput("no estimators given")
    return out


def _family(text, df=None):
    """``normal``, ``t`` with ``df``, or ``t<df>`` such as ``t5``."""
    key = str(text).lower()
    if key in ("normal", "gaussian", "bvn", "mvn"):
        return "normal", None
    if key == "t":
        if df is None:
            raise InvalidInput("family t needs --df")
        return "t", int(df)
    if key.startswith("t") and key[1:].isdigit():
        return "t", int(key[1:])
    raise InvalidInput(f"unknown family {text!r}")


def _model(family, df, sigma):
    fam, nu = _family(family, df)
    sigma = np.asarray(sigma, dtype=float)
    if fam == "normal":
        return EllipticalModel.normal(sigma)
    return EllipticalModel.student_t(nu, sigma)


def _sigma_arg(args, default):
    if args.sigma is None:
        return default
    s = args.sigma
    if isinstance(s, str):
        try:
            s = [[float(v) for v in row.split(",")] for row in s.split(";")]
        except ValueError:
            raise InvalidInput("--sigma must look like '2,0;0,1'") from None
    return np.asarray(s, dtype=float)


# -- parser --------------------------------------------------------------------

def _add_common(p, seed=True):
    p.add_argument("--output-dir", required=False, help="directory for report.json and CSV payloads")
    p.add_argument("--config", help="JSON file whose keys override the flags")
    if seed:
        p.add_argument("--seed", type=int, help="master seed (required for stochastic commands)")


def _add_data(p):
    p.add_argument("--input", help="CSV file with a header row")
    p.add_argument("--exclude-cols", default="", help="comma list of column names or 1-based positions")
    p.add_argument("--mad-scale", action="store_true", help="divide every column by its MAD first")


def build_parser():
    parser = _Parser(prog="depthpca", description="Depth-based robust PCA toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("pca", help="fit a scatter estimator and run PCA diagnostics")
    _add_common(p)
    _add_data(p)
    p.add_argument("--estimator", default="dcm-projection")
    p.add_argument("--depth", default=None)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--q-max", type=int, default=10)
    p.add_argument("--score-scale", default="auto", choices=["auto", "eigen", "mad"])
    p.add_argument("--mad-consistency", default="normal", choices=sorted(_MAD_CHOICES))

    p = sub.add_parser("diagnose", help="score/orthogonal distances and flags for a stored fit")
    _add_common(p, seed=False)
    _add_data(p)
    p.add_argument("--fit", help="fit.json written by pca")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--score-scale", default="auto", choices=["auto", "eigen", "mad"])
    p.add_argument("--mad-consistency", default="normal", choices=sorted(_MAD_CHOICES))
    p.add_argument("--quantiles", default="", help="comma list of OD^2 quantile levels")

    p = sub.add_parser("depth", help="per-row depth, htped and multivariate rank")
    _add_common(p)
    _add_data(p)
    p.add_argument("--depth", default="halfspace")
    p.add_argument("--mad-consistency", default="normal", choices=sorted(_MAD_CHOICES))

    p = sub.add_parser("simulate-fse", help="finite-sample efficiency study")
    _add_common(p)
    p.add_argument("--family", default="normal")
    p.add_argument("--df", type=int, default=None)
    p.add_argument("--p", type=int, default=2, help="dimension; covariance diag(p, ..., 1)")
    p.add_argument("--sigma", default=None, help="explicit covariance, rows ';' separated")
    p.add_argument("--estimator", default=DEFAULT_ARE_ESTIMATORS)
    p.add_argument("--depth", default=None)
    p.add_argument("--sizes", default="20,50,100,300,500")
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("are", help="asymptotic relative efficiency grid (p = 2)")
    _add_common(p)
    p.add_argument("--families", default="normal,t5,t6,t10,t15,t25")
    p.add_argument("--rho", default="0.5", help="comma list of eigenvalue ratios in (0, 1]")
    p.add_argument("--estimator", default=DEFAULT_ARE_ESTIMATORS)
    p.add_argument("--depth", default=None)
    p.add_argument("--mc-n", type=int, default=ARE_MC_N)
    p.add_argument("--if-form", default="plugin", choices=["plugin", "literal"])
    p.add_argument("--mad-consistency", default="normal", choices=sorted(_MAD_CHOICES))

    p = sub.add_parser("influence-grid", help="eigenvector influence norms on a 2-D grid")
    _add_common(p)
    p.add_argument("--family", default="normal")
    p.add_argument("--df", type=int, default=None)
    p.add_argument("--sigma", default=None, help="covariance, default '2,0;0,1'")
    p.add_argument("--estimator", default=DEFAULT_GRID_ESTIMATORS)
    p.add_argument("--depth", default=None)
    p.add_argument("--limit", type=float, default=4.0, help="grid spans [-limit, limit]^2")
    p.add_argument("--resolution", type=int, default=41)
    p.add_argument("--mc-n", type=int, default=DEFAULT_MC_N)
    p.add_argument("--if-form", default="literal", choices=["plugin", "literal"])
    return parser


def _apply_config(args, parser):
    if not getattr(args, "config", None):
        return args
    cfg = _io.read_json(args.config)
    if not isinstance(cfg, dict):
        raise InvalidInput("--config must hold a JSON object")
    known = vars(args)
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest in ("command", "config") or dest not in known:
            raise InvalidInput(f"unknown config key {key!r}")
        setattr(args, dest, value)
    return args


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) in (None, ""):
            raise InvalidInput(f"--{name.replace('_', '-')} is required")


# -- shared pieces ----------------------------------------------------------------

def _load_data(args):
    headers, x = _io.read_table(args.input, _csv_list(args.exclude_cols))
    scales = None
    if args.mad_scale:
        x, scales = _io.mad_scale_columns(headers, x)
    return headers, x, scales


def _report(args, payload, started):
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("config", "output_dir")}
    return {
        "command": args.command,
        "version": __version__,
        "seed": getattr(args, "seed", None),
        "config": config,
        "wall_time_s": time.perf_counter() - started,
        "payload": payload,
    }


def _out(args, name):
    return os.path.join(args.output_dir, name)


def _diag_rows(report):
    k = report.scores.shape[1]
    header = ["row"] + [f"score_{j + 1}" for j in range(k)] + ["sd", "od", "flag"]
    rows = [[i + 1, *report.scores[i], report.sd[i], report.od[i], report.flags[i].value]
            for i in range(report.sd.size)]
    return header, rows


def _diag_summary(report):
    return {
        "sd_cut": report.sd_cut,
        "od_cut": report.od_cut,
        "flag_counts": report.flag_counts(),
        "flagged_rows": [int(i) + 1 for i in report.flagged()],
        "warnings": list(report.warnings),
    }


# -- commands ----------------------------------------------------------------------

def cmd_pca(args):
    _require(args, "input", "output_dir")
    est = _estimators(args.estimator, args.depth)
    if len(est) != 1:
        raise InvalidInput("pca takes exactly one estimator")
    est = est[0]
    if est.uses_depth:
        _require(args, "seed")
    mad_c = _MAD_CHOICES[args.mad_consistency]
    headers, x, scales = _load_data(args)
    p = x.shape[1]
    if not 1 <= args.k <= p:
        raise InvalidInput(f"--k must lie in 1..{p}")
    seed = 0 if args.seed is None else args.seed
    depth_model = fit_depth(est.depth, x, seed=seed, mad_scale=mad_c) if est.uses_depth else None
    fit = fit_scatter(est, x, seed=seed, depth_model=depth_model)
    model, report = diagnose(fit, x, args.k, args.score_scale, CUTOFF_LEVEL, mad_c)

    q_max = min(p, max(1, args.q_max))
    variance = [[q, unexplained_variance(fit, q)] for q in range(1, q_max + 1)]
    _io.write_csv(_out(args, "eigen.csv"), ["component", "eigenvalue"],
                  [[j + 1, v] for j, v in enumerate(fit.eigenvalues)])
    _io.write_csv(_out(args, "loadings.csv"), ["variable"] + [f"pc_{j + 1}" for j in range(p)],
                  [[h, *fit.eigenvectors[i]] for i, h in enumerate(headers)])
    _io.write_csv(_out(args, "variance.csv"), ["q", "unexplained"], variance)
    _io.write_csv(_out(args, "diagnostics.csv"), *_diag_rows(report))
    _io.write_json(_out(args, "fit.json"), {
        "estimator": est.cli_name,
        "columns": headers,
        "excluded": _csv_list(args.exclude_cols),
        "mad_scale": scales,
        "center": fit.center,
        "matrix": fit.matrix,
        "eigenvalues": fit.eigenvalues,
        "eigenvectors": fit.eigenvectors,
        "iterations": fit.iterations,
        "converged": fit.converged,
    })
    return {
        "estimator": est.cli_name,
        "n": x.shape[0], "p": p, "k": args.k,
        "eigenvalues": fit.eigenvalues[:q_max],
        "score_scales": model.eigvals,
        "unexplained_variance": {str(q): v for q, v in variance},
        "diagnostics": _diag_summary(report),
        "files": ["eigen.csv", "loadings.csv", "variance.csv", "diagnostics.csv", "fit.json"],
    }


def _load_fit(path):
    stored = _io.read_json(path)
    try:
        kind = EstimatorKind.parse(stored["estimator"])
        matrix = np.asarray(stored["matrix"], dtype=float)
        decomp = nk.SpectralDecomp(np.asarray(stored["eigenvalues"], dtype=float),
                                   np.asarray(stored["eigenvectors"], dtype=float))
        center = np.asarray(stored["center"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInput(f"{path}: not a fit file ({exc})") from None
    return stored, ScatterFit(kind, matrix, decomp, center,
                              iterations=int(stored.get("iterations", 0)),
                              converged=bool(stored.get("converged", True)))


def cmd_diagnose(args):
    _require(args, "input", "fit", "output_dir")
    stored, fit = _load_fit(args.fit)
    headers, x = _io.read_table(args.input, _csv_list(args.exclude_cols))
    cols = stored.get("columns", headers)
    if headers != cols:
        missing = [c for c in cols if c not in headers]
        if missing:
            raise InvalidInput(f"input lacks fitted columns {missing[:5]}")
        x = x[:, [headers.index(c) for c in cols]]
    if stored.get("mad_scale") is not None:
        x = x / np.asarray(stored["mad_scale"], dtype=float)
    elif args.mad_scale:
        x, _ = _io.mad_scale_columns(cols, x)
    if x.shape[1] != fit.center.size:
        raise InvalidInput("input dimension does not match the fit")
    qs = _csv_list(args.quantiles, float)
    mad_c = _MAD_CHOICES[args.mad_consistency]
    model, report = diagnose(fit, x, args.k, args.score_scale, CUTOFF_LEVEL, mad_c)
    _io.write_csv(_out(args, "diagnostics.csv"), *_diag_rows(report))
    payload = {"estimator": fit.kind.cli_name, "k": args.k, "score_scales": model.eigvals,
               "diagnostics": _diag_summary(report)}
    if qs:
        vals = squared_distance_quantiles(fit, x, args.k, qs)
        _io.write_csv(_out(args, "od2_quantiles.csv"), ["quantile", "od2"], list(zip(qs, vals)))
        payload["od2_quantiles"] = dict(zip(map(repr, qs), vals))
    return payload


def cmd_depth(args):
    _require(args, "input", "output_dir", "seed")
    kind = DepthKind.parse(args.depth)
    headers, x, _ = _load_data(args)
    model = fit_depth(kind, x, seed=args.seed, mad_scale=_MAD_CHOICES[args.mad_consistency])
    d = np.atleast_1d(model.depth(x))
    h = model.htped(x)
    center = spatial_median(x).value
    ranks = rank_transform(model, center, x)
    p = x.shape[1]
    header = headers + ["depth", "htped"] + [f"rank_{j + 1}" for j in range(p)]
    _io.write_csv(_out(args, "depth.csv"), header,
                  [[*x[i], d[i], h[i], *ranks[i]] for i in range(x.shape[0])])
    return {"depth": kind.value, "n": x.shape[0], "p": p, "max_depth": model.max_depth,
            "center": center, "deepest_row": int(np.argmax(d)) + 1, "files": ["depth.csv"]}


def cmd_simulate_fse(args):
    _require(args, "output_dir", "seed")
    ests = _estimators(args.estimator, args.depth)
    sizes = _csv_list(args.sizes, int)
    p = int(args.p)
    if p < 1:
        raise InvalidInput("--p must be positive")
    sigma = _sigma_arg(args, np.diag(np.arange(p, 0, -1, dtype=float)))
    model = _model(args.family, args.df, sigma)
    plan = SimPlan(model, tuple(ests), tuple(sizes), int(args.reps), int(args.seed))
    table = run_fse(plan, workers=int(args.workers), checkpoint_dir=_out(args, "checkpoints"))
    with open(_out(args, "fse.csv"), "w", encoding="utf-8") as fh:
        fh.write(table.to_csv())
    invalid = [[r.estimator, r.n] for r in table.rows if not table.valid(r)]
    return {"family": model.label, "p": model.p, "sigma": model.sigma, "sizes": list(plan.sample_sizes),
            "replications": plan.replications, "estimators": [e.cli_name for e in plan.ests],
            "invalid_cells": invalid, "files": ["fse.csv"]}


def cmd_are(args):
    _require(args, "output_dir", "seed")
    ests = _estimators(args.estimator, args.depth)
    families = _csv_list(args.families)
    rhos = _csv_list(args.rho, float)
    for r in rhos:
        if not 0 < r <= 1:
            raise InvalidInput(f"rho must lie in (0, 1], got {r}")
    for f in families:
        _family(f)
    if int(args.mc_n) < 1000:
        raise InvalidInput("--mc-n must be at least 1000")
    plugin = args.if_form == "plugin"
    mad_c = _MAD_CHOICES[args.mad_consistency]
    rows, cells = [], []
    for fam in families:
        name, df = _family(fam)
        for rho in rhos:
            for est in ests:
                row = {"family": name, "df": df, "rho": rho, "estimator": est.cli_name,
                       "label": est.label, "are": float("nan"), "mc_se": float("nan"), "status": "ok"}
                try:
                    model = _model(fam, None, np.diag([1.0, rho]))
                    res = are_eigvec(model, est, mc_n=args.mc_n, seed=args.seed,
                                     plugin=plugin, mad_scale=mad_c)
                    row["are"], row["mc_se"] = res.value, res.mc_std_error
                except (DegenerateModel, NotPositiveDefinite) as exc:
                    row["status"] = f"{exc.code}: {exc}"
                except InvalidInput as exc:
                    row["status"] = f"{exc.code}: {exc}"
                cells.append(row)
                rows.append([name, "" if df is None else df, rho, est.cli_name, row["are"],
                             row["mc_se"], row["status"]])
    _io.write_csv(_out(args, "are.csv"),
                  ["family", "df", "rho", "estimator", "are", "mc_se", "status"], rows)
    return {"mc_n": args.mc_n, "if_form": args.if_form, "cells": cells, "files": ["are.csv"]}


def _boundary_summary(norms):
    """Largest norm on the outer ring versus the inner half of the grid."""
    res = norms.shape[0]
    ring = np.concatenate([norms[0], norms[-1], norms[:, 0], norms[:, -1]])
    lo, hi = res // 4, res - res // 4
    inner = norms[lo:hi, lo:hi]
    ratio = float(ring.max() / inner.max()) if inner.max() > 0 else float("inf")
    return {"boundary_max": float(ring.max()), "inner_max": float(inner.max()),
            "boundary_growth": ratio, "grows_at_boundary": bool(ratio > 1.5)}


def cmd_influence_grid(args):
    _require(args, "output_dir", "seed")
    ests = _estimators(args.estimator, args.depth)
    sigma = _sigma_arg(args, np.diag([2.0, 1.0]))
    model = _model(args.family, args.df, sigma)
    if model.p != 2:
        raise InvalidInput("influence grids need p = 2")
    if not args.limit > 0:
        raise InvalidInput("--limit must be positive")
    lim = (-float(args.limit), float(args.limit))
    for e in ests:
        if e.name == "wtyler":
            raise InvalidInput("influence functions of the depth-weighted Tyler matrix are not available")
    rows, meta = [], {}
    for est in ests:
        xs, ys, norms = influence_grid(est, model, xlim=lim, ylim=lim, resolution=args.resolution,
                                       mc_n=args.mc_n, seed=args.seed,
                                       plugin=args.if_form == "plugin")
        for j, y in enumerate(ys):
            for i, x in enumerate(xs):
                rows.append([est.cli_name, x, y, norms[j, i]])
        mid = args.resolution // 2
        meta[est.cli_name] = {"label": est.label, "max_norm": float(norms.max()),
                              "at_center": float(norms[mid, mid]) if args.resolution % 2 else None,
                              **_boundary_summary(norms)}
    _io.write_csv(_out(args, "influence_grid.csv"), ["estimator", "x", "y", "if_norm"], rows)
    return {"family": model.label, "sigma": model.sigma, "if_form": args.if_form,
            "estimators": meta, "files": ["influence_grid.csv"]}


COMMANDS = {
    "pca": cmd_pca,
    "diagnose": cmd_diagnose,
    "depth": cmd_depth,
    "simulate-fse": cmd_simulate_fse,
    "are": cmd_are,
    "influence-grid": cmd_influence_grid,
}


def run(argv=None):
    """Parse, run and write the report; returns the payload (raises on failure)."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise InvalidInput("a subcommand is required: " + ", ".join(COMMANDS))
    args = _apply_config(args, parser)
    started = time.perf_counter()
    if getattr(args, "output_dir", None):
        os.makedirs(args.output_dir, exist_ok=True)
    payload = COMMANDS[args.command](args)
    _io.write_json(_out(args, "report.json"), _report(args, payload, started))
    return payload


def main(argv=None):
    try:
        run(argv)
    except DepthPCAError as exc:
        print(f"error[{exc.code}]: {_one_line(exc)}", file=sys.stderr)
        return exc.exit_status
    except OSError as exc:
        print(f"error[IOError]: {_one_line(exc)}", file=sys.stderr)
        return IO_EXIT
    return 0


def _one_line(exc):
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
