"""``tracereg`` command line: fit, select, df and simulate.

Every command writes ``report.json`` (deterministic: no wall-clock fields,
sorted keys) plus ``table.csv`` into the output directory, which is
``--out``, else ``$TRACEREG_OUT``, else ``./tracereg-out``. Timings go to
``table.csv`` and ``timings.json``.

Settings resolve as built-in defaults, then ``--config FILE`` (JSON, either
flat or a previous ``report.json`` whose ``config`` block is reused), then
explicit flags.

Exit status: 0 success, 1 runtime error, 2 bad input or usage, 3 the run
finished but some fit failed to converge or a grid point failed.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from tracereg import __version__
from tracereg.criteria import SelectOptions, default_grid, select
from tracereg.dof import degrees_of_freedom, stein_divergence
from tracereg.io import DatasetFormatError, ingest
from tracereg.simulate import ALL_METHODS, SimulationConfig, replicate_study
from tracereg.solver import SolverOptions, solve
from tracereg.weights import build_weights, fit_least_squares

log = logging.getLogger("tracereg")

OUT_ENV = "TRACEREG_OUT"
DEFAULT_OUT = "tracereg-out"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INPUT = 2
EXIT_PARTIAL = 3

COMMON_DEFAULTS = {
    "gamma": 1.0,
    "tol": 1e-7,
    "max_iter": 20000,
    "seed": 0,
}
DATA_DEFAULTS = {
    "data": None,
    "standardize": False,
    "standardize_response": False,
}
GRID_DEFAULTS = {
    "grid": "geometric",
    "grid_count": 20,
    "lambda_min_ratio": 1e-4,
}
DEFAULTS = {
    "fit": {**COMMON_DEFAULTS, **DATA_DEFAULTS, "lambda": None},
    "df": {**COMMON_DEFAULTS, **DATA_DEFAULTS, "lambda": None},
    "select": {
        **COMMON_DEFAULTS, **DATA_DEFAULTS, **GRID_DEFAULTS,
        "method": "bic", "folds": 5, "workers": 1, "df_method": "closed_form",
    },
    "simulate": {
        **COMMON_DEFAULTS, **GRID_DEFAULTS,
        "grid_count": 30,
        "p1": 8, "p2": 10, "n": 2000, "rank": 2, "noise_std": 0.1,
        "replicates": 20, "methods": list(ALL_METHODS), "workers": 1,
    },
}


class InputError(ValueError):
    pass


def _add_common(p):
    p.add_argument("--config", help="JSON file with settings (flags override it)")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--gamma", type=float, help="weight exponent in (0, 1]")
    p.add_argument("--tol", type=float, help="solver optimality tolerance")
    p.add_argument("--max-iter", type=int, dest="max_iter", help="solver iteration cap")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_data(p):
    p.add_argument("--data", help="dataset CSV (JSON sidecar alongside) or builtin:toy")
    p.add_argument("--standardize", action="store_true", default=None,
                   help="center and scale design columns")
    p.add_argument("--standardize-response", action="store_true", default=None,
                   dest="standardize_response", help="also standardize the response")


def _add_grid(p):
    p.add_argument("--grid", choices=("log", "geometric"))
    p.add_argument("--grid-count", type=int, dest="grid_count")
    p.add_argument("--lambda-min-ratio", type=float, dest="lambda_min_ratio",
                   help="lambda_min / lambda_max for the log grid")


def build_parser():
    parser = argparse.ArgumentParser(prog="tracereg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"tracereg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit at one lambda")
    _add_common(p)
    _add_data(p)
    p.add_argument("--lambda", type=float, dest="lambda")

    p = sub.add_parser("df", help="degrees of freedom at one lambda")
    _add_common(p)
    _add_data(p)
    p.add_argument("--lambda", type=float, dest="lambda")

    p = sub.add_parser("select", help="choose lambda over a grid")
    _add_common(p)
    _add_data(p)
    _add_grid(p)
    p.add_argument("--method", choices=("bic", "aic", "aicc", "cv"))
    p.add_argument("--folds", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--df-method", choices=("closed_form", "divergence"), dest="df_method",
                   help="closed-form df (default) or exact divergence of the solver map")

    p = sub.add_parser("simulate", help="synthetic selector comparison")
    _add_common(p)
    _add_grid(p)
    p.add_argument("--p1", type=int)
    p.add_argument("--p2", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--noise-std", type=float, dest="noise_std")
    p.add_argument("--replicates", type=int)
    p.add_argument("--methods", nargs="+", choices=ALL_METHODS)
    p.add_argument("--workers", type=int)
    return parser


def effective_config(command, args):
    cfg = dict(DEFAULTS[command])
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        if isinstance(loaded, dict) and "config" in loaded and "command" in loaded:
            loaded = loaded["config"]
        if not isinstance(loaded, dict):
            raise InputError("config file must hold a JSON object")
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise InputError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(loaded)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def output_dir(args):
    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _solver_options(cfg):
    if not cfg["tol"] > 0:
        raise InputError("--tol must be positive")
    if cfg["max_iter"] < 1:
        raise InputError("--max-iter must be positive")
    return SolverOptions(max_iterations=cfg["max_iter"], kkt_tolerance=cfg["tol"])


def _load(cfg):
    if not cfg["data"]:
        raise InputError("--data is required")
    try:
        return ingest(cfg["data"], cfg["standardize"], cfg["standardize_response"])
    except (OSError, DatasetFormatError) as exc:
        raise InputError(str(exc)) from None


def _data_block(cfg, ing):
    d = ing.data
    return {
        "path": str(cfg["data"]),
        "p1": d.p1,
        "p2": d.p2,
        "n": d.n,
        "constant_columns": [int(i) for i in np.flatnonzero(ing.constant_columns)],
    }


def _clean(obj):
    """JSON-safe copy: numpy scalars to python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_clean(payload), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_table(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for r in rows:
            writer.writerow(r)


def _envelope(command, cfg, status, **body):
    return {"command": command, "version": __version__, "config": cfg, "status": status, **body}


def _fit_block(fit):
    return {
        "lambda": fit.lam,
        "rank": fit.rank,
        "rss": fit.rss,
        "objective": fit.objective,
        "optimality_residual": fit.optimality_residual,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "weighted_singular_values": fit.weighted_svd.singular_values,
    }


def _fit_at_lambda(cfg):
    if cfg["lambda"] is None:
        raise InputError("--lambda is required")
    if cfg["lambda"] < 0:
        raise InputError("--lambda must be nonnegative")
    ing = _load(cfg)
    data = ing.data
    w = build_weights(fit_least_squares(data), data.n, cfg["gamma"])
    fit = solve(data, w, cfg["lambda"], _solver_options(cfg))
    return ing, w, fit


def run_fit(cfg, out):
    ing, _, fit = _fit_at_lambda(cfg)
    status = "ok" if fit.converged else "not_converged"
    report = _envelope("fit", cfg, status, data=_data_block(cfg, ing),
                       b_hat=fit.b_hat, **_fit_block(fit))
    write_json(out / "report.json", report)
    write_table(out / "table.csv", ["lambda", "rank", "rss", "objective", "optimality_residual",
                                    "iterations", "converged"], [_fit_block(fit)])
    print(f"lambda={fit.lam:.6g} rank={fit.rank} rss={fit.rss:.6g} "
          f"residual={fit.optimality_residual:.3g} converged={fit.converged}")
    return EXIT_OK if fit.converged else EXIT_PARTIAL


def run_df(cfg, out):
    ing, w, fit = _fit_at_lambda(cfg)
    data = ing.data
    est = degrees_of_freedom(data, w, fit, fit.lam)
    div = stein_divergence(data, w, fit, fit.lam)
    status = "ok" if fit.converged else "not_converged"
    report = _envelope("df", cfg, status, data=_data_block(cfg, ing), fit=_fit_block(fit),
                       divergence_df=div, **est.to_dict())
    write_json(out / "report.json", report)
    row = {"lambda": fit.lam, "rank": fit.rank, "divergence_df": div, **est.to_dict()}
    write_table(out / "table.csv", ["lambda", "rank", "df", "divergence_df", "branch",
                                    "m_r_rank", "gram_rank"], [row])
    print(f"lambda={fit.lam:.6g} rank={fit.rank} df={est.df:.6g} ({est.branch.value}) "
          f"gram_rank={est.gram_rank}")
    return EXIT_OK if fit.converged else EXIT_PARTIAL


SELECT_COLUMNS = ["method", "lambda_star", "mse", "rank", "time_seconds"]


def run_select(cfg, out):
    ing = _load(cfg)
    data = ing.data
    if cfg["grid_count"] < 1:
        raise InputError("--grid-count must be positive")
    if not 0 < cfg["lambda_min_ratio"] < 1:
        raise InputError("--lambda-min-ratio must lie in (0, 1)")
    try:
        opts = SelectOptions(gamma=cfg["gamma"], solver=_solver_options(cfg), k_folds=cfg["folds"],
                             seed=cfg["seed"], workers=cfg["workers"],
                             df_method=cfg["df_method"])
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if cfg["method"] == "cv" and cfg["folds"] > data.n:
        raise InputError(f"--folds {cfg['folds']} exceeds n={data.n}")
    grid = default_grid(data, cfg["grid"], cfg["grid_count"], cfg["lambda_min_ratio"], cfg["gamma"])
    rep = select(data, grid, cfg["method"], opts)
    status = "ok" if rep.ok else "partial_failure"
    body = rep.to_dict(include_timing=False)
    body.pop("options")  # the config block already holds them
    write_json(out / "report.json", _envelope("select", cfg, status, data=_data_block(cfg, ing),
                                              b_hat=rep.b_hat, **body))
    row = {"method": cfg["method"], "lambda_star": rep.chosen_lambda, "mse": rep.mse,
           "rank": rep.chosen_rank, "time_seconds": rep.wall_time_seconds}
    write_table(out / "table.csv", SELECT_COLUMNS, [row])
    write_table(out / "path.csv", ["lambda", "criterion_value", "df", "rank", "rss", "converged",
                                   "optimality_residual", "failure"],
                [r.to_dict() for r in rep.per_lambda])
    write_json(out / "timings.json", {"wall_time_seconds": rep.wall_time_seconds})

    print(f"{'lambda':>12} {'criterion':>12} {'df':>9} {'rank':>4} {'rss':>12}")
    for r in rep.per_lambda:
        mark = "*" if r.lam == rep.chosen_lambda else " "
        crit = "failed" if r.failure else f"{r.criterion_value:.6g}"
        print(f"{r.lam:12.6g} {crit:>12} {r.df:9.4g} {r.rank:4d} {r.rss:12.6g}{mark}")
    print(f"method={cfg['method']} chosen_lambda={rep.chosen_lambda:.6g} "
          f"rank={rep.chosen_rank} mse={rep.mse:.6g} time={rep.wall_time_seconds:.3f}s")
    for r in rep.failures:
        print(f"warning: lambda={r.lam:.6g}: {r.failure}", file=sys.stderr)
    return EXIT_OK if rep.ok else EXIT_PARTIAL


def run_simulate(cfg, out):
    try:
        sim = SimulationConfig(
            p1=cfg["p1"], p2=cfg["p2"], n=cfg["n"], true_rank=cfg["rank"],
            noise_std=cfg["noise_std"], seed=cfg["seed"], replicates=cfg["replicates"],
            grid_scheme=cfg["grid"], grid_count=cfg["grid_count"],
            lambda_min_ratio=cfg["lambda_min_ratio"], gamma=cfg["gamma"],
            methods=tuple(cfg["methods"]), kkt_tolerance=cfg["tol"],
            max_iterations=cfg["max_iter"], workers=cfg["workers"],
        )
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc)) from None
    table = replicate_study(sim)
    failed = sum(r["replicates_failed"] for r in table.rows)
    status = "ok" if failed == 0 else "partial_failure"
    body = table.to_dict(include_timing=False)
    write_json(out / "report.json", _envelope("simulate", cfg, status, rows=body["rows"],
                                              replicates=body["replicates"]))
    table.write_csv(out / "table.csv")
    table.write_json(out / "table.json")
    print(f"{'method':>6} {'lambda*':>10} {'mse':>10} {'rank':>6} {'time(s)':>8} {'recovery':>8}")
    for r in table.rows:
        print(f"{r['method']:>6} {r['lambda_star']:10.4g} {r['mse']:10.4g} {r['rank']:6.2f} "
              f"{r['time_seconds']:8.3f} {r['rank_recovery_rate']:8.2f}")
    return EXIT_OK if failed == 0 else EXIT_PARTIAL


COMMANDS = {"fit": run_fit, "df": run_df, "select": run_select, "simulate": run_simulate}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args.command, args)
        out = output_dir(args)
        return COMMANDS[args.command](cfg, out)
    except InputError as exc:
        print(f"tracereg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"tracereg {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
