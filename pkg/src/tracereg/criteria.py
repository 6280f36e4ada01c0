"""Choosing the regularization level: information criteria and K-fold CV."""

import enum
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from tracereg import solver as _solver
from tracereg.dof import ACCEPT_RESIDUAL, UnconvergedFitError, degrees_of_freedom, stein_divergence
from tracereg.solver import QuadraticModel, SolverOptions, lambda_max
from tracereg.weights import build_weights, fit_least_squares

log = logging.getLogger(__name__)

GEOMETRIC_RATIO = 0.618


class GridScheme(str, enum.Enum):
    LOG_INTERPOLATED = "log_interpolated"
    GEOMETRIC = "geometric"


class Method(str, enum.Enum):
    BIC = "bic"
    AIC = "aic"
    AICC = "aicc"
    CV = "cv"


INFORMATION_CRITERIA = (Method.BIC, Method.AIC, Method.AICC)


@dataclass(frozen=True, eq=False)
class LambdaGrid:
    values: np.ndarray
    scheme: GridScheme
    lambda_max: float
    count: int
    lambda_min: float = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size == 0:
            raise ValueError("grid must be nonempty")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite and nonnegative")
        if np.any(np.diff(v) >= 0):
            raise ValueError("grid values must be strictly decreasing")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "scheme", GridScheme(self.scheme))

    def __len__(self):
        return self.values.size

    @classmethod
    def from_values(cls, values):
        """Custom grid; values are sorted into decreasing order."""
        v = np.unique(np.asarray(values, dtype=float))[::-1]
        return cls(v, GridScheme.LOG_INTERPOLATED, float(v[0]), v.size, float(v[-1]))

    def to_dict(self):
        return {
            "scheme": self.scheme.value,
            "lambda_max": self.lambda_max,
            "lambda_min": self.lambda_min,
            "count": self.count,
            "values": [float(x) for x in self.values],
        }


def log_grid(lambda_max, lambda_min, count):
    """``count`` log-spaced values starting at ``lambda_max``.

    ``values[k-1] = exp(log lmax + (k - 1) (log lmin - log lmax) / count)``, so
    the last value stays one step above ``lambda_min``.
    """
    if not (lambda_max > 0 and lambda_min > 0):
        raise ValueError("grid bounds must be positive")
    if not lambda_min < lambda_max:
        raise ValueError("lambda_min must be smaller than lambda_max")
    if count < 1:
        raise ValueError("count must be positive")
    step = (math.log(lambda_min) - math.log(lambda_max)) / count
    values = np.exp(math.log(lambda_max) + np.arange(count) * step)
    return LambdaGrid(values, GridScheme.LOG_INTERPOLATED, float(lambda_max), int(count), float(lambda_min))


def geometric_grid(lambda_max, count):
    """``values[k-1] = 0.618**k * lambda_max`` for ``k = 1..count``."""
    if not lambda_max > 0:
        raise ValueError("lambda_max must be positive")
    if count < 1:
        raise ValueError("count must be positive")
    values = GEOMETRIC_RATIO ** np.arange(1, count + 1) * lambda_max
    return LambdaGrid(values, GridScheme.GEOMETRIC, float(lambda_max), int(count))


def _log_rss(rss, n):
    if rss < 0:
        raise ValueError("rss must be nonnegative")
    if n < 1:
        raise ValueError("n must be positive")
    if rss == 0:
        return -math.inf
    return math.log(rss / n)


def bic(rss, df, n):
    """``log(rss/n) + df log(n) / n``; ``-inf`` when ``rss == 0``."""
    return _log_rss(rss, n) + df * math.log(n) / n


def aic(rss, df, n):
    return _log_rss(rss, n) + 2.0 * df / n


def aicc(rss, df, n):
    """AIC plus ``2 df (df+1) / (n - df - 1)``; ``+inf`` once ``n - df - 1 <= 0``."""
    denom = n - df - 1
    if denom <= 0:
        return math.inf
    return aic(rss, df, n) + 2.0 * df * (df + 1) / denom


CRITERION_FUNCTIONS = {Method.BIC: bic, Method.AIC: aic, Method.AICC: aicc}


@dataclass(frozen=True)
class SelectOptions:
    """Knobs shared by all selectors.

    ``accept_residual`` is the largest optimality residual at which a fit
    flagged as unconverged still enters the criterion; worse fits are
    annotated and skipped. ``df_method`` is ``"closed_form"`` or
    ``"divergence"`` (implicit differentiation of the solver fixed point).
    """

    gamma: float = 1.0
    solver: SolverOptions = field(default_factory=SolverOptions)
    k_folds: int = 5
    seed: int = 0
    accept_residual: float = ACCEPT_RESIDUAL
    workers: int = 1
    df_method: str = "closed_form"

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.k_folds < 2:
            raise ValueError("k_folds must be at least 2")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        if self.df_method not in ("closed_form", "divergence"):
            raise ValueError(f"unknown df_method {self.df_method!r}")

    def to_dict(self):
        s = self.solver
        return {
            "gamma": self.gamma,
            "k_folds": self.k_folds,
            "seed": self.seed,
            "accept_residual": self.accept_residual,
            "workers": self.workers,
            "df_method": self.df_method,
            "solver": {
                "max_iterations": s.max_iterations,
                "kkt_tolerance": s.kkt_tolerance,
                "svd_rel_tol": s.svd_rel_tol,
                "check_every": s.check_every,
                "newton_polish": s.newton_polish,
                "stall_iterations": s.stall_iterations,
            },
        }


@dataclass
class LambdaRecord:
    lam: float
    criterion_value: float
    df: float
    rank: int
    rss: float
    converged: bool = True
    optimality_residual: float = 0.0
    degenerate: bool = False
    failure: str = None

    def to_dict(self):
        return {
            "lambda": self.lam,
            "criterion_value": _json_float(self.criterion_value),
            "df": _json_float(self.df),
            "rank": self.rank,
            "rss": self.rss,
            "converged": self.converged,
            "optimality_residual": self.optimality_residual,
            "degenerate": self.degenerate,
            "failure": self.failure,
        }


def _json_float(x):
    # JSON has no infinities; keep them readable and schema-checkable
    if x is None:
        return None
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(x)


@dataclass
class SelectionReport:
    method: Method
    per_lambda: list
    chosen_lambda: float
    chosen_rank: int
    mse: float
    mse_mean: float
    wall_time_seconds: float
    grid: LambdaGrid
    options: SelectOptions
    solver_calls: int
    fold_count: int = None
    seed: int = None
    b_hat: np.ndarray = None
    fold_scores: np.ndarray = None  # (folds, grid) validation MSE, cv only

    @property
    def failures(self):
        return [r for r in self.per_lambda if r.failure]

    @property
    def ok(self):
        return not self.failures and math.isfinite(self.chosen_lambda)

    def to_dict(self, include_timing=True):
        out = {
            "method": self.method.value,
            "per_lambda": [r.to_dict() for r in self.per_lambda],
            "chosen_lambda": self.chosen_lambda,
            "chosen_rank": self.chosen_rank,
            "mse": self.mse,
            "mse_mean": self.mse_mean,
            "fold_count": self.fold_count,
            "seed": self.seed,
            "solver_calls": self.solver_calls,
            "failures": len(self.failures),
            "grid": self.grid.to_dict(),
            "options": self.options.to_dict(),
        }
        if self.fold_scores is not None:
            out["fold_scores"] = [[float(x) for x in row] for row in self.fold_scores]
        if include_timing:
            out["wall_time_seconds"] = self.wall_time_seconds
        return out


def argmin_largest_lambda(lams, values, excluded=None):
    """Index of the smallest value; ties go to the largest lambda.

    Entries flagged in ``excluded`` are skipped unless every entry is. NaN
    values never win. Returns ``None`` if nothing is comparable.
    """
    lams = np.asarray(lams, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = ~np.isnan(values)
    if excluded is not None:
        keep = mask & ~np.asarray(excluded, dtype=bool)
        if keep.any():
            mask = keep
    if not mask.any():
        return None
    best = np.min(values[mask])
    tied = np.flatnonzero(mask & (values == best))
    return int(tied[np.argmax(lams[tied])])


def _path(data, grid, options):
    w = build_weights(fit_least_squares(data), data.n, options.gamma)
    fits = _solver.solve_path(data, w, grid.values, options.solver)
    return w, fits


def _fit_failure(fit, options):
    if fit.converged:
        return None
    if fit.optimality_residual <= options.accept_residual:
        return None
    return f"solver did not converge (optimality residual {fit.optimality_residual:.3g})"


def _df_for_fit(data, w, fit, options, model):
    if options.df_method == "divergence":
        return stein_divergence(data, w, fit, fit.lam, model=model)
    est = degrees_of_freedom(data, w, fit, fit.lam, accept_residual=options.accept_residual)
    return est.df


def information_criteria(data, grid, options=None, methods=INFORMATION_CRITERIA):
    """BIC / AIC / AICc reports that share one weighted path and its df.

    Returns a dict keyed by :class:`Method`. All reports carry the same
    per-lambda fits, df and wall time; only the criterion column differs.
    """
    options = options or SelectOptions()
    methods = [Method(m) for m in methods]
    if any(m is Method.CV for m in methods):
        raise ValueError("cv is not an information criterion")
    start = time.perf_counter()
    w, fits = _path(data, grid, options)
    model = QuadraticModel(data, w) if options.df_method == "divergence" else None
    n = data.n
    base = []
    for fit in fits:
        failure = _fit_failure(fit, options)
        df = math.nan
        if failure is None:
            try:
                df = _df_for_fit(data, w, fit, options, model)
            except (UnconvergedFitError, ValueError) as exc:
                failure = f"df failed: {exc}"
        if not fit.converged and failure is None:
            log.info("lam=%.4g accepted at residual %.3g", fit.lam, fit.optimality_residual)
        base.append((fit, df, failure))
    elapsed = time.perf_counter() - start

    reports = {}
    for method in methods:
        crit = CRITERION_FUNCTIONS[method]
        records = []
        for fit, df, failure in base:
            value = math.nan if failure else crit(fit.rss, df, n)
            records.append(
                LambdaRecord(
                    lam=float(fit.lam),
                    criterion_value=value,
                    df=df,
                    rank=fit.rank,
                    rss=float(fit.rss),
                    converged=fit.converged,
                    optimality_residual=float(fit.optimality_residual),
                    degenerate=fit.rss == 0,
                    failure=failure,
                )
            )
        reports[method] = _finish_report(
            method, records, fits, data, grid, options, elapsed, solver_calls=len(fits)
        )
    return reports


def _finish_report(method, records, fits, data, grid, options, elapsed, solver_calls,
                   fold_count=None, seed=None):
    lams = [r.lam for r in records]
    values = [r.criterion_value for r in records]
    degenerate = [r.degenerate for r in records]
    idx = argmin_largest_lambda(lams, values, degenerate)
    if idx is None:
        chosen_lambda, chosen_rank, mse, b_hat = math.nan, -1, math.nan, None
    else:
        fit = fits[idx]
        chosen_lambda, chosen_rank = float(fit.lam), fit.rank
        mse = float(fit.rss)
        b_hat = fit.b_hat
    return SelectionReport(
        method=method,
        per_lambda=records,
        chosen_lambda=chosen_lambda,
        chosen_rank=chosen_rank,
        mse=mse,
        mse_mean=mse / data.n,
        wall_time_seconds=elapsed,
        grid=grid,
        options=options,
        solver_calls=solver_calls,
        fold_count=fold_count,
        seed=seed,
        b_hat=b_hat,
    )


def fold_assignment(n, k_folds, seed):
    """Seeded split of ``range(n)`` into ``k_folds`` validation index sets."""
    if not 2 <= k_folds <= n:
        raise ValueError(f"k_folds must lie in [2, n={n}], got {k_folds}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k_folds)]


def _fold_errors(data, grid, options, valid):
    train_mask = np.ones(data.n, dtype=bool)
    train_mask[valid] = False
    if not train_mask.any():
        raise ValueError("a fold leaves no training samples")
    train = data.subset(np.flatnonzero(train_mask))
    test = data.subset(valid)
    _, fits = _path(train, grid, options)
    errs = np.array([np.mean((test.responses - test.fitted(f.b_hat)) ** 2) for f in fits])
    bad = [_fit_failure(f, options) for f in fits]
    return errs, bad


def cross_validate(data, grid, options=None, folds=None):
    """K-fold CV over ``grid`` with per-fold weights, then a full-data refit.

    The per-lambda score is the mean over folds of the validation mean
    squared error. ``folds`` overrides the seeded assignment with explicit
    validation index sets. The refit runs the full warm-started path on all
    data, so a run costs ``(k + 1) * len(grid)`` solves.
    """
    options = options or SelectOptions()
    start = time.perf_counter()
    if folds is None:
        folds = fold_assignment(data.n, options.k_folds, options.seed)
        seed = options.seed
    else:
        folds = [np.asarray(f, dtype=int) for f in folds]
        seed = None

    if options.workers > 1:
        with ThreadPoolExecutor(options.workers) as pool:
            results = list(pool.map(lambda v: _fold_errors(data, grid, options, v), folds))
    else:
        results = [_fold_errors(data, grid, options, v) for v in folds]

    # fixed-order reduction
    scores = np.zeros(len(grid))
    for errs, _ in results:
        scores += errs
    scores /= len(folds)
    fold_failures = [
        "; ".join(f"fold {i}: {bad[j]}" for i, (_, bad) in enumerate(results) if bad[j])
        for j in range(len(grid))
    ]

    _, fits = _path(data, grid, options)
    records = []
    for j, fit in enumerate(fits):
        failure = fold_failures[j] or _fit_failure(fit, options)
        records.append(
            LambdaRecord(
                lam=float(fit.lam),
                criterion_value=math.nan if failure else float(scores[j]),
                df=math.nan,
                rank=fit.rank,
                rss=float(fit.rss),
                converged=fit.converged,
                optimality_residual=float(fit.optimality_residual),
                failure=failure or None,
            )
        )
    elapsed = time.perf_counter() - start
    report = _finish_report(
        Method.CV, records, fits, data, grid, options, elapsed,
        solver_calls=len(grid) * (len(folds) + 1), fold_count=len(folds), seed=seed,
    )
    report.fold_scores = np.array([errs for errs, _ in results])
    return report


def select(data, grid, method=Method.BIC, options=None):
    """Select ``lambda`` from ``grid`` by ``method`` (bic, aic, aicc or cv)."""
    method = Method(method)
    options = options or SelectOptions()
    if method is Method.CV:
        return cross_validate(data, grid, options)
    return information_criteria(data, grid, options, methods=(method,))[method]


def default_grid(data, scheme="geometric", count=20, lambda_min_ratio=1e-4, gamma=1.0):
    """Grid anchored at the ``lambda_max`` of the full-data weighted problem."""
    w = build_weights(fit_least_squares(data), data.n, gamma)
    lmax = lambda_max(data, w)
    if not lmax > 0:
        raise ValueError("lambda_max is zero (all responses zero?); no grid to build")
    scheme = GridScheme(scheme) if scheme not in ("log", "geometric") else (
        GridScheme.LOG_INTERPOLATED if scheme == "log" else GridScheme.GEOMETRIC
    )
    if scheme is GridScheme.GEOMETRIC:
        return geometric_grid(lmax, count)
    return log_grid(lmax, lambda_min_ratio * lmax, count)


def with_solver(options, **changes):
    return replace(options, solver=replace(options.solver, **changes))
