"""Synthetic low-rank trace-regression studies comparing selectors.

Each replicate draws ``X_i = P_i Q_i^T`` with standard-normal ``P_i, Q_i``,
a rank-``r`` truth ``B* = sum_j u_j v_j^T`` and Gaussian noise, then runs
BIC, AIC, AICc, 5-fold and 10-fold CV on one shared grid.

Randomness: replicate ``k`` uses the ``k``-th child of
``numpy.random.SeedSequence(seed)`` (PCG64), so replicates are independent
and any single one can be regenerated on its own.
"""

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from tracereg.criteria import (
    INFORMATION_CRITERIA, Method, SelectOptions, cross_validate, default_grid,
    information_criteria,
)
from tracereg.linalg import truncated_svd
from tracereg.solver import SolverOptions
from tracereg.weights import TraceDataset

log = logging.getLogger(__name__)

ALL_METHODS = ("bic", "aic", "aicc", "cv5", "cv10")
TABLE_COLUMNS = ("method", "lambda_star", "mse", "rank", "time_seconds", "rank_recovery_rate")


@dataclass(frozen=True)
class SimulationConfig:
    p1: int = 8
    p2: int = 10
    n: int = 2000
    true_rank: int = 2
    noise_std: float = 0.1
    seed: int = 0
    replicates: int = 20
    grid_scheme: str = "geometric"
    grid_count: int = 30
    lambda_min_ratio: float = 1e-4
    gamma: float = 1.0
    methods: tuple = ALL_METHODS
    kkt_tolerance: float = 1e-7
    max_iterations: int = 20000
    workers: int = 1

    def __post_init__(self):
        for name in ("p1", "p2", "n", "true_rank", "replicates", "grid_count", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.true_rank > min(self.p1, self.p2):
            raise ValueError("true_rank exceeds min(p1, p2)")
        if not self.noise_std > 0:
            raise ValueError("noise_std must be positive")
        if self.grid_scheme not in ("geometric", "log"):
            raise ValueError(f"unknown grid scheme {self.grid_scheme!r}")
        object.__setattr__(self, "methods", tuple(self.methods))
        unknown = set(self.methods) - set(ALL_METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["methods"] = list(self.methods)
        return d

    def select_options(self, k_folds=5):
        solver = SolverOptions(max_iterations=self.max_iterations, kkt_tolerance=self.kkt_tolerance)
        return SelectOptions(gamma=self.gamma, solver=solver, k_folds=k_folds, seed=self.seed)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    b_star: np.ndarray
    r_star: int


def replicate_rng(seed, replicate):
    """Generator for one replicate: child ``replicate`` of ``SeedSequence(seed)``."""
    child = np.random.SeedSequence(seed).spawn(replicate + 1)[replicate]
    return np.random.Generator(np.random.PCG64(child))


def generate(cfg, replicate=0, noise_std=None):
    """One synthetic dataset and its truth.

    ``noise_std`` overrides ``cfg.noise_std`` (``0`` gives noiseless data).
    """
    rng = replicate_rng(cfg.seed, replicate)
    p1, p2, n = cfg.p1, cfg.p2, cfg.n
    P = rng.standard_normal((n, p1))
    Q = rng.standard_normal((n, p2))
    u = rng.standard_normal((p1, cfg.true_rank))
    v = rng.standard_normal((p2, cfg.true_rank))
    eps = rng.standard_normal(n)
    b_star = u @ v.T
    r = truncated_svd(b_star, 1e-10).rank
    if r != cfg.true_rank:
        raise RuntimeError(f"generated truth has rank {r}, expected {cfg.true_rank}")
    X = P[:, :, None] * Q[:, None, :]
    sigma = cfg.noise_std if noise_std is None else noise_std
    # <P q^T, B> = P^T B q
    y = np.einsum("ni,ij,nj->n", P, b_star, Q) + sigma * eps
    return TraceDataset(X, y), GroundTruth(b_star, r)


@dataclass(frozen=True)
class Evaluation:
    rank_correct: bool
    rank_error: int
    mse: float
    time: float
    lambda_star: float = math.nan


def evaluate(report, truth):
    return Evaluation(
        rank_correct=report.chosen_rank == truth.r_star,
        rank_error=int(report.chosen_rank - truth.r_star),
        mse=float(report.mse),
        time=float(report.wall_time_seconds),
        lambda_star=float(report.chosen_lambda),
    )


def run_replicate(cfg, replicate):
    """All configured selectors on one replicate.

    Returns ``{method: Evaluation or error string}``.
    """
    data, truth = generate(cfg, replicate)
    grid = default_grid(data, cfg.grid_scheme, cfg.grid_count, cfg.lambda_min_ratio, cfg.gamma)
    out = {}
    ic = [m for m in cfg.methods if m in ("bic", "aic", "aicc")]
    if ic:
        try:
            reports = information_criteria(data, grid, cfg.select_options(), methods=ic)
            for m in ic:
                out[m] = evaluate(reports[Method(m)], truth)
        except Exception as exc:  # recorded, study continues
            log.warning("replicate %d information criteria failed: %s", replicate, exc)
            for m in ic:
                out[m] = f"{type(exc).__name__}: {exc}"
    for m in cfg.methods:
        if not m.startswith("cv"):
            continue
        k = int(m[2:])
        try:
            rep = cross_validate(data, grid, cfg.select_options(k_folds=k))
            out[m] = evaluate(rep, truth)
        except Exception as exc:
            log.warning("replicate %d %s failed: %s", replicate, m, exc)
            out[m] = f"{type(exc).__name__}: {exc}"
    return out


@dataclass
class StudyTable:
    config: SimulationConfig
    rows: list
    replicates: list = field(default_factory=list)

    def row(self, method):
        for r in self.rows:
            if r["method"] == method:
                return r
        raise KeyError(method)

    def to_dict(self, include_timing=True):
        def strip(r):
            if include_timing:
                return r
            return {k: v for k, v in r.items() if k != "time_seconds"}

        reps = []
        for entry in self.replicates:
            reps.append({
                m: (asdict(e) if isinstance(e, Evaluation) else {"error": e})
                for m, e in entry.items()
            })
            if not include_timing:
                for rec in reps[-1].values():
                    rec.pop("time", None)
        return {
            "config": self.config.to_dict(),
            "rows": [strip(r) for r in self.rows],
            "replicates": reps,
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS, extrasaction="ignore")
            writer.writeheader()
            for r in self.rows:
                writer.writerow(r)

    def write_json(self, path, include_timing=True):
        with open(path, "w") as fh:
            json.dump(self.to_dict(include_timing), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _aggregate(cfg, results):
    rows = []
    for m in cfg.methods:
        evals = [r[m] for r in results if isinstance(r.get(m), Evaluation)]
        failed = sum(1 for r in results if not isinstance(r.get(m), Evaluation))
        if evals:
            row = {
                "method": m,
                "lambda_star": float(np.mean([e.lambda_star for e in evals])),
                "mse": float(np.mean([e.mse for e in evals])),
                "rank": float(np.mean([e.rank_error + cfg.true_rank for e in evals])),
                "time_seconds": float(np.mean([e.time for e in evals])),
                "rank_recovery_rate": sum(e.rank_correct for e in evals) / len(results),
            }
        else:
            row = {k: math.nan for k in TABLE_COLUMNS}
            row.update(method=m, rank_recovery_rate=0.0)
        row["replicates_failed"] = failed
        rows.append(row)
    return rows


def replicate_study(cfg):
    """Run every replicate and aggregate one row per method.

    Rows hold the replicate means of ``lambda_star``, ``mse`` (sum of squared
    residuals), chosen ``rank`` and ``time_seconds``, plus the fraction of
    replicates whose chosen rank equals the truth. Failed replicates count
    as misses.
    """
    idx = range(cfg.replicates)
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(lambda k: run_replicate(cfg, k), idx))
    else:
        results = [run_replicate(cfg, k) for k in idx]
    return StudyTable(cfg, _aggregate(cfg, results), results)


def timed_study(cfg):
    start = time.perf_counter()
    table = replicate_study(cfg)
    return table, time.perf_counter() - start


__all__ = [
    "SimulationConfig", "GroundTruth", "Evaluation", "StudyTable", "generate", "evaluate",
    "run_replicate", "replicate_study", "replicate_rng", "INFORMATION_CRITERIA",
]
