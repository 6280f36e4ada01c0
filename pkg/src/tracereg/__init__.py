"""Adaptive nuclear-norm regularized trace regression.

Fits ``min_B (1/2n) sum_i (y_i - <X_i, B>)^2 + lam * ||W1 B W2||_*`` with
data-driven weights, estimates its degrees of freedom and picks ``lam`` by
BIC, AIC, AICc or K-fold cross-validation.
"""

__version__ = "0.1.0"

from tracereg.weights import TraceDataset, WeightPair, fit_least_squares, build_weights
from tracereg.solver import SolverOptions, FitResult, solve, solve_path, lambda_max
from tracereg.dof import DofEstimate, degrees_of_freedom
from tracereg.criteria import LambdaGrid, SelectionReport, SelectOptions, select, log_grid, geometric_grid

__all__ = [
    "TraceDataset", "WeightPair", "fit_least_squares", "build_weights",
    "SolverOptions", "FitResult", "solve", "solve_path", "lambda_max",
    "DofEstimate", "degrees_of_freedom",
    "LambdaGrid", "SelectionReport", "SelectOptions", "select", "log_grid", "geometric_grid",
]
