import numpy as np
import pytest

from tracereg.weights import TraceDataset, build_weights, fit_least_squares


def make_instance(seed, p1=3, p2=3, n=60, rank=1, sigma=0.1):
    """Gaussian predictors, rank-``rank`` truth, Gaussian noise."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p1, p2))
    B = rng.standard_normal((p1, rank)) @ rng.standard_normal((rank, p2))
    y = np.einsum("nij,ij->n", X, B) + sigma * rng.standard_normal(n)
    return TraceDataset(X, y), B


def adaptive_weights(data, gamma=1.0):
    return build_weights(fit_least_squares(data), data.n, gamma)


def orthonormal_design(p1, p2, b, seed=0):
    """``n = p1*p2`` basis-matrix predictors scaled so that gram = I."""
    n = p1 * p2
    D = np.sqrt(n) * np.eye(n)
    y = D @ np.asarray(b).reshape(-1, order="F")
    return TraceDataset.from_design(D, y, p1, p2)


@pytest.fixture
def instance():
    return make_instance(0)


ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line, flush=True)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
