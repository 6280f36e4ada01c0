"""Trace-regression data container, least-squares fit and adaptive weights."""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from tracereg.linalg import pseudo_inverse, devectorize


@dataclass(frozen=True, eq=False)
class TraceDataset:
    """``n`` samples of a ``p1 x p2`` predictor matrix and a scalar response.

    Parameters
    ----------
    predictors : ndarray, shape (n, p1, p2)
    responses : ndarray, shape (n,)
    """

    predictors: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        X = np.array(self.predictors, dtype=float)
        y = np.array(self.responses, dtype=float).reshape(-1)
        if X.ndim != 3:
            raise ValueError("predictors must have shape (n, p1, p2)")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} predictor matrices but {y.shape[0]} responses")
        if X.shape[0] < 1:
            raise ValueError("dataset needs at least one sample")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "predictors", X)
        object.__setattr__(self, "responses", y)

    @classmethod
    def from_design(cls, design, responses, p1, p2):
        """Build from a design whose rows are column-stacked predictors."""
        design = np.asarray(design, dtype=float)
        n = design.shape[0]
        if design.shape[1] != p1 * p2:
            raise ValueError(f"design has {design.shape[1]} columns, expected {p1 * p2}")
        X = design.reshape(n, p2, p1).transpose(0, 2, 1)
        return cls(X, responses)

    @property
    def n(self):
        return self.predictors.shape[0]

    @property
    def p1(self):
        return self.predictors.shape[1]

    @property
    def p2(self):
        return self.predictors.shape[2]

    @cached_property
    def design(self):
        # row i is vec(X_i)^T
        D = self.predictors.transpose(0, 2, 1).reshape(self.n, self.p1 * self.p2)
        D = np.ascontiguousarray(D)
        D.setflags(write=False)
        return D

    @cached_property
    def gram(self):
        """(1/n) sum_i vec(X_i) vec(X_i)^T."""
        G = self.design.T @ self.design / self.n
        G = 0.5 * (G + G.T)
        G.setflags(write=False)
        return G

    def subset(self, index):
        index = np.asarray(index)
        return TraceDataset(self.predictors[index], self.responses[index])

    def with_responses(self, responses):
        return TraceDataset(self.predictors, responses)

    def fitted(self, b):
        """Fitted values ``<X_i, B>``."""
        return self.design @ np.asarray(b, dtype=float).reshape(-1, order="F")


def fit_least_squares(data, rel_tol=1e-12):
    """Minimum-Frobenius-norm least-squares coefficient matrix.

    Solves the normal equations through the pseudo-inverse of the design
    Gram matrix, so rank-deficient designs give the min-norm solution.
    """
    D = data.design
    rhs = D.T @ data.responses / data.n
    b = pseudo_inverse(data.gram, rel_tol) @ rhs
    return devectorize(b, data.p1, data.p2)


@dataclass(frozen=True, eq=False)
class WeightPair:
    w1: np.ndarray
    w2: np.ndarray
    w1_inv: np.ndarray
    w2_inv: np.ndarray
    gamma: float
    padded_spectrum_1: np.ndarray
    padded_spectrum_2: np.ndarray

    @classmethod
    def identity(cls, p1, p2):
        return cls(np.eye(p1), np.eye(p2), np.eye(p1), np.eye(p2), 1.0, np.ones(p1), np.ones(p2))

    @property
    def shape(self):
        return self.w1.shape[0], self.w2.shape[0]


def _complete_basis(Q, dim):
    """Extend orthonormal columns ``Q`` to an orthonormal basis of R^dim.

    Deterministic Gram-Schmidt against the standard basis vectors in order.
    """
    cols = [Q[:, j] for j in range(Q.shape[1])]
    for e in np.eye(dim):
        if len(cols) == dim:
            break
        v = e.copy()
        for _ in range(2):  # re-orthogonalize once for stability
            for q in cols:
                v -= (q @ v) * q
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            cols.append(v / norm)
    return np.column_stack(cols)


def build_weights(b_ls, n, gamma=1.0):
    """Adaptive weights from the SVD of the least-squares fit.

    The spectrum of ``b_ls`` is floored at ``n**-0.5`` and padded with that
    value up to ``p1`` (for W1) and ``p2`` (for W2). Then
    ``W1 = U diag(s1)^-gamma U^T`` and ``W2 = V diag(s2)^-gamma V^T``.
    """
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    b_ls = np.asarray(b_ls, dtype=float)
    p1, p2 = b_ls.shape
    pad = float(n) ** -0.5
    U, s, Vt = np.linalg.svd(b_ls, full_matrices=False)
    s = np.maximum(s, pad)
    U = _complete_basis(U, p1)
    V = _complete_basis(Vt.T, p2)
    s1 = np.concatenate([s, np.full(p1 - s.size, pad)])
    s2 = np.concatenate([s, np.full(p2 - s.size, pad)])
    if np.any(s1 <= 0) or np.any(s2 <= 0):
        raise ValueError("padded spectrum must be strictly positive")

    def sym(Q, d):
        W = (Q * d) @ Q.T
        return 0.5 * (W + W.T)

    return WeightPair(
        w1=sym(U, s1 ** -gamma),
        w2=sym(V, s2 ** -gamma),
        w1_inv=sym(U, s1 ** gamma),
        w2_inv=sym(V, s2 ** gamma),
        gamma=float(gamma),
        padded_spectrum_1=s1,
        padded_spectrum_2=s2,
    )


def transform_design(data, w):
    """Predictors ``W1^-1 X_i W2^-1`` so that ``<X~_i, W1 B W2> = <X_i, B>``."""
    if w.shape != (data.p1, data.p2):
        raise ValueError(f"weights of shape {w.shape} do not match data ({data.p1}, {data.p2})")
    X = np.einsum("ab,nbc,cd->nad", w.w1_inv, data.predictors, w.w2_inv, optimize=True)
    return TraceDataset(X, data.responses)
