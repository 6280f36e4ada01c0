"""Degrees of freedom of the adaptive nuclear-norm fit.

The closed-form estimator is

    df = (1/n) sum_k vec(X_k)^T M_r^+ vec(X_k),
    M_r = gram + lam * M1 + M2,

with ``M1`` the Kronecker-structured curvature of ``U_r V_r^T`` and ``M2``
the five-term correction built from the projectors off the weighted
singular subspaces, the residual matrix ``E`` and ``(W1 B W2)^+``.

:func:`stein_divergence` is an independent route: it differentiates the
proximal fixed point of the solver implicitly and returns the exact
divergence ``sum_k d yhat_k / d y_k`` of the fitted values.
"""

import enum
import logging
from dataclasses import dataclass

import numpy as np

from tracereg.linalg import apply_commutation, kronecker, pseudo_inverse, truncated_svd
from tracereg.solver import QuadraticModel, svt_jacobian

log = logging.getLogger(__name__)

M_R_REL_TOL = 1e-10
GRAM_REL_TOL = 1e-10
MAX_VEC_DIM = 2500
# fits whose optimality residual exceeds this are refused
ACCEPT_RESIDUAL = 1e-5


class Branch(str, enum.Enum):
    FULL_RANK_INVERSE = "full_rank_inverse"
    PSEUDO_INVERSE = "pseudo_inverse"
    ENDPOINT = "endpoint"


class UnconvergedFitError(ValueError):
    """The fit is too far from stationarity for its residuals to be trusted."""


@dataclass(frozen=True)
class DofEstimate:
    df: float
    m_r_rank: int
    m_r_symmetric: bool
    branch: Branch
    gram_rank: int
    condition_estimate: float
    asymmetry: float = 0.0
    min_singular_gap: float = float("inf")
    repeated_singular_values: bool = False

    def to_dict(self):
        return {
            "df": self.df,
            "m_r_rank": self.m_r_rank,
            "m_r_symmetric": self.m_r_symmetric,
            "branch": self.branch.value,
            "gram_rank": self.gram_rank,
            "condition_estimate": self.condition_estimate,
            "asymmetry": self.asymmetry,
            "min_singular_gap": self.min_singular_gap,
            "repeated_singular_values": self.repeated_singular_values,
        }


@dataclass(frozen=True, eq=False)
class DofWorkspace:
    gram: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    e_lambda: np.ndarray
    pinv_weighted_b: np.ndarray


def _check_size(data, max_dim):
    dim = data.p1 * data.p2
    if dim > max_dim:
        raise ValueError(f"p1*p2 = {dim} exceeds the dense assembly cap of {max_dim}")


def _check_fit(fit, accept_residual):
    if not fit.converged and fit.optimality_residual > accept_residual:
        raise UnconvergedFitError(
            f"fit at lam={fit.lam:.4g} has optimality residual {fit.optimality_residual:.3g}"
        )


def gram_rank(data, rel_tol=GRAM_REL_TOL):
    return truncated_svd(data.gram, rel_tol).rank


def residual_matrix(data, fit):
    """``E = (1/n) sum_i r_i X_i`` with ``r_i = y_i - <X_i, B>``."""
    r = data.responses - data.fitted(fit.b_hat)
    return np.tensordot(r, data.predictors, axes=1) / data.n


def m1_matrix(w, svd):
    """``[W2 V D^-1 V^T W2] (x) W1^2 + W2^2 (x) [W1 U D^-1 U^T W1]``; zero at rank 0."""
    p1, p2 = w.shape
    if svd.rank == 0:
        return np.zeros((p1 * p2, p1 * p2))
    inv_b = 1.0 / svd.singular_values
    U, V = svd.left_vectors, svd.right_vectors
    right = w.w2 @ (V * inv_b) @ V.T @ w.w2
    left = w.w1 @ (U * inv_b) @ U.T @ w.w1
    return kronecker(right, w.w1 @ w.w1) + kronecker(w.w2 @ w.w2, left)


def m2_terms(data, w, fit, lam, accept_residual=ACCEPT_RESIDUAL):
    """The five (already negated) summands of ``M2``, in order.

    Rank-0 fits give five zero matrices.
    """
    p1, p2 = data.p1, data.p2
    dim = p1 * p2
    svd = fit.weighted_svd
    if svd.rank == 0:
        return [np.zeros((dim, dim)) for _ in range(5)]
    if not lam > 0:
        raise ValueError("m2 needs lam > 0")
    _check_fit(fit, accept_residual)

    W1, W2, W1i, W2i = w.w1, w.w2, w.w1_inv, w.w2_inv
    U, V = svd.left_vectors, svd.right_vectors
    I1, I2 = np.eye(p1), np.eye(p2)
    PU, PV = U @ U.T, V @ V.T
    G = data.gram
    E = residual_matrix(data, fit)
    C_pinv = (V / svd.singular_values) @ U.T  # (W1 B W2)^+, p2 x p1

    left_u = kronecker(I2, W1 @ (I1 - PU) @ W1i)
    left_v = kronecker(W2 @ (I2 - PV) @ W2i, I1)
    vv = W2i @ PV @ W2
    uu = W1i @ PU @ W1
    t1 = -left_u @ G @ kronecker(vv, I1)
    t2 = -left_v @ G @ kronecker(I2, uu)
    t3 = -left_v @ G @ kronecker(vv, uu)

    R4 = kronecker(C_pinv.T @ W2, W1)  # p1^2 x p2 p1
    R4 = R4 + apply_commutation(p1, p1, R4)
    t4 = -lam * kronecker(E.T @ W1i, W1) @ R4

    R5 = kronecker(W2, C_pinv @ W1)  # p2^2 x p2 p1
    R5 = R5 + apply_commutation(p2, p2, R5)
    t5 = -lam * kronecker(W2, E @ W2i) @ R5
    return [t1, t2, t3, t4, t5]


def m2_matrix(data, w, fit, lam, accept_residual=ACCEPT_RESIDUAL):
    return sum(m2_terms(data, w, fit, lam, accept_residual))


def build_workspace(data, w, fit, lam, accept_residual=ACCEPT_RESIDUAL, max_dim=MAX_VEC_DIM):
    _check_size(data, max_dim)
    svd = fit.weighted_svd
    if svd.rank == 0 or lam == 0:
        dim = data.p1 * data.p2
        m1 = np.zeros((dim, dim))
        m2 = np.zeros((dim, dim))
    else:
        m1 = m1_matrix(w, svd)
        m2 = m2_matrix(data, w, fit, lam, accept_residual)
    if svd.rank:
        pinv_b = (svd.right_vectors / svd.singular_values) @ svd.left_vectors.T
    else:
        pinv_b = np.zeros((data.p2, data.p1))
    return DofWorkspace(
        gram=data.gram,
        m1=m1,
        m2=m2,
        e_lambda=residual_matrix(data, fit),
        pinv_weighted_b=pinv_b,
    )


def m_r_matrix(ws, lam):
    """``gram + lam * M1 + M2`` (M2 carries its own lambda scaling)."""
    return ws.gram + lam * ws.m1 + ws.m2


def degrees_of_freedom(data, w, fit, lam, rel_tol=M_R_REL_TOL,
                       accept_residual=ACCEPT_RESIDUAL, max_dim=MAX_VEC_DIM):
    """Closed-form degrees of freedom of the fit at ``lam``.

    For ``lam == 0`` or a rank-0 fit this is ``rank(gram)``. Otherwise
    ``M_r`` is assembled and ``trace(gram M_r^+)`` returned; the SVD
    pseudo-inverse doubles as the plain inverse when ``M_r`` has full
    numerical rank.

    Raises
    ------
    UnconvergedFitError
        If the fit did not converge and its optimality residual exceeds
        ``accept_residual``.
    """
    _check_size(data, max_dim)
    g_rank = gram_rank(data)
    svd = fit.weighted_svd
    if lam == 0 or svd.rank == 0:
        return DofEstimate(
            df=float(g_rank),
            m_r_rank=g_rank,
            m_r_symmetric=True,
            branch=Branch.ENDPOINT,
            gram_rank=g_rank,
            condition_estimate=_condition(data.gram, g_rank),
        )

    ws = build_workspace(data, w, fit, lam, accept_residual, max_dim)
    M = m_r_matrix(ws, lam)
    norm = np.linalg.norm(M)
    asym = float(np.linalg.norm(M - M.T) / norm) if norm > 0 else 0.0
    tsvd = truncated_svd(M, rel_tol)
    dim = M.shape[0]
    if tsvd.rank == dim:
        branch = Branch.FULL_RANK_INVERSE
        df = float(np.trace(np.linalg.solve(M, data.gram)))
    else:
        branch = Branch.PSEUDO_INVERSE
        df = float(np.trace(pseudo_inverse(M, rel_tol) @ data.gram))
    s = svd.singular_values
    gap = float(np.min(-np.diff(s))) if s.size > 1 else float("inf")
    repeated = bool(gap < 1e-6)
    if repeated:
        log.info("near-repeated weighted singular values at lam=%.4g (gap %.2e)", lam, gap)
    return DofEstimate(
        df=df,
        m_r_rank=tsvd.rank,
        m_r_symmetric=bool(asym <= 1e-8),
        branch=branch,
        gram_rank=g_rank,
        condition_estimate=float(tsvd.singular_values[0] / tsvd.singular_values[-1]),
        asymmetry=asym,
        min_singular_gap=gap,
        repeated_singular_values=repeated,
    )


def _condition(M, rank):
    s = np.linalg.svd(M, compute_uv=False)
    if rank == 0:
        return float("inf")
    return float(s[0] / s[rank - 1])


def stein_divergence(data, w, fit, lam, model=None):
    """Exact divergence ``sum_k d yhat_k / d y_k`` by implicit differentiation.

    Differentiates ``c = prox_{t lam}(c - t (H c - X~^T y / n))`` in the
    weighted coordinates ``c = vec(W1 B W2)``, which gives
    ``df = t * trace(A^+ J H)`` with ``A = I - J (I - t H)`` and ``J`` the
    Jacobian of singular value thresholding. Valid where the fitted rank is
    locally constant.
    """
    if model is None:
        model = QuadraticModel(data, w)
    H = model.hessian
    dim = H.shape[0]
    if lam == 0:
        return float(truncated_svd(H, GRAM_REL_TOL).rank)
    if fit.weighted_svd.rank == 0:
        return 0.0
    t = model.balanced_step
    C = w.w1 @ fit.b_hat @ w.w2
    c = C.reshape(-1, order="F")
    Z = (c - t * model.gradient(c)).reshape(data.p1, data.p2, order="F")
    J = svt_jacobian(Z, lam * t)
    A = np.eye(dim) - J @ (np.eye(dim) - t * H)
    sol = np.linalg.lstsq(A, J @ H, rcond=None)[0]
    return float(t * np.trace(sol))
