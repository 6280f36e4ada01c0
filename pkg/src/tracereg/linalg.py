"""Dense linear-algebra kernels.

All matrices follow the column-stacking convention: ``vectorize(M)[i + rows*j]``
is ``M[i, j]``.
"""

from dataclasses import dataclass

import numpy as np

DEFAULT_REL_TOL = 1e-8

# Largest commutation matrix (rows) that is ever materialized.
COMMUTATION_MATERIALIZE_LIMIT = 10_000

# Guard against accidental gigantic Kronecker products (entries).
KRON_MAX_ENTRIES = 2**31


def vectorize(M):
    M = np.asarray(M, dtype=float)
    return M.reshape(-1, order="F")


def devectorize(v, rows, cols):
    v = np.asarray(v, dtype=float)
    if v.size != rows * cols:
        raise ValueError(f"cannot reshape vector of length {v.size} into {rows}x{cols}")
    return v.reshape(rows, cols, order="F")


def kronecker(A, B):
    """Kronecker product; block ``(i, j)`` of the result is ``A[i, j] * B``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    rows = A.shape[0] * B.shape[0]
    cols = A.shape[1] * B.shape[1]
    if rows * cols > KRON_MAX_ENTRIES:
        raise OverflowError(f"Kronecker product of shape {rows}x{cols} exceeds the size limit")
    return np.kron(A, B)


def commutation_permutation(m, n):
    """Index permutation ``perm`` with ``vec(A.T) == vec(A)[perm]`` for ``m x n`` A."""
    # vec(A.T)[j + n*i] = A[i, j] = vec(A)[i + m*j]
    return np.arange(m * n).reshape(m, n, order="F").ravel(order="C")


def commutation_matrix(m, n):
    """Explicit ``mn x mn`` permutation matrix K with ``K vec(A) = vec(A.T)``.

    Only materialized up to ``COMMUTATION_MATERIALIZE_LIMIT`` rows; use
    :func:`commutation_permutation` / :func:`apply_commutation` beyond that.
    """
    size = m * n
    if size > COMMUTATION_MATERIALIZE_LIMIT:
        raise ValueError(
            f"commutation matrix of order {size} is not materialized; "
            "use apply_commutation instead"
        )
    K = np.zeros((size, size))
    K[np.arange(size), commutation_permutation(m, n)] = 1.0
    return K


def apply_commutation(m, n, M, side="left"):
    """Compute ``K_{m,n} @ M`` (side='left') or ``M @ K_{m,n}`` (side='right')."""
    perm = commutation_permutation(m, n)
    M = np.asarray(M)
    if side == "left":
        return M[perm]
    if side == "right":
        out = np.empty_like(M)
        out[:, perm] = M
        return out
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


@dataclass(frozen=True)
class TruncatedSvd:
    left_vectors: np.ndarray
    singular_values: np.ndarray
    right_vectors: np.ndarray
    tolerance_used: float

    @property
    def rank(self):
        return int(self.singular_values.size)

    def reconstruct(self):
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T


def truncated_svd(M, rel_tol=DEFAULT_REL_TOL):
    """Thin SVD keeping the triplets with ``sigma_i > rel_tol * sigma_1``.

    An all-zero matrix yields rank 0 with empty factors.
    """
    if not 0 <= rel_tol < 1:
        raise ValueError("rel_tol must lie in [0, 1)")
    M = np.asarray(M, dtype=float)
    p1, p2 = M.shape
    if not np.any(M):
        return TruncatedSvd(np.zeros((p1, 0)), np.zeros(0), np.zeros((p2, 0)), 0.0)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    cut = rel_tol * s[0]
    r = int(np.count_nonzero(s > cut))
    return TruncatedSvd(U[:, :r], s[:r], Vt[:r].T, float(cut))


def pseudo_inverse(M, rel_tol=DEFAULT_REL_TOL):
    """Moore-Penrose inverse from the SVD, zeroing ``sigma <= rel_tol * sigma_1``.

    Works for non-symmetric input; for symmetric input it coincides with the
    eigendecomposition-based construction.
    """
    M = np.asarray(M, dtype=float)
    tsvd = truncated_svd(M, rel_tol)
    if tsvd.rank == 0:
        return np.zeros(M.T.shape)
    return (tsvd.right_vectors / tsvd.singular_values) @ tsvd.left_vectors.T


def spectral_norm(M):
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def nuclear_norm(M):
    return float(np.sum(np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)))
