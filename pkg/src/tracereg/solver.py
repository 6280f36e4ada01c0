"""Accelerated proximal gradient solver for the adaptive nuclear-norm problem.

The weighted problem is reduced to a plain nuclear-norm problem in
``C = W1 B W2`` over the predictors ``W1^-1 X_i W2^-1`` (valid because the
weights are symmetric positive definite), solved by FISTA with a constant
step ``1/L`` and gradient restarts, and mapped back with
``B = W1^-1 C W2^-1``.

The weights make the transformed problem badly conditioned at small
``lam``; once the FISTA rank has settled, a semismooth Newton step on the
same proximal fixed-point map is tried to finish the solve.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from tracereg.linalg import (
    DEFAULT_REL_TOL,
    TruncatedSvd,
    devectorize,
    nuclear_norm,
    spectral_norm,
    truncated_svd,
    vectorize,
)
from tracereg.weights import fit_least_squares, transform_design

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 20000
    kkt_tolerance: float = 1e-7
    svd_rel_tol: float = DEFAULT_REL_TOL
    warm_start: Optional[np.ndarray] = None
    check_every: int = 5
    newton_polish: bool = True
    stall_iterations: int = 4000

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not self.kkt_tolerance > 0:
            raise ValueError("kkt_tolerance must be positive")
        if not self.svd_rel_tol > 0:
            raise ValueError("svd_rel_tol must be positive")


@dataclass(frozen=True, eq=False)
class FitResult:
    lam: float
    b_hat: np.ndarray
    weighted_svd: TruncatedSvd
    residuals: np.ndarray
    objective: float
    optimality_residual: float
    iterations: int
    converged: bool
    c_hat: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def rank(self):
        return self.weighted_svd.rank

    @property
    def rss(self):
        return float(self.residuals @ self.residuals)


class QuadraticModel:
    """Precomputed least-squares pieces of the transformed problem.

    ``hessian = X~^T X~ / n`` and ``linear = X~^T y / n`` in vectorized C
    coordinates; ``lipschitz`` is the largest eigenvalue of the hessian.
    """

    def __init__(self, data, w):
        self.data = data
        self.weights = w
        self.p1, self.p2 = data.p1, data.p2
        tdata = transform_design(data, w)
        self.hessian = tdata.gram
        self.linear = tdata.design.T @ data.responses / data.n
        ev = np.linalg.eigvalsh(self.hessian)
        top = max(float(ev[-1]), np.finfo(float).tiny)
        self.lipschitz = top
        # geometric mean of the extreme curvatures, floored for singular designs
        self.balanced_step = 1.0 / np.sqrt(top * max(float(ev[0]), 1e-12 * top))

    def gradient(self, c):
        return self.hessian @ c - self.linear

    def scaled_subgradient(self, c, lam):
        """``(1/(n lam)) W1^-1 (sum_i r_i X_i) W2^-1`` as a p1 x p2 matrix."""
        return devectorize((self.linear - self.hessian @ c) / lam, self.p1, self.p2)

    def to_b(self, C):
        w = self.weights
        return w.w1_inv @ C @ w.w2_inv


def svt_prox(M, tau):
    """Singular value soft-thresholding, the prox of ``tau * ||.||_*``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    M = np.asarray(M, dtype=float)
    if tau == 0:
        return M.copy()
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ Vt[keep]


def svt_jacobian(Z, tau):
    """Jacobian of ``vec(svt_prox(Z, tau))`` with respect to ``vec(Z)``.

    Closed form in the singular bases of ``Z``: diagonal entries get
    ``f'(s_i)``, the symmetric and skew parts of square off-diagonal pairs
    get divided differences ``(f(s_i) -+ f(s_j)) / (s_i -+ s_j)`` and the
    rectangular remainder gets ``f(s_i) / s_i``, with ``f(s) = max(s - tau, 0)``.
    Valid wherever no singular value equals ``tau``.
    """
    Z = np.asarray(Z, dtype=float)
    p1, p2 = Z.shape
    U, s, Vt = np.linalg.svd(Z, full_matrices=True)
    k = s.size
    f = np.maximum(s - tau, 0.0)
    active = s > tau
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(s > 0, f / np.where(s > 0, s, 1.0), 0.0)
        si, sj = s[:, None], s[None, :]
        fi, fj = f[:, None], f[None, :]
        gap = si - sj
        omega_sym = np.where(np.abs(gap) > 1e-14 * max(s[0] if k else 0.0, 1.0),
                             (fi - fj) / np.where(gap == 0, 1.0, gap),
                             0.5 * (active[:, None] + active[None, :]))
        tot = si + sj
        omega_skew = np.where(tot > 0, (fi + fj) / np.where(tot > 0, tot, 1.0), 0.0)

    m = p1 * p2
    L = np.zeros((m, m))
    ii, jj = np.meshgrid(np.arange(p1), np.arange(p2), indexing="ij")
    idx = ii + p1 * jj
    for i in range(p1):
        for j in range(p2):
            a = idx[i, j]
            if i < k and j < k:
                if i == j:
                    L[a, a] = float(active[i])
                else:
                    L[a, a] = 0.5 * (omega_sym[i, j] + omega_skew[i, j])
                    L[a, idx[j, i]] = 0.5 * (omega_sym[i, j] - omega_skew[i, j])
            elif j >= k:
                L[a, a] = ratio[i]
            else:
                L[a, a] = ratio[j]
    Q = np.kron(Vt.T, U)  # vec(U R V^T) = Q vec(R)
    return Q @ L @ Q.T


def _kkt_violation(G, svd, rel_tol=DEFAULT_REL_TOL):
    """Distance of ``G`` from the nuclear-norm subdifferential at a point with SVD ``svd``.

    Sums ``||U^T G V - I||_F``, the excess of ``||P_U^perp G P_V^perp||_2``
    over 1, and the Frobenius norms of the two off-diagonal blocks.
    """
    U, V = svd.left_vectors, svd.right_vectors
    if svd.rank == 0:
        return max(spectral_norm(G) - 1.0, 0.0)
    GV = G @ V
    UtG = U.T @ G
    core = U.T @ GV
    diag_err = np.linalg.norm(core - np.eye(svd.rank))
    left_off = GV - U @ core  # P_U^perp G V
    right_off = UtG - core @ V.T  # U^T G P_V^perp
    perp = G - U @ UtG - GV @ V.T + U @ core @ V.T
    return float(
        diag_err
        + max(spectral_norm(perp) - 1.0, 0.0)
        + np.linalg.norm(left_off)
        + np.linalg.norm(right_off)
    )


def optimality_residual(data, w, lam, b, rel_tol=DEFAULT_REL_TOL):
    """Violation of the stationarity condition of the weighted problem at ``b``.

    Zero iff ``(1/n) sum_i r_i X_i`` lies in ``lam * W1 (d||.||_*)(W1 b W2) W2``.
    """
    if not lam > 0:
        raise ValueError("optimality_residual needs lam > 0")
    b = np.asarray(b, dtype=float)
    r = data.responses - data.fitted(b)
    E = np.tensordot(r, data.predictors, axes=1) / data.n
    G = w.w1_inv @ E @ w.w2_inv / lam
    return _kkt_violation(G, truncated_svd(w.w1 @ b @ w.w2, rel_tol), rel_tol)


def lambda_max(data, w):
    """Smallest ``lam`` at which ``B = 0`` is stationary."""
    if not np.any(data.responses):
        return 0.0
    S = np.tensordot(data.responses, data.predictors, axes=1) / data.n
    return spectral_norm(w.w1_inv @ S @ w.w2_inv)


def _objective(data, w, lam, b, residuals):
    penalty = nuclear_norm(w.w1 @ b @ w.w2) if lam > 0 else 0.0
    return float(residuals @ residuals / (2 * data.n) + lam * penalty)


def _finish(data, w, lam, C, opt_res, iterations, converged, rel_tol, model):
    b = model.to_b(C)
    residuals = data.responses - data.fitted(b)
    return FitResult(
        lam=float(lam),
        b_hat=b,
        weighted_svd=truncated_svd(C, rel_tol),
        residuals=residuals,
        objective=_objective(data, w, lam, b, residuals),
        optimality_residual=float(opt_res),
        iterations=iterations,
        converged=bool(converged),
        c_hat=C,
    )


def _least_squares_fit(data, w, opts, model):
    b = fit_least_squares(data)
    residuals = data.responses - data.fitted(b)
    grad = data.design.T @ residuals / data.n
    opt_res = np.linalg.norm(grad) / (1.0 + np.linalg.norm(data.responses))
    C = w.w1 @ b @ w.w2
    return FitResult(
        lam=0.0,
        b_hat=b,
        weighted_svd=truncated_svd(C, opts.svd_rel_tol),
        residuals=residuals,
        objective=float(residuals @ residuals / (2 * data.n)),
        optimality_residual=float(opt_res),
        iterations=0,
        converged=bool(opt_res <= max(opts.kkt_tolerance, 1e-8)),
        c_hat=C,
    )


def solve(data, w, lam, opts=None, *, model=None):
    """Fit the adaptive nuclear-norm regularized trace regression at ``lam``.

    Parameters
    ----------
    data : TraceDataset
    w : WeightPair
    lam : float
        Regularization level, ``lam >= 0``. ``lam == 0`` returns the
        min-norm least-squares fit.
    opts : SolverOptions, optional
    model : QuadraticModel, optional
        Precomputed quadratic pieces for ``(data, w)``; built if absent.

    Returns
    -------
    FitResult
        ``converged`` is False when ``max_iterations`` ran out; the iterate
        with the smallest optimality residual is returned in that case.
    """
    opts = opts or SolverOptions()
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if model is None:
        model = QuadraticModel(data, w)
    if lam == 0:
        return _least_squares_fit(data, w, opts, model)

    p1, p2 = data.p1, data.p2
    step = 1.0 / model.lipschitz
    tau = lam * step
    if opts.warm_start is not None:
        C = np.asarray(opts.warm_start, dtype=float)
        if C.shape != (p1, p2):
            raise ValueError("warm_start has the wrong shape")
        c = vectorize(w.w1 @ C @ w.w2)
    else:
        c = np.zeros(p1 * p2)

    def residual_at(c):
        C = devectorize(c, p1, p2)
        G = model.scaled_subgradient(c, lam)
        return _kkt_violation(G, truncated_svd(C, opts.svd_rel_tol), opts.svd_rel_tol)

    best_c, best_res = c, residual_at(c)
    if best_res <= opts.kkt_tolerance:
        return _finish(data, w, lam, devectorize(c, p1, p2), best_res, 0, True, opts.svd_rel_tol, model)

    z = c.copy()
    t = 1.0
    it = 0
    stable_checks = 0
    last_rank = -1
    next_polish = 0
    cooldown = 50
    last_gain = 0
    for it in range(1, opts.max_iterations + 1):
        Z = devectorize(z - step * model.gradient(z), p1, p2)
        c_new = vectorize(svt_prox(Z, tau))
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z_new = c_new + ((t - 1.0) / t_new) * (c_new - c)
        # gradient-based adaptive restart
        if (z - c_new) @ (c_new - c) > 0:
            z_new, t_new = c_new.copy(), 1.0
        c, z, t = c_new, z_new, t_new
        if it % opts.check_every and it != opts.max_iterations:
            continue
        res = residual_at(c)
        if res < 0.9 * best_res:
            last_gain = it
        if res < best_res:
            best_c, best_res = c, res
        if res <= opts.kkt_tolerance:
            return _finish(data, w, lam, devectorize(c, p1, p2), res, it, True, opts.svd_rel_tol, model)
        rank = truncated_svd(devectorize(c, p1, p2), opts.svd_rel_tol).rank
        stable_checks = stable_checks + 1 if rank == last_rank else 0
        last_rank = rank
        if opts.newton_polish and stable_checks >= 3 and it >= next_polish:
            c_pol, res_pol = _newton_polish(model, c, lam, p1, p2, opts.kkt_tolerance, opts.svd_rel_tol)
            if res_pol < 0.9 * best_res:
                last_gain = it
            if res_pol < best_res:
                best_c, best_res = c_pol, res_pol
            if res_pol <= opts.kkt_tolerance:
                return _finish(data, w, lam, devectorize(c_pol, p1, p2), res_pol, it, True,
                               opts.svd_rel_tol, model)
            next_polish = it + cooldown
            cooldown *= 2
        if it - last_gain > opts.stall_iterations:
            break
    log.info("solver stopped unconverged after %d iterations at lam=%.4g (residual %.3g)", it, lam, best_res)
    return _finish(data, w, lam, devectorize(best_c, p1, p2), best_res, it, False, opts.svd_rel_tol, model)


def _newton_polish(model, c, lam, p1, p2, tol, rel_tol, max_steps=50):
    """Semismooth Newton on the fixed-point residual ``F(c) = c - prox_{t lam}(c - t grad(c))``.

    Any ``t > 0`` has the same fixed points; ``t = 1/sqrt(L mu)`` balances
    the residual map far better than ``1/L`` when the hessian is badly
    conditioned. Backtracking on ``||F||`` globalizes the steps. Returns the
    best prox point seen (exact rank) and its optimality residual.
    """
    t = model.balanced_step
    tau = lam * t
    m = c.size
    eye = np.eye(m)
    smooth = eye - t * model.hessian

    def residual_map(c):
        Z = devectorize(c - t * model.gradient(c), p1, p2)
        P = svt_prox(Z, tau)
        return Z, P, c - vectorize(P)

    def kkt(P):
        G = model.scaled_subgradient(vectorize(P), lam)
        return _kkt_violation(G, truncated_svd(P, rel_tol), rel_tol)

    Z, P, F = residual_map(c)
    best_P, best_res = P, kkt(P)
    for _ in range(max_steps):
        if best_res <= tol:
            break
        base = np.linalg.norm(F)
        A = eye - svt_jacobian(Z, tau) @ smooth
        delta = np.linalg.lstsq(A, -F, rcond=None)[0]
        if not np.all(np.isfinite(delta)):
            break
        a = 1.0
        while a > 1e-6:
            c_try = c + a * delta
            Z_try, P_try, F_try = residual_map(c_try)
            if np.linalg.norm(F_try) < (1.0 - 1e-4 * a) * base:
                break
            a *= 0.5
        else:
            break
        c, Z, P, F = c_try, Z_try, P_try, F_try
        res = kkt(P)
        if res < best_res:
            best_P, best_res = P, res
    return vectorize(best_P), best_res


def solve_path(data, w, grid, opts=None):
    """Warm-started fits over ``grid`` in decreasing-lambda order.

    Results are returned in the order of ``grid``. Non-converged fits are
    kept (with ``converged=False``) rather than aborting the path.
    """
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise ValueError("grid must be nonempty")
    opts = opts or SolverOptions()
    model = QuadraticModel(data, w)
    order = np.argsort(-grid, kind="stable")
    fits = [None] * grid.size
    warm = opts.warm_start
    for idx in order:
        step_opts = SolverOptions(
            max_iterations=opts.max_iterations,
            kkt_tolerance=opts.kkt_tolerance,
            svd_rel_tol=opts.svd_rel_tol,
            warm_start=warm,
            check_every=opts.check_every,
            newton_polish=opts.newton_polish,
            stall_iterations=opts.stall_iterations,
        )
        fit = solve(data, w, grid[idx], step_opts, model=model)
        fits[idx] = fit
        warm = fit.b_hat
    return fits
