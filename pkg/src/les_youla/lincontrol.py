"""Linear analysis at the origin: Lyapunov, Hurwitz, stabilizability, LQR."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

LYAP_TOL = 1e-10
CARE_TOL = 1e-8
MAX_KLEINMAN_ITERS = 100


class LyapunovError(np.linalg.LinAlgError):
    pass


class NotStabilizableError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


def _sym_index(n):
    iu = np.triu_indices(n)
    pos = np.zeros((n, n), dtype=int)
    pos[iu] = np.arange(iu[0].size)
    pos = np.triu(pos) + np.triu(pos, 1).T
    return iu, pos


def solve_lyapunov(A, Q, tol=LYAP_TOL):
    """Solve ``A' P + P A = -Q`` (``Q`` symmetric) as a dense linear system.

    The equation is vectorized over the ``n (n + 1) / 2`` entries of the upper
    triangle of ``P``.  Raises :class:`LyapunovError` when two eigenvalues of
    ``A`` sum to zero (singular operator) or the residual exceeds
    ``tol * (1 + |Q|_F)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or Q.shape != (n, n):
        raise ValueError(f"shape mismatch A{A.shape} Q{Q.shape}")
    iu, pos = _sym_index(n)
    m = iu[0].size
    # (A'P + PA)_ij = sum_k A_ki P_kj + P_ik A_kj, rows restricted to i <= j
    L = np.zeros((m, m))
    rows = np.arange(m)
    for k in range(n):
        np.add.at(L, (rows, pos[k, iu[1]]), A[k, iu[0]])
        np.add.at(L, (rows, pos[iu[0], k]), A[k, iu[1]])
    try:
        with warnings.catch_warnings(), np.errstate(divide="ignore", invalid="ignore"):
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            x = scipy.linalg.solve(L, -Q[iu])
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
        raise LyapunovError("eigenvalue sum zero: Lyapunov operator is singular") from None
    P = x[pos]
    with np.errstate(all="ignore"):
        res = np.linalg.norm(A.T @ P + P @ A + Q)
    if not np.isfinite(res) or res > tol * (1.0 + np.linalg.norm(Q)):
        raise LyapunovError(f"eigenvalue sum zero: residual {res:.3e}")
    return P


@dataclass
class HurwitzVerdict:
    hurwitz: bool
    reason: str = ""

    def __bool__(self):
        return self.hurwitz


def hurwitz_test(A):
    """Hurwitz verdict with a reason tag, via Lyapunov + Cholesky."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not np.all(np.isfinite(A)):
        return HurwitzVerdict(False, "non-finite entries")
    try:
        P = solve_lyapunov(A, np.eye(A.shape[0]), tol=1e-8)
    except LyapunovError as exc:
        return HurwitzVerdict(False, f"lyapunov: {exc}")
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        return HurwitzVerdict(False, "lyapunov solution not positive definite")
    return HurwitzVerdict(True, "ok")


def is_hurwitz(A) -> bool:
    return hurwitz_test(A).hurwitz


def care_residual(A, B, Q, R, P):
    return np.linalg.norm(A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q)


def bass_seed(A, B):
    """Stabilizing gain ``-B' P0^{-1}`` with ``P0`` from a shifted Lyapunov equation."""
    n = A.shape[0]
    eta = 1.0 + np.linalg.norm(A)
    As = -A - eta * np.eye(n)
    # (-A - eta I) P0 + P0 (-A - eta I)' = -2 B B'
    P0 = solve_lyapunov(As.T, 2.0 * B @ B.T, tol=1e-8)
    # P0 is singular when (A, B) is not controllable; a stable uncontrollable
    # part is still fine, so retry with a small ridge and keep whatever works.
    scale = max(np.linalg.norm(P0), 1e-300)
    for ridge in (0.0, 1e-10, 1e-7, 1e-4):
        try:
            with np.errstate(all="ignore"):
                K = -B.T @ np.linalg.inv(P0 + ridge * scale * np.eye(n))
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(K)) and is_hurwitz(A + B @ K):
            return K
    raise NotStabilizableError("not stabilizable: no stabilizing seed gain")


@dataclass
class LQRResult:
    K: np.ndarray
    P: np.ndarray
    iterations: int
    residuals: list = field(default_factory=list)


def lqr(A, B, Qw, Rw, tol=CARE_TOL, max_iter=MAX_KLEINMAN_ITERS, K0=None):
    """Continuous-time LQR by Kleinman-Newton iteration.

    Returns :class:`LQRResult` with ``K`` (``u = K x``, i.e. ``K = -R^{-1} B' P``)
    and the CARE solution ``P``.  Raises :class:`NotStabilizableError` if no
    stabilizing seed exists and :class:`ConvergenceError` after ``max_iter``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Qw = np.atleast_2d(np.asarray(Qw, dtype=float))
    Rw = np.atleast_2d(np.asarray(Rw, dtype=float))
    if K0 is None:
        try:
            K = bass_seed(A, B)
        except LyapunovError as exc:
            raise NotStabilizableError(f"not stabilizable: {exc}") from None
    else:
        K = np.atleast_2d(np.asarray(K0, dtype=float))
    if not is_hurwitz(A + B @ K):
        raise NotStabilizableError("not stabilizable: seed gain does not stabilize")
    residuals = []
    P = None
    for it in range(1, max_iter + 1):
        Acl = A + B @ K
        try:
            P = solve_lyapunov(Acl, Qw + K.T @ Rw @ K, tol=1e-8)
        except LyapunovError as exc:
            raise ConvergenceError(f"Kleinman step {it}: {exc}") from None
        K = -np.linalg.solve(Rw, B.T @ P)
        res = care_residual(A, B, Qw, Rw, P)
        residuals.append(res)
        if res <= tol:
            break
    else:
        raise ConvergenceError(f"Kleinman iteration did not converge in {max_iter} steps")
    # one more Newton step: the residual test alone leaves P accurate only to ~tol
    try:
        P2 = solve_lyapunov(A + B @ K, Qw + K.T @ Rw @ K, tol=1e-8)
        res2 = care_residual(A, B, Qw, Rw, P2)
        if res2 <= res:
            P, K, res = P2, -np.linalg.solve(Rw, B.T @ P2), res2
            residuals.append(res2)
    except LyapunovError:
        pass
    if not is_hurwitz(A + B @ K):
        raise ConvergenceError("final LQR gain is not stabilizing")
    return LQRResult(K=K, P=P, iterations=it, residuals=residuals)


def check_stabilizable(A, B) -> bool:
    """Constructive test: a stabilizing LQR gain exists for unit weights."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    try:
        lqr(A, B, np.eye(A.shape[0]), np.eye(B.shape[1]))
    except (NotStabilizableError, ConvergenceError, LyapunovError, np.linalg.LinAlgError):
        return False
    return True
