"""Dense linear-algebra kernels: Lyapunov/LQR solvers, pseudoinverse, Hankel
matrices and spectral radius.

All functions are pure and operate on ``numpy`` arrays.
"""

import warnings

import numpy as np
from scipy.signal import place_poles

from .errors import (
    DimensionMismatch,
    NoConvergence,
    NotContractive,
    NotStabilizable,
    SequenceTooShort,
)

# Singular values below RANK_RTOL * sigma_max are treated as zero everywhere.
RANK_RTOL = 1e-8

# Largest state dimension solved through the Kronecker-vectorised system.
KRON_MAX_DIM = 40


def _square(M, name="M"):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {M.shape}")
    return M


def spectral_radius(M):
    """Largest eigenvalue modulus of a square matrix."""
    M = _square(M)
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def matrix_rank(M, rtol=RANK_RTOL):
    """Numerical rank using the package-wide relative singular value cutoff."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def pseudoinverse(M, rtol=RANK_RTOL):
    """Moore-Penrose pseudoinverse computed from a thin SVD."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0 or not np.any(M):
        return np.zeros(M.shape[::-1])
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    keep = s > rtol * s[0]
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (Vt.T * s_inv) @ U.T


def hankel(u, L):
    """Block-Hankel matrix of depth ``L`` built from a vector sequence.

    Args:
        u: Sequence of shape ``(N,)`` (scalar signal) or ``(N, m)``.
        L: Number of block rows.

    Returns:
        Array of shape ``(m * L, N - L + 1)`` whose column ``j`` stacks
        ``u[j], u[j + 1], ..., u[j + L - 1]``.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    N, m = u.shape
    if L < 1:
        raise ValueError("L must be >= 1")
    if N < L:
        raise SequenceTooShort(f"sequence of length {N} is shorter than order {L}")
    cols = N - L + 1
    H = np.empty((m * L, cols))
    for i in range(L):
        H[i * m:(i + 1) * m, :] = u[i:i + cols].T
    return H


def is_persistently_exciting(u, L):
    """True when the depth-``L`` Hankel matrix of ``u`` has full row rank."""
    H = hankel(u, L)
    return matrix_rank(H) == H.shape[0]


def solve_discrete_lyapunov(M, Q):
    """Solve ``X = M^T X M + Q`` for a Schur-stable ``M``.

    Small problems go through the Kronecker form
    ``(I - M^T kron M^T) vec(X) = vec(Q)``; larger ones use squared Smith
    iteration, which sums the series ``sum_j (M^T)^j Q M^j`` by doubling.

    Raises:
        NotContractive: if ``spectral_radius(M) >= 1``.
        DimensionMismatch: if shapes disagree.
    """
    M = _square(M)
    Q = _square(Q, "Q")
    n = M.shape[0]
    if Q.shape != (n, n):
        raise DimensionMismatch(f"Q has shape {Q.shape}, expected {(n, n)}")
    rho = spectral_radius(M)
    if rho >= 1.0:
        raise NotContractive(f"spectral radius {rho:.6g} >= 1", radius=rho)
    if n <= KRON_MAX_DIM:
        Mt = M.T
        lhs = np.eye(n * n) - np.kron(Mt, Mt)
        X = np.linalg.solve(lhs, Q.reshape(-1)).reshape(n, n)
    else:
        X = _smith(M, Q)
    return 0.5 * (X + X.T)


def _smith(M, Q, tol=1e-12, max_doublings=200):
    X = Q.copy()
    Ak = M.copy()
    for _ in range(max_doublings):
        step = Ak.T @ X @ Ak
        X = X + step
        Ak = Ak @ Ak
        if np.linalg.norm(step) <= tol * max(np.linalg.norm(X), 1e-300):
            return X
    raise NoConvergence("Smith iteration did not converge")


def closed_loop_cost(A, B, Q, N, R, K):
    """Effective state weight ``Q - N K - K^T N^T + K^T R K`` under ``u = -K x``."""
    return Q - N @ K - K.T @ N.T + K.T @ R @ K


def policy_value(A, B, Q, N, R, K):
    """Quadratic value matrix of the policy ``u = -K x`` (Lyapunov solve)."""
    Acl = A - B @ K
    return solve_discrete_lyapunov(Acl, closed_loop_cost(A, B, Q, N, R, K))


def stabilizing_gain(A, B, rng_seed=0):
    """Find some ``K`` with ``rho(A - B K) < 1`` by eigenvalue placement.

    Returns the zero gain when ``A`` is already Schur stable.
    """
    A = _square(A, "A")
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n, m = B.shape
    if spectral_radius(A) < 1.0:
        return np.zeros((m, n))
    rng = np.random.default_rng(rng_seed)
    candidates = [np.linspace(0.1, 0.6, n)]
    candidates += [np.sort(rng.uniform(-0.5, 0.5, n)) for _ in range(5)]
    for poles in candidates:
        # only a stabilizing seed is needed, so the robustness refinement is kept short
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                res = place_poles(A, B, poles, method="YT", maxiter=5)
        except (ValueError, np.linalg.LinAlgError):
            continue
        K = np.asarray(res.gain_matrix)
        if spectral_radius(A - B @ K) < 1.0:
            return K
    raise NotStabilizable("eigenvalue placement found no stabilizing gain")


def solve_lqr(A, B, Q, N, R, K0=None, max_iter=200, rtol=1e-12):
    """Infinite-horizon discrete LQR with cross weight via Hewer iteration.

    Minimises ``sum x^T Q x + 2 x^T N u + u^T R u`` subject to
    ``x+ = A x + B u``. Starting from a stabilizing gain, alternate the
    Lyapunov policy evaluation with ``K = (R + B^T P B)^-1 (N^T + B^T P A)``.

    Args:
        A, B: System matrices, ``n x n`` and ``n x m``.
        Q, N, R: Stage weights, ``n x n``, ``n x m``, ``m x m``.
        K0: Optional stabilizing seed; found by pole placement otherwise.
        max_iter: Iteration cap.
        rtol: Stop when ``||P_next - P||_F <= rtol * ||P||_F``.

    Returns:
        Tuple ``(P, K)``.

    Raises:
        NotStabilizable: no stabilizing seed could be produced.
        NoConvergence: iteration cap reached.
    """
    A = _square(A, "A")
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    m = B.shape[1]
    Q = np.asarray(Q, dtype=float).reshape(n, n)
    N = np.asarray(N, dtype=float).reshape(n, m)
    R = np.asarray(R, dtype=float).reshape(m, m)
    try:
        np.linalg.cholesky(0.5 * (R + R.T))
    except np.linalg.LinAlgError:
        raise ValueError("R must be positive definite") from None

    if K0 is None:
        K = stabilizing_gain(A, B)
    else:
        K = np.asarray(K0, dtype=float).reshape(m, n)
        if spectral_radius(A - B @ K) >= 1.0:
            raise NotStabilizable("seed gain K0 is not stabilizing")

    P = policy_value(A, B, Q, N, R, K)
    best = np.inf
    stalled = 0
    for _ in range(max_iter):
        K = np.linalg.solve(R + B.T @ P @ B, N.T + B.T @ P @ A)
        try:
            P_next = policy_value(A, B, Q, N, R, K)
        except NotContractive as exc:
            raise NotStabilizable("policy iteration produced an unstable gain") from exc
        change = np.linalg.norm(P_next - P) / max(np.linalg.norm(P), 1e-300)
        P = P_next
        if change <= rtol:
            break
        # Rounding floor: accept once the change stops shrinking near eps.
        if change >= best and change < 1e-10:
            stalled += 1
            if stalled >= 3:
                break
        best = min(best, change)
    else:
        raise NoConvergence(f"LQR policy iteration did not converge in {max_iter} steps")
    K = np.linalg.solve(R + B.T @ P @ B, N.T + B.T @ P @ A)
    return P, K
