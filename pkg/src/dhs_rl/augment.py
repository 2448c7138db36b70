"""Output/error signals and the disturbance-free augmented error dynamics.

The augmented state is ``eps_k = [T_k - T_{k-1}; e_{k-1}]`` and the input is
the power increment ``du_k = P_k - P_{k-1}``. Differencing removes constant
disturbances, so ``eps_{k+1} = A eps_k + B du_k`` and
``e_k = C eps_k + D du_k``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import AssumptionViolated, DimensionMismatch, HistoryTooShort
from .network import _diag, build_FM
from .numerics import matrix_rank, solve_discrete_lyapunov, spectral_radius


def error_maps(F, G):
    """Return ``(Lambda_p, Lambda_y, g)`` for the error ``e = Lambda_p P + Lambda_y 1^T G T``."""
    g = _diag(G, "G")
    n = g.size
    Lp = np.zeros((n, n))
    Lp[:-1] = build_FM(F)
    Ly = np.zeros((n, 1))
    Ly[-1, 0] = 1.0
    return Lp, Ly, g


def output_and_error(T, P, F, G):
    """Weighted temperature sum ``y`` and optimality error vector ``e``."""
    T = np.asarray(T, dtype=float)
    P = np.asarray(P, dtype=float)
    Lp, Ly, g = error_maps(F, G)
    if T.shape != g.shape or P.shape != g.shape:
        raise DimensionMismatch("T and P must match the dimension of G")
    y = float(g @ T)
    e = Lp @ P + Ly[:, 0] * y
    return y, e


@dataclass(frozen=True)
class AugmentedSystem:
    A_eps: np.ndarray
    B_eps: np.ndarray
    C_eps: np.ndarray
    D_eps: np.ndarray
    Q_eps: np.ndarray
    N_eps: np.ndarray
    R_eps: np.ndarray
    Qbar: np.ndarray
    Q_e: np.ndarray
    R_e: np.ndarray

    @property
    def n(self):
        return self.A_eps.shape[0]

    @property
    def m(self):
        return self.B_eps.shape[1]

    @property
    def n_T(self):
        return self.m

    def closed_loop(self, K):
        return self.A_eps - self.B_eps @ K

    def is_stabilizing(self, K):
        return spectral_radius(self.closed_loop(K)) < 1.0

    def phi(self, K):
        """Transition matrix of ``[eps; du] -> [eps+; -K eps+]``."""
        top = np.hstack([self.A_eps, self.B_eps])
        return np.vstack([top, -K @ top])

    def q_eff(self, K):
        return self.Q_eps - self.N_eps @ K - K.T @ self.N_eps.T + K.T @ self.R_eps @ K

    def value_matrix(self, K):
        """``P^K`` from the closed-loop Lyapunov equation."""
        return solve_discrete_lyapunov(self.closed_loop(K), self.q_eff(K))

    def q_matrix(self, K):
        """Model-based Q-function matrix ``Theta^K = Qbar + phi^T Theta^K phi``."""
        return solve_discrete_lyapunov(self.phi(K), self.Qbar)

    def theta_from_value(self, P):
        A, B = self.A_eps, self.B_eps
        return np.block([
            [self.Q_eps + A.T @ P @ A, self.N_eps + A.T @ P @ B],
            [self.N_eps.T + B.T @ P @ A, self.R_eps + B.T @ P @ B],
        ])

    def step(self, eps, du, w=0.0):
        nxt = self.A_eps @ eps + self.B_eps @ du
        if w:
            nxt = nxt + w * eps * eps
        return nxt

    def error(self, eps, du):
        return self.C_eps @ eps + self.D_eps @ du

    def stage_cost(self, eps, du):
        """``0.5 * [eps; du]^T Qbar [eps; du]``."""
        z = np.concatenate([eps, du])
        return 0.5 * float(z @ self.Qbar @ z)


def assumption_matrix(plant, F, G):
    """The ``2 n_T`` square matrix whose full rank makes the augmented pair controllable."""
    Lp, Ly, g = error_maps(F, G)
    tEL = plant.Ad - np.eye(plant.size)
    return np.block([[tEL, plant.Bd], [Ly @ g[None, :], Lp]])


def build_augmented(plant, F, G, Q_e, R_e):
    """Assemble the augmented dynamics and quadratic cost matrices.

    Raises:
        AssumptionViolated: if the controllability rank condition fails.
    """
    n_T = plant.size
    Q_e = np.atleast_2d(np.asarray(Q_e, dtype=float))
    R_e = np.atleast_2d(np.asarray(R_e, dtype=float))
    if Q_e.shape != (n_T, n_T) or R_e.shape != (n_T, n_T):
        raise DimensionMismatch(f"Q_e and R_e must be {n_T}x{n_T}")
    for name, W in (("Q_e", Q_e), ("R_e", R_e)):
        try:
            np.linalg.cholesky(0.5 * (W + W.T))
        except np.linalg.LinAlgError:
            raise ValueError(f"{name} must be positive definite") from None

    Lp, Ly, g = error_maps(F, G)
    rank = matrix_rank(assumption_matrix(plant, F, G))
    if rank < 2 * n_T:
        raise AssumptionViolated(
            f"controllability matrix has rank {rank} < {2 * n_T}", rank=rank)

    I = np.eye(n_T)
    LyG = Ly @ g[None, :]
    A = np.block([[plant.Ad, np.zeros((n_T, n_T))], [LyG, I]])
    B = np.vstack([plant.Bd, Lp])
    C = np.hstack([LyG, I])
    D = Lp.copy()
    Q_eps = C.T @ Q_e @ C
    N_eps = C.T @ Q_e @ D
    R_eps = R_e + D.T @ Q_e @ D
    Qbar = np.block([[Q_eps, N_eps], [N_eps.T, R_eps]])
    return AugmentedSystem(A_eps=A, B_eps=B, C_eps=C, D_eps=D, Q_eps=Q_eps, N_eps=N_eps,
                           R_eps=R_eps, Qbar=0.5 * (Qbar + Qbar.T), Q_e=Q_e, R_e=R_e)


def lift_trajectory(T_hist, P_hist, F, G):
    """Map physical histories to augmented pairs ``(eps_k, du_k)``.

    Uses ``T_{-1} = T_0`` and ``P_{-1} = P_0``, so ``eps_0 = [0; e_0]`` and
    ``du_0 = 0``.

    Returns:
        ``(eps, du)`` arrays of shapes ``(K, 2 n_T)`` and ``(K, n_T)``.
    """
    T_hist = np.asarray(T_hist, dtype=float)
    P_hist = np.asarray(P_hist, dtype=float)
    if T_hist.shape != P_hist.shape:
        raise DimensionMismatch("T and P histories must be aligned")
    if T_hist.ndim != 2 or T_hist.shape[0] < 2:
        raise HistoryTooShort("need at least two samples to difference")
    Lp, Ly, g = error_maps(F, G)
    e = P_hist @ Lp.T + np.outer(T_hist @ g, Ly[:, 0])
    T_prev = np.vstack([T_hist[:1], T_hist[:-1]])
    P_prev = np.vstack([P_hist[:1], P_hist[:-1]])
    e_prev = np.vstack([e[:1], e[:-1]])
    eps = np.hstack([T_hist - T_prev, e_prev])
    return eps, P_hist - P_prev
