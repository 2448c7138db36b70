"""Model-based optimal regulator and the identify-then-solve comparator."""

from .learner import check_pe
from .numerics import pseudoinverse, solve_lqr


def optimal_regulator(aug):
    """Riccati-optimal gain ``K*``, value matrix ``P*`` and Q-matrix ``Theta*``."""
    P, K = solve_lqr(aug.A_eps, aug.B_eps, aug.Q_eps, aug.N_eps, aug.R_eps)
    return K, P, aug.theta_from_value(P)


def identify(batch):
    """Ordinary least squares ``[A, B] = eps_next [eps; du]^+`` on the applied inputs."""
    check_pe(batch)
    AB = batch.successors @ pseudoinverse(batch.Z)
    n = batch.n
    return AB[:, :n], AB[:, n:]


def indirect_controller(batch, Qbar):
    """LQR gain of the model identified from ``batch`` under the true costs.

    The regression uses the noisy applied increments stored in the batch;
    excitation is what makes ``[A, B]`` identifiable.
    """
    n = batch.n
    A_hat, B_hat = identify(batch)
    _, K = solve_lqr(A_hat, B_hat, Qbar[:n, :n], Qbar[:n, n:], Qbar[n:, n:])
    return K
