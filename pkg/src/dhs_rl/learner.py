"""On-policy Q-learning policy iteration for the augmented error system.

Each iteration applies ``du_k = -K_i eps_k + es_k`` for a batch of samples,
evaluates the Q-function matrix ``Theta`` of ``K_i`` from the batch alone and
improves the gain greedily, ``K_{i+1} = Theta_uu^{-1} Theta_ue``.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DestabilizingUpdate,
    IllConditioned,
    IterationCapExceeded,
    NotContractive,
    NotStabilizable,
    RankDeficient,
    SingularBlock,
    ZeroReference,
)
from .numerics import (
    matrix_rank,
    policy_value,
    pseudoinverse,
    solve_discrete_lyapunov,
    solve_lqr,
    spectral_radius,
)

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12


@dataclass(frozen=True)
class ProbingNoiseConfig:
    """Decaying multi-sine exploration signal.

    ``num_sinusoids`` frequencies per channel are drawn from an evenly spaced
    grid on ``[freq_low, freq_high]`` (rad/step), interleaved across channels so
    no two channels share a frequency. Even spacing keeps the short-window
    Hankel matrix well conditioned; clustered low frequencies look alike over
    a batch of a few dozen samples. Phases come from ``seed``.
    """

    channels: int
    num_sinusoids: int
    amplitude: float = 0.01
    decay: float = 0.999
    freq_low: float = 0.01 * math.pi
    freq_high: float = 0.9 * math.pi
    seed: int = 0
    random_phases: bool = True
    frequencies: np.ndarray = field(init=False, repr=False, compare=False)
    phases: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.channels < 1 or self.num_sinusoids < 1:
            raise ValueError("need at least one channel and one sinusoid")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must lie in (0, 1]")
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        total = self.channels * self.num_sinusoids
        grid = np.linspace(self.freq_low, self.freq_high, total)
        freqs = grid.reshape(self.num_sinusoids, self.channels).T
        if self.random_phases:
            rng = np.random.default_rng(self.seed)
            phases = rng.uniform(0.0, 2.0 * math.pi, size=(self.channels, self.num_sinusoids))
        else:
            phases = np.zeros((self.channels, self.num_sinusoids))
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "phases", phases)

    @classmethod
    def for_system(cls, n, m, **kwargs):
        """Config with enough sinusoids per channel for excitation of order ``n + 1``."""
        kwargs.setdefault("num_sinusoids", minimum_sinusoids(n))
        return cls(channels=m, **kwargs)

    def disabled(self):
        return replace(self, amplitude=0.0)


def minimum_sinusoids(n):
    """Sinusoids per channel giving persistence of excitation of order ``n + 1``."""
    return math.ceil((n + 1) / 2)


def probing_noise(config, k):
    """Exploration vector ``es_k`` for global step ``k``."""
    if config.amplitude == 0.0:
        return np.zeros(config.channels)
    s = np.sin(config.frequencies * k + config.phases).sum(axis=1)
    return config.amplitude * config.decay ** k * s


def required_samples(n, m):
    """Samples per iteration, ``(n + 1) m + n``."""
    if n < 1 or m < 1:
        raise ValueError("dimensions must be positive")
    return (n + 1) * m + n


@dataclass
class DataBatch:
    """Samples ``z_k = [eps_k; du_k]`` (columns of ``Z``) and successors
    ``zeta_k = [eps_{k+1}; -K eps_{k+1}]`` (columns of ``Zeta``) collected under ``K``."""

    Z: np.ndarray
    Zeta: np.ndarray
    K: np.ndarray
    start: int = 0

    @property
    def n(self):
        return self.K.shape[1]

    @property
    def m(self):
        return self.K.shape[0]

    @property
    def size(self):
        return self.Z.shape[1]

    @property
    def states(self):
        return self.Z[:self.n]

    @property
    def inputs(self):
        return self.Z[self.n:]

    @property
    def successors(self):
        return self.Zeta[:self.n]

    def extend(self, other):
        if not np.array_equal(self.K, other.K):
            raise ValueError("cannot merge batches collected under different gains")
        return DataBatch(np.hstack([self.Z, other.Z]), np.hstack([self.Zeta, other.Zeta]),
                         self.K, self.start)

    @classmethod
    def concatenate(cls, batches):
        """Stack batches collected under (possibly) different gains; ``K`` is the last one."""
        batches = list(batches)
        return cls(np.hstack([b.Z for b in batches]), np.hstack([b.Zeta for b in batches]),
                   batches[-1].K, batches[0].start)


@dataclass(frozen=True)
class RankReport:
    rank: int
    required: int

    @property
    def ok(self):
        return self.rank == self.required


def check_pe(batch):
    """Rank of the sample matrix ``Z``; raises ``RankDeficient`` below ``n + m``."""
    required = batch.n + batch.m
    rank = matrix_rank(batch.Z) if batch.size else 0
    if rank < required:
        raise RankDeficient(f"sample matrix has rank {rank}, need {required}",
                            rank=rank, required=required)
    return RankReport(rank, required)


def estimate_transition(batch):
    """Least-squares ``phi`` with ``Zeta ~= phi Z``."""
    return batch.Zeta @ pseudoinverse(batch.Z)


def _sym_basis(d):
    return np.triu_indices(d)


def _quad_features(X):
    """Rows ``[x_i x_j (2 if i != j else 1)]`` for each column ``x`` of ``X``."""
    d = X.shape[0]
    iu = _sym_basis(d)
    w = np.where(iu[0] == iu[1], 1.0, 2.0)
    return (X[iu[0]] * X[iu[1]]).T * w


def scalar_regression(batch, Qbar):
    """Linear system ``Phi theta = c`` in the upper-triangular entries of ``Theta``."""
    Phi = _quad_features(batch.Z) - _quad_features(batch.Zeta)
    c = np.einsum("ik,ij,jk->k", batch.Z, Qbar, batch.Z)
    return Phi, c


def scalar_ls_rank_ok(batch):
    d = batch.n + batch.m
    Phi = _quad_features(batch.Z) - _quad_features(batch.Zeta)
    return matrix_rank(Phi) == d * (d + 1) // 2


def estimate_theta(batch, Qbar, method="matrix"):
    """Estimate ``Theta^K`` of the gain the batch was collected under.

    ``"matrix"`` reconstructs ``phi`` from ``Zeta Z^+`` and solves the
    Lyapunov equation ``Theta = Qbar + phi^T Theta phi``. ``"scalar-ls"``
    solves the per-sample equations
    ``z^T Theta z - zeta^T Theta zeta = z^T Qbar z`` by least squares over the
    symmetric unknowns and needs at least ``d (d + 1) / 2`` informative samples.

    Raises:
        RankDeficient, IllConditioned, NotContractive.
    """
    d = batch.n + batch.m
    check_pe(batch)
    if method == "matrix":
        s = np.linalg.svd(batch.Z, compute_uv=False)
        if s[0] / s[d - 1] > MAX_CONDITION:
            raise IllConditioned(f"sample matrix condition number {s[0] / s[d - 1]:.3g}")
        phi = estimate_transition(batch)
        try:
            theta = solve_discrete_lyapunov(phi, Qbar)
        except NotContractive as exc:
            raise NotContractive("estimated closed loop is not contractive; "
                                 "the policy is not stabilizing", radius=exc.radius) from exc
    elif method == "scalar-ls":
        Phi, c = scalar_regression(batch, Qbar)
        unknowns = d * (d + 1) // 2
        rank = matrix_rank(Phi)
        if rank < unknowns:
            raise RankDeficient(f"regression has rank {rank}, need {unknowns}",
                                rank=rank, required=unknowns)
        s = np.linalg.svd(Phi, compute_uv=False)
        if s[0] / s[-1] > MAX_CONDITION:
            raise IllConditioned(f"regression condition number {s[0] / s[-1]:.3g}")
        theta_vec = np.linalg.lstsq(Phi, c, rcond=None)[0]
        theta = np.zeros((d, d))
        theta[_sym_basis(d)] = theta_vec
        theta = theta + np.triu(theta, 1).T
    else:
        raise ValueError(f"unknown estimation method {method!r}")
    return QMatrix(theta, batch.n)


@dataclass(frozen=True)
class QMatrix:
    Theta: np.ndarray
    n: int

    @property
    def Theta_ee(self):
        return self.Theta[:self.n, :self.n]

    @property
    def Theta_ue(self):
        return self.Theta[self.n:, :self.n]

    @property
    def Theta_uu(self):
        return self.Theta[self.n:, self.n:]


def improve_policy(theta, model=None):
    """Greedy gain ``Theta_uu^{-1} Theta_ue``.

    If ``model = (A, B)`` is given, the new gain must stabilize it.
    """
    if not isinstance(theta, QMatrix):
        raise TypeError("theta must be a QMatrix")
    uu = 0.5 * (theta.Theta_uu + theta.Theta_uu.T)
    try:
        L = np.linalg.cholesky(uu)
    except np.linalg.LinAlgError:
        raise SingularBlock("Theta_uu is not positive definite") from None
    K = np.linalg.solve(L.T, np.linalg.solve(L, theta.Theta_ue))
    if model is not None:
        A, B = model
        rho = spectral_radius(A - B @ K)
        if rho >= 1.0:
            raise DestabilizingUpdate(f"improved gain gives spectral radius {rho:.6g}")
    return K


def initial_controller(nominal_aug):
    """Stabilizing seed gain: the LQR gain of the nominal augmented model."""
    a = nominal_aug
    _, K0 = solve_lqr(a.A_eps, a.B_eps, a.Q_eps, a.N_eps, a.R_eps)
    if not a.is_stabilizing(K0):
        raise NotStabilizable("nominal LQR gain does not stabilize the nominal model")
    return K0


def collect_batch(plant, K, noise, samples, gain_id=None):
    """Run ``samples`` on-policy steps on ``plant`` and return the batch.

    ``plant`` must expose ``k``, ``state()`` and ``advance(du, gain_id)``.
    """
    n = K.shape[1]
    m = K.shape[0]
    Z = np.empty((n + m, samples))
    Zeta = np.empty((n + m, samples))
    start = plant.k
    eps = plant.state()
    for j in range(samples):
        du = -K @ eps + probing_noise(noise, plant.k)
        nxt = plant.advance(du, gain_id)
        Z[:n, j] = eps
        Z[n:, j] = du
        Zeta[:n, j] = nxt
        Zeta[n:, j] = -K @ nxt
        eps = nxt
    return DataBatch(Z, Zeta, K.copy(), start)


@dataclass
class IterationRecord:
    iteration: int
    K: np.ndarray
    theta: np.ndarray
    K_next: np.ndarray
    gain_delta: float
    distance: float
    spectral_radius: float
    start: int
    samples: int
    value: np.ndarray = None


@dataclass
class PolicyIterationResult:
    K: np.ndarray
    records: list
    converged: bool
    batches: list
    end_step: int

    @property
    def iterations(self):
        return len(self.records)


def gain_distance(K, K_ref):
    """Normalised Frobenius distance ``||K - K_ref||_F / ||K_ref||_F``."""
    K = np.asarray(K, dtype=float)
    K_ref = np.asarray(K_ref, dtype=float)
    if K.shape != K_ref.shape:
        raise ValueError("gains must share a shape")
    ref = np.linalg.norm(K_ref)
    if ref == 0.0:
        raise ZeroReference("reference gain is zero")
    return float(np.linalg.norm(K - K_ref) / ref)


def run_policy_iteration(plant, K0, Qbar, noise, eps=1e-9, max_iter=50, method="matrix",
                         K_ref=None, model=None, max_chunks=10):
    """Algorithm loop: collect a batch under ``K_i``, estimate, improve, repeat.

    Args:
        plant: Simulation handle (see :func:`collect_batch`).
        K0: Initial gain; must stabilize the plant.
        Qbar: Stage-cost matrix of ``[eps; du]``.
        noise: :class:`ProbingNoiseConfig`.
        eps: Stop once ``||K_{i+1} - K_i||_F < eps``.
        max_iter: Iteration cap.
        method: ``"matrix"`` or ``"scalar-ls"``.
        K_ref: Optional optimal gain, only used to log distances.
        model: Optional true ``(A, B)``; used to refuse a non-stabilizing
            ``K0`` and to log true spectral radii and value matrices.
        max_chunks: Batches are extended by ``N`` samples at a time, up to
            ``max_chunks * N``, until they are informative enough.

    Returns:
        :class:`PolicyIterationResult`.

    Raises:
        IterationCapExceeded: carries the partial result in ``.result``.
    """
    K = np.array(K0, dtype=float)
    m, n = K.shape
    N = required_samples(n, m)
    if model is not None:
        rho = spectral_radius(model[0] - model[1] @ K)
        if rho >= 1.0:
            raise NotStabilizable(f"initial gain is not stabilizing (spectral radius {rho:.6g})")

    records = []
    batches = []
    for i in range(max_iter):
        gain_id = i
        batch = collect_batch(plant, K, noise, N, gain_id)
        chunks = 1
        while True:
            try:
                if method == "scalar-ls" and not scalar_ls_rank_ok(batch):
                    raise RankDeficient("regression rank too low")
                theta = estimate_theta(batch, Qbar, method)
                break
            except RankDeficient:
                if chunks >= max_chunks:
                    raise
                batch = batch.extend(collect_batch(plant, K, noise, N, gain_id))
                chunks += 1
        batches.append(batch)
        phi_hat = estimate_transition(batch)
        est_model = (phi_hat[:n, :n], phi_hat[:n, n:])
        K_next = improve_policy(theta, model=est_model)
        delta = float(np.linalg.norm(K_next - K))
        if model is not None:
            rho = spectral_radius(model[0] - model[1] @ K)
        else:
            rho = spectral_radius(est_model[0] - est_model[1] @ K)
        value = None
        if model is not None:
            A, B = model
            Qe, Ne, Re = Qbar[:n, :n], Qbar[:n, n:], Qbar[n:, n:]
            value = policy_value(A, B, Qe, Ne, Re, K)
        records.append(IterationRecord(
            iteration=i, K=K.copy(), theta=theta.Theta, K_next=K_next, gain_delta=delta,
            distance=gain_distance(K_next, K_ref) if K_ref is not None else float("nan"),
            spectral_radius=rho, start=batch.start, samples=batch.size, value=value,
        ))
        logger.debug("iteration %d: |dK|=%.3e rho=%.6f samples=%d", i, delta, rho, batch.size)
        K = K_next
        if delta < eps:
            return PolicyIterationResult(K, records, True, batches, plant.k)
    result = PolicyIterationResult(K, records, False, batches, plant.k)
    raise IterationCapExceeded(f"no convergence within {max_iter} iterations", result=result)
