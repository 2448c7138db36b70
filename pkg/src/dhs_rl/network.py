"""District heating network topology, thermal dynamics and steady-state dispatch."""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, Infeasible, InvalidTopology, SingularDiscretization
from .numerics import pseudoinverse

PRODUCER = "producer"
CONSUMER = "consumer"


@dataclass(frozen=True)
class HeatExchanger:
    id: str
    role: str
    volume: float
    flow: float


@dataclass(frozen=True)
class Pipe:
    source: str
    target: str
    flow: float


@dataclass(frozen=True)
class NetworkTopology:
    """Heat exchangers joined by producer-consumer pipes.

    Construction validates the invariants: positive volumes and flows,
    producer-consumer pipes, a connected graph and per-node flow conservation
    (incident pipe flows add up to the exchanger through-flow).
    """

    exchangers: tuple
    pipes: tuple
    rtol: float = field(default=1e-9, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "exchangers", tuple(self.exchangers))
        object.__setattr__(self, "pipes", tuple(self.pipes))
        self._validate()

    @property
    def ids(self):
        return [hx.id for hx in self.exchangers]

    @property
    def size(self):
        return len(self.exchangers)

    def index(self, hx_id):
        return self.ids.index(hx_id)

    def _validate(self):
        if not self.exchangers:
            raise InvalidTopology("network has no heat exchangers")
        ids = self.ids
        if len(set(ids)) != len(ids):
            raise InvalidTopology("duplicate heat exchanger ids")
        roles = {}
        for hx in self.exchangers:
            if hx.role not in (PRODUCER, CONSUMER):
                raise InvalidTopology(f"{hx.id}: unknown role {hx.role!r}", node=hx.id)
            if not hx.volume > 0:
                raise InvalidTopology(f"{hx.id}: volume must be positive", node=hx.id)
            if not hx.flow > 0:
                raise InvalidTopology(f"{hx.id}: through-flow must be positive", node=hx.id)
            roles[hx.id] = hx.role
        incident = dict.fromkeys(ids, 0.0)
        adjacency = {i: set() for i in ids}
        for p in self.pipes:
            for end in (p.source, p.target):
                if end not in roles:
                    raise InvalidTopology(f"pipe references unknown exchanger {end!r}", node=end)
            if p.source == p.target:
                raise InvalidTopology(f"pipe {p.source}->{p.target} has identical endpoints",
                                      node=p.source)
            if roles[p.source] == roles[p.target]:
                raise InvalidTopology(
                    f"pipe {p.source}->{p.target} must connect a producer and a consumer",
                    node=p.source)
            if not p.flow > 0:
                raise InvalidTopology(f"pipe {p.source}->{p.target} flow must be positive",
                                      node=p.source)
            incident[p.source] += p.flow
            incident[p.target] += p.flow
            adjacency[p.source].add(p.target)
            adjacency[p.target].add(p.source)
        for hx in self.exchangers:
            if abs(incident[hx.id] - hx.flow) > self.rtol * max(hx.flow, 1.0):
                raise InvalidTopology(
                    f"{hx.id}: flow conservation violated (pipes carry {incident[hx.id]:.12g}, "
                    f"through-flow is {hx.flow:.12g})", node=hx.id)
        seen = {ids[0]}
        stack = [ids[0]]
        while stack:
            for nb in adjacency[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if len(seen) != len(ids):
            missing = sorted(set(ids) - seen)
            raise InvalidTopology(f"network is not connected: {missing} unreachable",
                                  node=missing[0])

    @property
    def volumes(self):
        return np.array([hx.volume for hx in self.exchangers])

    def scaled(self, factor):
        """Copy with every pipe and through-flow multiplied by ``factor``."""
        if not factor > 0:
            raise ValueError("flow scaling factor must be positive")
        return replace(
            self,
            exchangers=tuple(replace(hx, flow=hx.flow * factor) for hx in self.exchangers),
            pipes=tuple(replace(p, flow=p.flow * factor) for p in self.pipes),
        )

    @classmethod
    def from_pipes(cls, exchangers, pipes):
        """Build a topology whose through-flows are the sums of incident pipe flows.

        ``exchangers`` is an iterable of ``(id, role, volume)`` and ``pipes`` of
        ``(source, target, flow)``.
        """
        pipes = tuple(Pipe(*p) for p in pipes)
        flows = {}
        for p in pipes:
            flows[p.source] = flows.get(p.source, 0.0) + p.flow
            flows[p.target] = flows.get(p.target, 0.0) + p.flow
        hxs = tuple(HeatExchanger(i, role, vol, flows.get(i, 0.0)) for i, role, vol in exchangers)
        return cls(hxs, pipes)


def build_Lq(topology):
    """Kirchhoff flow matrix: ``-q_i`` on the diagonal, pipe flows off it."""
    n = topology.size
    Lq = np.zeros((n, n))
    pos = {hx_id: k for k, hx_id in enumerate(topology.ids)}
    for k, hx in enumerate(topology.exchangers):
        Lq[k, k] = -hx.flow
    for p in topology.pipes:
        i, j = pos[p.source], pos[p.target]
        Lq[i, j] += p.flow
        Lq[j, i] += p.flow
    return Lq


@dataclass(frozen=True)
class DhsPlant:
    """Euler-discretised temperature dynamics ``T+ = Ad T + Bd (P + P_dis)``."""

    Ad: np.ndarray
    Bd: np.ndarray
    tau: float
    E: np.ndarray
    Lq: np.ndarray

    @property
    def size(self):
        return self.Ad.shape[0]


def discretize(topology, tau):
    """Zero-order-hold/Euler discretisation with sampling period ``tau``."""
    if not tau > 0:
        raise ValueError("sampling period must be positive")
    Lq = build_Lq(topology)
    E = np.diag(1.0 / topology.volumes)
    M = tau * E @ Lq
    eig = np.linalg.eigvals(M)
    if np.any(np.abs(eig + 1.0) < 1e-10):
        raise SingularDiscretization(
            f"-1 is an eigenvalue of tau*E*Lq for tau={tau!r}; the discrete plant is singular")
    n = topology.size
    return DhsPlant(Ad=np.eye(n) + M, Bd=tau * E, tau=float(tau), E=E, Lq=Lq)


def step(plant, T, P, P_dis):
    """One step of the discrete plant."""
    T, P, P_dis = (np.asarray(x, dtype=float) for x in (T, P, P_dis))
    n = plant.size
    if T.shape != (n,) or P.shape != (n,) or P_dis.shape != (n,):
        raise DimensionMismatch(f"expected vectors of length {n}")
    return plant.Ad @ T + plant.Bd @ (P + P_dis)


def _diag(M, name):
    M = np.asarray(M, dtype=float)
    d = M if M.ndim == 1 else np.diag(M)
    if M.ndim == 2 and not np.allclose(M, np.diag(d)):
        raise ValueError(f"{name} must be diagonal")
    if np.any(d <= 0):
        raise ValueError(f"{name} must be strictly positive")
    return d


def build_FM(F):
    """Marginal-cost difference matrix, row ``i`` = ``f_i e_i - f_{i+1} e_{i+1}``."""
    f = _diag(F, "F")
    n = f.size
    if n < 2:
        raise ValueError("F^M needs at least two nodes")
    FM = np.zeros((n - 1, n))
    idx = np.arange(n - 1)
    FM[idx, idx] = f[:-1]
    FM[idx, idx + 1] = -f[1:]
    return FM


@dataclass(frozen=True)
class DispatchSolution:
    P_star: np.ndarray
    T_star: np.ndarray
    z: float


def _lq_of(network):
    if isinstance(network, NetworkTopology):
        return build_Lq(network)
    if isinstance(network, DhsPlant):
        return network.Lq
    return np.asarray(network, dtype=float)


def left_nullspace(M, rtol=1e-10):
    """Orthonormal basis (columns) of ``{w : w^T M = 0}``."""
    U, s, _ = np.linalg.svd(M)
    rank = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    return U[:, rank:]


def solve_dispatch(network, F, G, P_dis):
    """Optimal steady-state powers and temperatures.

    ``P*`` minimises ``0.5 P^T F P`` subject to ``Lq T = -(P + P_dis)`` being
    solvable; ``T*`` is the minimum ``G``-norm point of the resulting
    temperature family ``-Lq^+ (P_dis + P*) + z 1``.

    Args:
        network: ``NetworkTopology``, ``DhsPlant`` or the matrix ``Lq`` itself.
        F, G: Positive diagonal cost weights (matrices or vectors).
        P_dis: Disturbance vector.
    """
    Lq = _lq_of(network)
    f = _diag(F, "F")
    g = _diag(G, "G")
    P_dis = np.asarray(P_dis, dtype=float)
    n = Lq.shape[0]
    if P_dis.shape != (n,) or f.size != n or g.size != n:
        raise DimensionMismatch(f"expected length-{n} vectors")

    W = left_nullspace(Lq)
    if W.shape[1] == 0:
        P_star = np.zeros(n)
    else:
        FinvW = W / f[:, None]
        lam = np.linalg.solve(W.T @ FinvW, W.T @ P_dis)
        P_star = -FinvW @ lam
    T0 = -pseudoinverse(Lq) @ (P_dis + P_star)
    ones = np.ones(n)
    z = -float(g @ T0) / float(g.sum())
    T_star = T0 + z * ones
    scale = max(1.0, np.max(np.abs(P_dis)), np.max(np.abs(P_star)))
    if np.max(np.abs(Lq @ T_star + P_star + P_dis)) > 1e-8 * scale:
        raise Infeasible("no temperature profile balances the optimal powers")
    return DispatchSolution(P_star=P_star, T_star=T_star, z=z)


@dataclass(frozen=True)
class OptimalityReport:
    ok: bool
    marginal_cost: float
    weighted_sum: float
    balance: float

    @property
    def residuals(self):
        return {"marginal_cost": self.marginal_cost, "weighted_sum": self.weighted_sum,
                "balance": self.balance}


def check_optimality(P, T, F, G, tol=1e-8, Lq=None, P_dis=None):
    """Test the steady-state optimality conditions on ``(P, T)``.

    Checks equal marginal costs (``||F^M P||_inf``), zero weighted temperature
    sum (``|1^T G T|``) and, when ``Lq`` is supplied, the network balance
    ``||Lq T + P + P_dis||_inf``.
    """
    P = np.asarray(P, dtype=float)
    T = np.asarray(T, dtype=float)
    g = _diag(G, "G")
    if P.shape != T.shape or P.shape != g.shape:
        raise DimensionMismatch("P, T and G must share one dimension")
    fm = float(np.max(np.abs(build_FM(F) @ P))) if P.size > 1 else 0.0
    ws = abs(float(g @ T))
    if Lq is None:
        bal = 0.0
    else:
        d = np.zeros_like(P) if P_dis is None else np.asarray(P_dis, dtype=float)
        bal = float(np.max(np.abs(np.asarray(Lq) @ T + P + d)))
    return OptimalityReport(ok=fm <= tol and ws <= tol and bal <= tol,
                            marginal_cost=fm, weighted_sum=ws, balance=bal)
