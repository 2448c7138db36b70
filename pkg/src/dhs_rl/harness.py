"""Closed-loop simulation of the heating network and the scripted experiments."""

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .augment import build_augmented, error_maps
from .baseline import indirect_controller, optimal_regulator
from .errors import Diverged, IterationCapExceeded, NotStabilizable
from .learner import (
    DataBatch,
    PolicyIterationResult,
    ProbingNoiseConfig,
    gain_distance,
    initial_controller,
    minimum_sinusoids,
    probing_noise,
    required_samples,
    run_policy_iteration,
)
from .network import check_optimality, discretize, solve_dispatch
from .numerics import policy_value, spectral_radius

logger = logging.getLogger(__name__)

__all__ = [
    "ClosedLoopPlant", "Scenario", "TrajectoryLog", "build_scenario", "simulate",
    "gain_distance", "stage_cost_series", "run_experiment", "EXPERIMENTS",
]


@dataclass
class Scenario:
    """Everything derived from a config: true and nominal models plus reference gains."""

    config: object
    plant: object
    aug: object
    nominal_aug: object
    K0: np.ndarray
    K_star: np.ndarray
    P_star: np.ndarray
    Theta_star: np.ndarray
    noise: ProbingNoiseConfig


def build_scenario(config):
    """True (varied) model, nominal model, seed gain ``K0`` and oracle ``K*``.

    Raises:
        NotStabilizable: if ``K0`` does not stabilize the varied plant.
    """
    c = config
    nominal_plant = discretize(c.topology, c.tau)
    nominal_aug = build_augmented(nominal_plant, c.F, c.G, c.Q_e, c.R_e)
    plant = discretize(c.topology.scaled(1.0 + c.variation), c.tau)
    aug = build_augmented(plant, c.F, c.G, c.Q_e, c.R_e)
    K0 = initial_controller(nominal_aug)
    rho = spectral_radius(aug.closed_loop(K0))
    if rho >= 1.0:
        raise NotStabilizable(
            f"nominal gain does not stabilize the plant with variation {c.variation:+g} "
            f"(spectral radius {rho:.6g})")
    K_star, P_star, Theta_star = optimal_regulator(aug)
    n, m = aug.n, aug.m
    noise = ProbingNoiseConfig(
        channels=m,
        num_sinusoids=c.num_sinusoids or minimum_sinusoids(n),
        amplitude=c.noise_amplitude, decay=c.noise_decay,
        freq_low=c.freq_low, freq_high=c.freq_high, seed=c.seed)
    return Scenario(c, plant, aug, nominal_aug, K0, K_star, P_star, Theta_star, noise)


class ClosedLoopPlant:
    """Simulation handle driven one input increment at a time.

    With ``w == 0`` the physical temperatures evolve through the discrete
    plant and the augmented state is measured by differencing. With
    ``w > 0`` the augmented recursion itself is integrated with the extra
    ``w * eps**2`` term, and temperatures and powers are accumulated from
    the increments.
    """

    def __init__(self, plant, aug, F, G, schedule, T0=None, P0=None, w=0.0, bound=1e6):
        self.plant = plant
        self.aug = aug
        self.F = F
        self.G = G
        self.schedule = schedule
        self.w = float(w)
        self.bound = bound
        n_T = plant.size
        self.T = np.zeros(n_T) if T0 is None else np.array(T0, dtype=float)
        self.P = np.zeros(n_T) if P0 is None else np.array(P0, dtype=float)
        self.T_prev = self.T.copy()
        self.P_prev = self.P.copy()
        self.k = 0
        self._Lp, Ly, g = error_maps(F, G)
        self._Lyg = Ly[:, 0]
        self._g = g
        e0 = self._error(self.T, self.P)
        self._eps = np.concatenate([np.zeros(n_T), e0])
        self.rows = []

    def _error(self, T, P):
        return self._Lp @ P + self._Lyg * float(self._g @ T)

    def state(self):
        if self.w:
            return self._eps.copy()
        e_prev = self._error(self.T_prev, self.P_prev)
        return np.concatenate([self.T - self.T_prev, e_prev])

    def advance(self, du, gain_id=None):
        """Apply ``P_k = P_{k-1} + du`` and step to ``k + 1``; returns ``eps_{k+1}``."""
        du = np.asarray(du, dtype=float)
        k = self.k
        eps = self.state()
        P_new = self.P + du
        d_now = self.schedule.at(k)
        a = self.aug
        if self.w:
            e_now = a.error(eps, du)
            nxt = a.step(eps, du, self.w)
            n_T = self.plant.size
            if k == 0:
                inj = (self.plant.Ad - np.eye(n_T)) @ self.T + self.plant.Bd @ (self.P_prev + d_now)
            else:
                inj = self.plant.Bd @ (d_now - self.schedule.at(k - 1))
            nxt[:n_T] += inj
            T_next = self.T + nxt[:n_T]
            self._eps = nxt
        else:
            e_now = self._error(self.T, P_new)
            T_next = self.plant.Ad @ self.T + self.plant.Bd @ (P_new + d_now)
        cost = 0.5 * float(e_now @ a.Q_e @ e_now + du @ a.R_e @ du)
        self.rows.append((k, self.T.copy(), P_new.copy(), e_now, du.copy(), cost,
                          -1 if gain_id is None else gain_id, eps))
        self.T_prev, self.T = self.T, T_next
        self.P_prev, self.P = P_new, P_new
        self.k = k + 1
        if not np.all(np.isfinite(T_next)) or np.max(np.abs(T_next)) > self.bound:
            raise Diverged(f"temperature deviation exceeded {self.bound:g} at step {self.k}",
                           step=self.k)
        return self.state()

    def run_fixed(self, K, steps, gain_id=None, noise=None):
        for _ in range(steps):
            eps = self.state()
            du = -K @ eps
            if noise is not None:
                du = du + probing_noise(noise, self.k)
            self.advance(du, gain_id)


@dataclass
class TrajectoryLog:
    k: np.ndarray
    T: np.ndarray
    P: np.ndarray
    e: np.ndarray
    du: np.ndarray
    eps: np.ndarray
    stage_cost: np.ndarray
    gain_id: np.ndarray
    K_final: np.ndarray
    scenario: Scenario
    learning: object = None
    first_update: int = None
    extras: dict = field(default_factory=dict)

    @property
    def horizon(self):
        return self.k.size

    def final_optimality(self, tol=1e-6):
        c = self.scenario.config
        d = c.disturbance.at(self.horizon - 1)
        return check_optimality(self.P[-1], self.T[-1], c.F, c.G, tol=tol,
                                Lq=self.scenario.plant.Lq, P_dis=d)

    def dispatch_error(self):
        """Max deviation of the final ``(P, T)`` from the dispatch oracle."""
        c = self.scenario.config
        sol = solve_dispatch(self.scenario.plant, c.F, c.G, c.disturbance.at(self.horizon - 1))
        return (float(np.max(np.abs(self.P[-1] - sol.P_star))),
                float(np.max(np.abs(self.T[-1] - sol.T_star))))

    def rows(self):
        for i in range(self.horizon):
            yield ([int(self.k[i])] + list(self.T[i]) + list(self.P[i]) + list(self.e[i])
                   + list(self.du[i]) + [self.stage_cost[i], int(self.gain_id[i])])

    def header(self):
        n = self.T.shape[1]
        cols = ["k"]
        for name in ("T", "P", "e", "du"):
            cols += [f"{name}_{i + 1}" for i in range(n)]
        return cols + ["stage_cost", "gain_id"]


def _finish(handle, scenario, K_final, learning=None, first_update=None):
    rows = handle.rows
    return TrajectoryLog(
        k=np.array([r[0] for r in rows]),
        T=np.array([r[1] for r in rows]),
        P=np.array([r[2] for r in rows]),
        e=np.array([r[3] for r in rows]),
        du=np.array([r[4] for r in rows]),
        stage_cost=np.array([r[5] for r in rows]),
        gain_id=np.array([r[6] for r in rows]),
        eps=np.array([r[7] for r in rows]),
        K_final=K_final, scenario=scenario, learning=learning, first_update=first_update)


def simulate(config, mode="learn", K=None, scenario=None, noise=False, noise_until=None):
    """Run the true plant in closed loop for ``config.horizon`` steps.

    Modes:
        ``"learn"``: policy iteration from the nominal gain, then the learned
        gain frozen (noise off) for the rest of the horizon. With
        ``config.continuous`` the gain keeps updating batch after batch.
        ``"fixed"``: the supplied gain ``K`` throughout.
        ``"nominal"``: the nominal seed gain ``K0`` throughout.

    In the fixed-gain modes ``noise=True`` adds the scenario's probing noise,
    for steps ``k < noise_until`` only when that bound is given. Noise is
    indexed by ``k``, so a fixed-gain run can replay a learning run's excitation.

    Step 0 applies no increment (``P_{-1} = P_0``); it carries the onset of
    the disturbance and is never used as learning data.
    """
    sc = scenario or build_scenario(config)
    c = sc.config
    handle = ClosedLoopPlant(sc.plant, sc.aug, c.F, c.G, c.disturbance, c.T0, c.P0, c.w,
                             c.divergence_bound)
    handle.advance(np.zeros(sc.aug.m), gain_id=0)
    if mode == "learn":
        return _simulate_learning(handle, sc)
    if mode == "nominal":
        K = sc.K0
    elif mode != "fixed":
        raise ValueError(f"unknown controller mode {mode!r}")
    if K is None:
        raise ValueError("fixed mode needs a gain")
    remaining = c.horizon - handle.k
    if noise and noise_until is not None:
        excited = min(max(noise_until - handle.k, 0), remaining)
        handle.run_fixed(K, excited, gain_id=0, noise=sc.noise)
        handle.run_fixed(K, remaining - excited, gain_id=0)
    else:
        handle.run_fixed(K, remaining, gain_id=0, noise=sc.noise if noise else None)
    return _finish(handle, sc, np.asarray(K))


def _simulate_learning(handle, sc):
    c = sc.config
    model = (sc.aug.A_eps, sc.aug.B_eps)
    N = required_samples(sc.aug.n, sc.aug.m)
    if c.continuous:
        return _simulate_continuous(handle, sc, N)
    try:
        result = run_policy_iteration(handle, sc.K0, sc.aug.Qbar, sc.noise, eps=c.eps,
                                      max_iter=c.max_iter, method=c.method, K_ref=sc.K_star,
                                      model=model)
    except IterationCapExceeded as exc:
        exc.result.scenario = sc
        raise
    if handle.k > c.horizon:
        raise ValueError(f"horizon {c.horizon} ended during learning (step {handle.k})")
    handle.run_fixed(result.K, c.horizon - handle.k, gain_id=result.iterations)
    first = result.batches[0].start + result.batches[0].size
    return _finish(handle, sc, result.K, learning=result, first_update=first)


def _simulate_continuous(handle, sc, N):
    c = sc.config
    K = sc.K0
    results = []
    while handle.k + N <= c.horizon:
        res = run_policy_iteration(handle, K, sc.aug.Qbar, sc.noise, eps=np.inf, max_iter=1,
                                   method=c.method, K_ref=sc.K_star,
                                   model=(sc.aug.A_eps, sc.aug.B_eps))
        rec = res.records[0]
        rec.iteration = len(results)
        results.append((rec, res.batches[0]))
        K = res.K
    handle.run_fixed(K, c.horizon - handle.k, gain_id=len(results), noise=sc.noise)
    learning = PolicyIterationResult(K, [r for r, _ in results], False,
                                     [b for _, b in results], handle.k)
    first = results[0][1].start + results[0][1].size if results else None
    return _finish(handle, sc, K, learning=learning, first_update=first)


def stage_cost_series(log, Q_e, R_e):
    """Per-step ``0.5 (e^T Q_e e + du^T R_e du)``."""
    e, du = log.e, log.du
    return 0.5 * (np.einsum("ki,ij,kj->k", e, Q_e, e) + np.einsum("ki,ij,kj->k", du, R_e, du))


def lyapunov_series(log, K):
    """``V_k = eps_k^T P^K eps_k`` along the logged trajectory."""
    a = log.scenario.aug
    P = policy_value(a.A_eps, a.B_eps, a.Q_eps, a.N_eps, a.R_eps, K)
    return np.einsum("ki,ij,kj->k", log.eps, P, log.eps)


# --- experiments -----------------------------------------------------------------


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else None
    return obj


def trajectory_csv(log):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(log.header())
    for row in log.rows():
        writer.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def iterations_csv(entries):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["run", "iteration", "gain_delta", "distance", "spectral_radius"])
    for label, learning in entries:
        if learning is None:
            continue
        for r in learning.records:
            writer.writerow([label, r.iteration, _fmt(r.gain_delta), _fmt(r.distance),
                             _fmt(r.spectral_radius)])
    return buf.getvalue()


def _learning_summary(log):
    opt = log.final_optimality()
    dP, dT = log.dispatch_error()
    res = log.learning
    return {
        "variation": log.scenario.config.variation,
        "w": log.scenario.config.w,
        "iterations": res.iterations if res else 0,
        "converged": bool(res.converged) if res else False,
        "gain_distance": gain_distance(log.K_final, log.scenario.K_star),
        "residuals": opt.residuals,
        "final_error_inf": float(np.max(np.abs(log.e[-1]))),
        "optimal": bool(opt.ok),
        "dispatch_error_P": dP,
        "dispatch_error_T": dT,
        "cumulative_cost": float(log.stage_cost.sum()),
    }


def _label(v):
    return f"{v * 100:+g}%"


def _map(fn, items, workers):
    items = list(items)
    if workers and workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(fn, items))
    else:
        out = [fn(x) for x in items]
    return sorted(out, key=lambda r: r[0])


def _variation_job(args):
    key, cfg = args
    return key, simulate(cfg, "learn")


def exp_variation(config, workers=1):
    variations = config.source.get("variations", [-0.5, -0.2, -0.1, 0.1, 0.2, 0.5])
    jobs = [((i, v), config.with_overrides(variation=v)) for i, v in enumerate(variations)]
    results = _map(_variation_job, jobs, workers)
    runs = [(_label(v), log) for (_, v), log in results]
    summary = {"runs": {label: _learning_summary(log) for label, log in runs}}
    return summary, runs


def exp_disturbance(config, workers=1):
    log_ = simulate(config, "learn")
    s = _learning_summary(log_)
    s["peak_error_inf"] = float(np.max(np.abs(log_.e)))
    return {"runs": {"main": s}}, [("main", log_)]


def exp_nominal_comparison(config, workers=1):
    sc = build_scenario(config)
    learned = simulate(config, "learn", scenario=sc)
    # the nominal loop sees the same excitation for as long as learning ran
    nominal = simulate(config, "nominal", scenario=sc, noise=True,
                       noise_until=learned.learning.end_step)
    start = learned.first_update
    learned_cost = float(learned.stage_cost[start:].sum())
    nominal_cost = float(nominal.stage_cost[start:].sum())
    summary = {
        "runs": {"learned": _learning_summary(learned)},
        "window_start": start,
        "learned_cost": learned_cost,
        "nominal_cost": nominal_cost,
        "learned_below_nominal": learned_cost < nominal_cost,
    }
    return summary, [("learned", learned), ("nominal", nominal)]


def _indirect_job(args):
    key, cfg = args
    sc = build_scenario(cfg)
    log_ = simulate(cfg, "learn", scenario=sc)
    data = DataBatch.concatenate(log_.learning.batches)
    K_id = indirect_controller(data, sc.aug.Qbar)
    return key, (log_, K_id)


def exp_indirect_comparison(config, workers=1):
    weights = config.source.get("weights", [0.0, 1e-7, 1e-4])
    variations = config.source.get("variations", [-0.2, -0.1, 0.1, 0.2])
    jobs = []
    for i, w in enumerate(weights):
        for j, v in enumerate(variations):
            jobs.append(((i, j, w, v), config.with_overrides(w=w, variation=v)))
    results = _map(_indirect_job, jobs, workers)
    cells = {}
    runs = []
    for (_, _, w, v), (log_, K_id) in results:
        label = f"w={w:g},{_label(v)}"
        s = _learning_summary(log_)
        s["rl_distance"] = s["gain_distance"]
        s["id_distance"] = gain_distance(K_id, log_.scenario.K_star)
        s["rl_better"] = s["rl_distance"] < s["id_distance"]
        cells[label] = s
        runs.append((label, log_))
    # with w = 0 both routes recover K* to rounding, so only nonlinear cells are ranked
    ranked = [c["rl_better"] for c in cells.values() if c["w"] > 0]
    summary = {"runs": cells, "rl_better_nonlinear": bool(ranked) and all(ranked)}
    return summary, runs


EXPERIMENTS = {
    "variation": exp_variation,
    "disturbance": exp_disturbance,
    "nominal-comparison": exp_nominal_comparison,
    "indirect-comparison": exp_indirect_comparison,
}


@dataclass
class Report:
    name: str
    summary: dict
    runs: list

    def summary_json(self):
        return json.dumps(_jsonable(self.summary), indent=2, sort_keys=True) + "\n"

    def files(self):
        """Mapping of output file name to text content."""
        out = {}
        for i, (label, log_) in enumerate(self.runs):
            fname = f"{self.name}.csv" if i == 0 else f"{self.name}.{_slug(label)}.csv"
            out[fname] = trajectory_csv(log_)
        out[f"{self.name}.iterations.csv"] = iterations_csv(
            [(label, log_.learning) for label, log_ in self.runs])
        out[f"{self.name}.summary.json"] = self.summary_json()
        return out

    def write(self, directory):
        os.makedirs(directory, exist_ok=True)
        paths = []
        for fname, text in self.files().items():
            path = os.path.join(directory, fname)
            with open(path, "w", newline="") as fh:
                fh.write(text)
            paths.append(path)
        return paths


def _slug(label):
    return "".join(ch if ch.isalnum() or ch in "+-.=" else "_" for ch in label)


def run_experiment(name, config, workers=1):
    """Run a scripted experiment on the experiment-specific view of ``config``."""
    if name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    cfg = config.for_experiment(name)
    logger.info("running %s (config %s)", name, cfg.digest()[:12])
    summary, runs = EXPERIMENTS[name](cfg, workers=workers)
    logger.info("%s finished with %d trajectories", name, len(runs))
    summary = {"experiment": name, "config_hash": cfg.digest(), **summary}
    return Report(name, summary, runs)
