"""JSON experiment configuration documents."""

import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError
from .network import HeatExchanger, NetworkTopology, Pipe


@dataclass(frozen=True)
class DisturbanceSchedule:
    """Piecewise-constant disturbance: ``segments`` of ``(start, end, vector)``.

    ``end`` is exclusive and may be ``None`` (open-ended). Steps outside every
    segment carry zero disturbance.
    """

    segments: tuple
    size: int
    mode: str = "constant"

    def __post_init__(self):
        segs = tuple((int(s), None if e is None else int(e), np.asarray(v, dtype=float))
                     for s, e, v in self.segments)
        last_end = -1
        for s, e, v in segs:
            if v.shape != (self.size,):
                raise ValueError(f"disturbance vector must have length {self.size}")
            if e is not None and e <= s:
                raise ValueError("segment end must exceed its start")
            if s < last_end:
                raise ValueError("disturbance segments must be ordered and non-overlapping")
            last_end = float("inf") if e is None else e
        if self.mode not in ("constant", "impulse", "piecewise"):
            raise ValueError(f"unknown disturbance mode {self.mode!r}")
        object.__setattr__(self, "segments", segs)

    def at(self, k):
        for s, e, v in self.segments:
            if s <= k and (e is None or k < e):
                return v
        return np.zeros(self.size)

    @classmethod
    def constant(cls, vector):
        vector = np.asarray(vector, dtype=float)
        return cls(((0, None, vector),), vector.size, "constant")


@dataclass(frozen=True)
class ExperimentConfig:
    topology: NetworkTopology
    tau: float
    F: np.ndarray
    G: np.ndarray
    Q_e: np.ndarray
    R_e: np.ndarray
    disturbance: DisturbanceSchedule
    horizon: int
    seed: int
    variation: float = 0.0
    w: float = 0.0
    noise_amplitude: float = 0.01
    noise_decay: float = 0.999
    num_sinusoids: int = None
    freq_low: float = 0.01 * np.pi
    freq_high: float = 0.9 * np.pi
    eps: float = 1e-9
    max_iter: int = 50
    method: str = "matrix"
    T0: np.ndarray = None
    P0: np.ndarray = None
    divergence_bound: float = 1e6
    continuous: bool = False
    experiments: dict = field(default_factory=dict, compare=False)
    source: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def size(self):
        return self.topology.size

    def with_overrides(self, **changes):
        """Copy of this config with source fields replaced and re-parsed."""
        doc = copy.deepcopy(self.source)
        doc.update(changes)
        return from_dict(doc)

    def for_experiment(self, name):
        doc = copy.deepcopy(self.source)
        doc.update(copy.deepcopy(self.experiments.get(name, {})))
        return from_dict(doc)

    def digest(self):
        text = json.dumps(self.source, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _matrix(value, n, name):
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        a = np.full(n, float(a))
    if a.ndim == 1:
        if a.size != n:
            raise ParseError(f"{name}: expected {n} diagonal entries, got {a.size}", field=name)
        return np.diag(a)
    if a.shape != (n, n):
        raise ParseError(f"{name}: expected a {n}x{n} matrix", field=name)
    return a


def _require(doc, key, where=""):
    if key not in doc:
        raise ParseError(f"missing field {where}{key}", field=f"{where}{key}")
    return doc[key]


def parse_topology(doc):
    net = _require(doc, "network")
    try:
        hxs = tuple(
            HeatExchanger(str(h["id"]), str(h["role"]), float(h["volume"]),
                          float(h["flow"]) if "flow" in h else None)
            for h in _require(net, "exchangers", "network."))
        pipes = tuple(Pipe(str(p["from"]), str(p["to"]), float(p["flow"]))
                      for p in _require(net, "pipes", "network."))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed network entry: {exc}", field="network") from exc
    if any(h.flow is None for h in hxs):
        return NetworkTopology.from_pipes([(h.id, h.role, h.volume) for h in hxs],
                                          [(p.source, p.target, p.flow) for p in pipes])
    return NetworkTopology(hxs, pipes)


def parse_schedule(doc, n):
    if doc is None:
        return DisturbanceSchedule((), n)
    if isinstance(doc, list):
        return DisturbanceSchedule.constant(doc)
    try:
        segs = [(s.get("start", 0), s.get("end"), s["P_dis"]) for s in doc.get("segments", [])]
        return DisturbanceSchedule(tuple(segs), n, doc.get("mode", "constant"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed disturbance schedule: {exc}", field="disturbance") from exc


def from_dict(doc, require_seed=False):
    """Build an :class:`ExperimentConfig` from a parsed JSON document."""
    topology = parse_topology(doc)
    n = topology.size
    costs = doc.get("costs", {})
    noise = doc.get("noise", {})
    learner = doc.get("learner", {})
    initial = doc.get("initial", {})
    seed = doc.get("seed")
    if seed is None:
        if require_seed:
            raise ParseError("a seed is required in experiment mode", field="seed")
        seed = 0
    try:
        return ExperimentConfig(
            topology=topology,
            tau=float(_require(doc, "tau")),
            F=_matrix(costs.get("F", 1.0), n, "costs.F"),
            G=_matrix(costs.get("G", 1.0), n, "costs.G"),
            Q_e=_matrix(costs.get("Q_e", 1.0), n, "costs.Q_e"),
            R_e=_matrix(costs.get("R_e", 1.0), n, "costs.R_e"),
            disturbance=parse_schedule(doc.get("disturbance"), n),
            horizon=int(doc.get("horizon", 2000)),
            seed=int(seed),
            variation=float(doc.get("variation", 0.0)),
            w=float(doc.get("w", 0.0)),
            noise_amplitude=float(noise.get("amplitude", 0.01)),
            noise_decay=float(noise.get("decay", 0.999)),
            num_sinusoids=noise.get("num_sinusoids"),
            freq_low=float(noise.get("freq_low", 0.01 * np.pi)),
            freq_high=float(noise.get("freq_high", 0.9 * np.pi)),
            eps=float(learner.get("eps", 1e-9)),
            max_iter=int(learner.get("max_iter", 50)),
            method=str(learner.get("method", "matrix")),
            T0=np.asarray(initial.get("T", np.zeros(n)), dtype=float),
            P0=np.asarray(initial.get("P", np.zeros(n)), dtype=float),
            divergence_bound=float(doc.get("divergence_bound", 1e6)),
            continuous=bool(doc.get("continuous", False)),
            experiments=copy.deepcopy(doc.get("experiments", {})),
            source=copy.deepcopy(doc),
        )
    except ParseError:
        raise
    except (TypeError, ValueError) as exc:
        raise ParseError(f"invalid configuration value: {exc}") from exc


def read_document(path):
    """Read a JSON configuration file into a dict without interpreting it."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(doc, dict):
        raise ParseError("configuration must be a JSON object")
    return doc


def load(path, require_seed=False):
    """Read and parse a JSON configuration file."""
    return from_dict(read_document(path), require_seed=require_seed)
