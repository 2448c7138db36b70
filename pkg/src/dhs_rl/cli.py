"""Command-line driver: ``dhs-rl validate | dispatch | run``.

Exit codes: 0 success, 1 configuration or validation problem, 2 divergence,
3 estimation failure (rank, conditioning, iteration cap).
"""

import argparse
import copy
import logging
import os
import sys

import numpy as np

from . import config as configuration
from .augment import build_augmented
from .errors import (
    DestabilizingUpdate,
    DhsError,
    Diverged,
    IllConditioned,
    IterationCapExceeded,
    ParseError,
    RankDeficient,
    SingularBlock,
    ValidationFailed,
)
from .harness import EXPERIMENTS, build_scenario, run_experiment
from .network import check_optimality, discretize, solve_dispatch

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_ESTIMATION = 3

ESTIMATION_ERRORS = (RankDeficient, IllConditioned, SingularBlock, DestabilizingUpdate,
                     IterationCapExceeded)


def _num(x):
    return format(float(x), ".17g")


def _vec(v):
    return "[" + ", ".join(_num(x) for x in np.ravel(v)) + "]"


def cmd_validate(path, out=None):
    """Check topology, discretization, the rank condition and the seed gain.

    Prints one ``PASS``/``FAIL`` line per check.

    Raises:
        ParseError: unreadable or malformed document.
        ValidationFailed: one or more checks failed; ``violations`` holds
            ``(check, exception)`` pairs.
    """
    out = out or sys.stdout
    doc = configuration.read_document(path)
    violations = []
    plant = None

    def record(check, fn):
        try:
            value = fn()
        except DhsError as exc:
            violations.append((check, exc))
            print(f"FAIL {check}: {type(exc).__name__}: {exc}", file=out)
            return None
        print(f"PASS {check}", file=out)
        return value

    topology = record("topology", lambda: configuration.parse_topology(doc))
    if topology is not None:
        tau = doc.get("tau")
        if tau is None:
            raise ParseError("missing field tau", field="tau")
        plant = record("discretization", lambda: discretize(topology, float(tau)))
    if plant is not None:
        cfg = configuration.from_dict(doc)
        aug = record("rank condition",
                     lambda: build_augmented(plant, cfg.F, cfg.G, cfg.Q_e, cfg.R_e))
        if aug is not None:
            record("seed gain stabilizes varied plant", lambda: build_scenario(cfg))
    if violations:
        raise ValidationFailed(
            "; ".join(f"{c}: {e}" for c, e in violations), violations=violations)
    return True


def cmd_dispatch(path, step=0, out=None):
    """Solve the economic dispatch for the disturbance active at ``step``."""
    out = out or sys.stdout
    cfg = configuration.load(path)
    plant = discretize(cfg.topology, cfg.tau)
    P_dis = cfg.disturbance.at(step)
    sol = solve_dispatch(plant, cfg.F, cfg.G, P_dis)
    report = check_optimality(sol.P_star, sol.T_star, cfg.F, cfg.G, tol=1e-9,
                              Lq=plant.Lq, P_dis=P_dis)
    print(f"nodes: {', '.join(cfg.topology.ids)}", file=out)
    print(f"P_dis: {_vec(P_dis)}", file=out)
    print(f"P_star: {_vec(sol.P_star)}", file=out)
    print(f"T_star: {_vec(sol.T_star)}", file=out)
    print(f"z: {_num(sol.z)}", file=out)
    for name, value in report.residuals.items():
        print(f"residual {name}: {_num(value)}", file=out)
    print(f"optimal: {'yes' if report.ok else 'no'}", file=out)
    return sol, report


def _experiment_config(name, path, seed=None, method=None, eps=None, iters_cap=None):
    doc = configuration.read_document(path)
    if seed is not None:
        doc["seed"] = int(seed)
    if doc.get("seed") is None:
        raise ParseError("a seed is required in experiment mode (config or --seed)",
                         field="seed")
    merged = copy.deepcopy(doc)
    merged.update(copy.deepcopy(doc.get("experiments", {}).get(name, {})))
    merged.pop("experiments", None)
    learner = dict(merged.get("learner", {}))
    if method is not None:
        learner["method"] = method
    if eps is not None:
        learner["eps"] = float(eps)
    if iters_cap is not None:
        learner["max_iter"] = int(iters_cap)
    merged["learner"] = learner
    return configuration.from_dict(merged, require_seed=True)


def cmd_run(name, path, seed=None, out_dir=".", method=None, eps=None, iters_cap=None,
            workers=1, out=None):
    """Run a scripted experiment and write its CSV and JSON artifacts."""
    if name not in EXPERIMENTS:
        raise ParseError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}",
                         field="experiment")
    out = out or sys.stdout
    cfg = _experiment_config(name, path, seed, method, eps, iters_cap)
    report = run_experiment(name, cfg, workers=workers)
    for p in report.write(out_dir):
        print(f"wrote {p}", file=out)
    return report


def _configure_logging():
    level = os.environ.get("DHS_RL_LOG", "WARNING").strip().upper()
    if level.isdigit():
        value = int(level)
    else:
        value = getattr(logging, level, None)
        if not isinstance(value, int):
            value = logging.WARNING
    logging.basicConfig(level=value, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def build_parser():
    parser = argparse.ArgumentParser(prog="dhs-rl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a configuration")
    p.add_argument("config")

    p = sub.add_parser("dispatch", help="solve the economic dispatch")
    p.add_argument("config")
    p.add_argument("--step", type=int, default=0, help="time step selecting the disturbance")

    p = sub.add_parser("run", help="run a scripted experiment")
    p.add_argument("experiment", choices=sorted(EXPERIMENTS))
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--method", choices=["matrix", "scalar-ls"])
    p.add_argument("--eps", type=float, help="policy-iteration stop tolerance")
    p.add_argument("--iters-cap", type=int, help="policy-iteration iteration cap")
    p.add_argument("--workers", type=int, default=1, help="parallel simulations")
    return parser


def main(argv=None):
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            cmd_validate(args.config)
        elif args.command == "dispatch":
            cmd_dispatch(args.config, step=args.step)
        else:
            cmd_run(args.experiment, args.config, seed=args.seed, out_dir=args.out,
                    method=args.method, eps=args.eps, iters_cap=args.iters_cap,
                    workers=args.workers)
    except Diverged as exc:
        print(f"error: Diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ESTIMATION_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except DhsError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
