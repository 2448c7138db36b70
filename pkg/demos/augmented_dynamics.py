"""Why the learner never needs to know the load.

Two runs of the physical plant with different constant loads, fed the same
input increments, produce the same augmented state once the loads differ by
a multiple of the inverse marginal-cost weights.

Run: python3 demos/augmented_dynamics.py
"""

import os

import numpy as np

from dhs_rl import config as configuration
from dhs_rl.augment import build_augmented, lift_trajectory
from dhs_rl.network import discretize, step

CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs", "desk_3hx.json")


def run(plant, P_seq, P_dis):
    T = [np.zeros(plant.size)]
    for P in P_seq[:-1]:
        T.append(step(plant, T[-1], P, P_dis))
    return np.array(T)


def main():
    cfg = configuration.load(CONFIG)
    plant = discretize(cfg.topology, cfg.tau)
    aug = build_augmented(plant, cfg.F, cfg.G, cfg.Q_e, cfg.R_e)
    F = np.diag(cfg.F)
    rng = np.random.default_rng(0)
    du = rng.normal(scale=0.1, size=(50, 3))
    load_a = cfg.disturbance.at(0)
    shift = 0.4 / F
    runs = []
    for load, offset in ((load_a, 0.0), (load_a + shift, shift)):
        P = np.cumsum(du, axis=0) - offset
        runs.append(lift_trajectory(run(plant, P, load), P, F, np.diag(cfg.G)))
    (eps_a, _), (eps_b, _) = runs
    print("max |eps_a - eps_b| over 50 steps:", float(np.abs(eps_a - eps_b).max()))
    resid = max(float(np.abs(eps_a[k + 1] - aug.step(eps_a[k], du[k])).max())
                for k in range(1, 49))
    print("max residual of eps_{k+1} = A eps_k + B du_k:", resid)


if __name__ == "__main__":
    main()
