"""Economic dispatch on the three-exchanger desk network.

Solves for the steady production/load split with equal marginal costs, then
checks the optimality conditions and shows that a perturbed split fails them.

Run: python3 demos/dispatch_walkthrough.py
"""

import os

import numpy as np

from dhs_rl import config as configuration
from dhs_rl.network import build_FM, check_optimality, discretize, solve_dispatch

CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs", "desk_3hx.json")


def main():
    cfg = configuration.load(CONFIG)
    plant = discretize(cfg.topology, cfg.tau)
    P_dis = cfg.disturbance.at(0)
    sol = solve_dispatch(plant, cfg.F, cfg.G, P_dis)
    np.set_printoptions(precision=6, suppress=True)
    print("exchangers      ", list(cfg.topology.ids))
    print("load P_dis      ", P_dis)
    print("dispatch P*     ", sol.P_star)
    print("temperatures T* ", sol.T_star)
    print("marginal costs  ", np.diag(cfg.F) * sol.P_star)
    print("F^M P*          ", build_FM(cfg.F) @ sol.P_star)
    report = check_optimality(sol.P_star, sol.T_star, cfg.F, cfg.G, tol=1e-9,
                              Lq=plant.Lq, P_dis=P_dis)
    print("optimal:", report.ok, report.residuals)

    shifted = sol.P_star + np.array([0.05, -0.05, 0.0])
    report = check_optimality(shifted, sol.T_star, cfg.F, cfg.G, tol=1e-9,
                              Lq=plant.Lq, P_dis=P_dis)
    print("moving 0.05 from HX2 to HX1 -> optimal:", report.ok)


if __name__ == "__main__":
    main()
