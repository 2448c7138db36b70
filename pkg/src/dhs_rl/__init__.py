"""Model-free optimal regulation of district heating networks by Q-learning."""

from .augment import AugmentedSystem, build_augmented, lift_trajectory, output_and_error
from .baseline import identify, indirect_controller, optimal_regulator
from .config import DisturbanceSchedule, ExperimentConfig, from_dict, load
from .errors import *  # noqa: F401,F403
from .harness import (
    EXPERIMENTS,
    build_scenario,
    lyapunov_series,
    run_experiment,
    simulate,
    stage_cost_series,
)
from .learner import (
    DataBatch,
    ProbingNoiseConfig,
    estimate_theta,
    gain_distance,
    improve_policy,
    probing_noise,
    required_samples,
    run_policy_iteration,
)
from .network import (
    DhsPlant,
    HeatExchanger,
    NetworkTopology,
    Pipe,
    build_FM,
    build_Lq,
    check_optimality,
    discretize,
    solve_dispatch,
)
from .numerics import (
    hankel,
    is_persistently_exciting,
    matrix_rank,
    pseudoinverse,
    solve_discrete_lyapunov,
    solve_lqr,
    spectral_radius,
)

__version__ = "0.1.0"
