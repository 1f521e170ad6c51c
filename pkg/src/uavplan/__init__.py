"""Joint trajectory and power planning for multi-UAV emergency downlink networks."""

from .assignment import Pairing, assign_users
from .optimizer import (
    PowerProfile,
    SolverOptions,
    SolveState,
    block_coordinate_descent,
    default_initialization,
    optimize_power_fixed_traj,
    update_trajectory_block,
)
from .oracle import grid_search_oracle, power_grid_search
from .physics import TimeGrid, average_rates, min_rate
from .scenario import Scenario, load_scenario, random_scenario, save_scenario
from .schemes import SCHEMES, run_scheme
from .trajectory import OhfhTrajectory, make_trajectory

__version__ = "0.1.0"
