"""The four comparison schemes, all started from one shared initialization."""

from __future__ import annotations

from dataclasses import replace

from .assignment import Pairing
from .optimizer import BLOCKS, SolverOptions, SolveState, block_coordinate_descent, check_initial_state, exact_eta
from .physics import TimeGrid
from .scenario import Scenario

SCHEMES = ("joint", "power-only", "trajectory-only", "fixed")


def run_scheme(
    scheme: str,
    scenario: Scenario,
    pairing: Pairing,
    init_state: SolveState,
    options: SolverOptions = SolverOptions(),
    grid: TimeGrid | None = None,
) -> SolveState:
    """joint: trajectory blocks and powers; power-only: trajectories frozen;
    trajectory-only: powers frozen; fixed: the initialization as-is."""
    grid = grid or TimeGrid.for_scenario(scenario)
    if scheme == "joint":
        return block_coordinate_descent(scenario, pairing, init_state, options, grid=grid)
    if scheme == "power-only":
        return block_coordinate_descent(scenario, pairing, init_state, options, blocks=(), grid=grid)
    if scheme == "trajectory-only":
        return block_coordinate_descent(
            scenario, pairing, init_state, options, blocks=BLOCKS, update_power=False, grid=grid
        )
    if scheme == "fixed":
        check_initial_state(init_state, scenario, grid)
        eta = exact_eta(init_state.trajectories, init_state.powers, pairing, scenario, grid)
        return replace(init_state, iteration=0, eta_history=(eta,), converged=True, termination_reason=None)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
