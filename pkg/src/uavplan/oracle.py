"""Exhaustive grid search over OHFH parameters and power levels.

Only meant for tiny instances, as an independent check on the block
coordinate solver. Everything is evaluated with the exact discretized rate.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .assignment import Pairing
from .physics import LN2, TimeGrid, gain_tensor, sample_all, serving_mask
from .scenario import Scenario
from .trajectory import OhfhTrajectory, make_trajectory, sample_positions, separation_violation

MAX_EVALUATIONS = 10_000_000


class GridTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class OracleGrid:
    position_points: int = 11
    time_points: int = 11
    power_levels: tuple[float, ...] = (0.0, 0.5, 1.0)  # fractions of P_max


class OracleResult(NamedTuple):
    eta: float
    trajectories: tuple[OhfhTrajectory, ...]
    powers: np.ndarray


def _power_combos(levels: Sequence[float], count: int) -> np.ndarray:
    return np.array(list(itertools.product(levels, repeat=count)), dtype=float)


def _eta_over_powers(gains: np.ndarray, powers: np.ndarray, serving, noise: float) -> np.ndarray:
    """Exact max-min rate for a batch of (P, M, N) power profiles."""
    mask = serving_mask(serving, gains.shape[0])[None, :, :, None]
    rx = powers[:, :, None, :] * gains[None]
    signal = np.where(mask, rx, 0.0).sum(axis=1)
    interference = np.where(mask, 0.0, rx).sum(axis=1)
    rates = np.log1p(signal / (interference + noise)) / LN2
    return rates.mean(axis=2).min(axis=1)


def candidate_trajectories(scenario: Scenario, m: int, resolution: OracleGrid) -> list[OhfhTrajectory]:
    """Budget-feasible trajectories on the (x_F, y_F, t_I) grid for UAV ``m``."""
    uav = scenario.uavs[m]
    x0, y0, h = uav.initial_position
    reach = uav.speed * scenario.period
    xs = np.linspace(x0 - reach, x0 + reach, resolution.position_points)
    ys = np.linspace(y0 - reach, y0 + reach, resolution.position_points)
    ts = np.linspace(0.0, scenario.period, resolution.time_points)
    out = []
    for x, y, t in itertools.product(xs, ys, ts):
        if math.hypot(x - x0, y - y0) / uav.speed + t > scenario.period * (1 + 1e-12):
            continue
        out.append(make_trajectory(uav.initial_position, (x, y, h), t, uav.speed, scenario.period))
    return out


def grid_search_oracle(
    scenario: Scenario, pairing: Pairing, resolution: OracleGrid = OracleGrid(), grid: TimeGrid | None = None
) -> OracleResult:
    """Best exact max-min rate over the Cartesian grid, skipping separation violations."""
    grid = grid or TimeGrid.for_scenario(scenario)
    per_uav = [candidate_trajectories(scenario, m, resolution) for m in range(scenario.num_uavs)]
    combos = _power_combos(resolution.power_levels, scenario.num_uavs * grid.slots)
    total = math.prod(len(c) for c in per_uav) * len(combos)
    if total > MAX_EVALUATIONS:
        raise GridTooLarge(f"grid needs {total} evaluations, cap is {MAX_EVALUATIONS}")

    pmax = scenario.max_powers
    powers = combos.reshape(len(combos), scenario.num_uavs, grid.slots) * pmax[None, :, None]
    samples = [np.stack([sample_positions(t, grid) for t in trajs]) for trajs in per_uav]

    best = (-math.inf, None, None)
    for idx in itertools.product(*(range(len(c)) for c in per_uav)):
        pos = np.stack([samples[m][i] for m, i in enumerate(idx)])
        if separation_violation(pos, scenario.min_separation) is not None:
            continue
        gains = gain_tensor(pos, scenario.user_positions, scenario.ref_gain)
        etas = _eta_over_powers(gains, powers, pairing.serving, scenario.noise_power)
        j = int(np.argmax(etas))
        if etas[j] > best[0]:
            best = (float(etas[j]), idx, j)
    if best[1] is None:
        raise ValueError("no separation-feasible grid point")
    eta, idx, j = best
    trajs = tuple(per_uav[m][i] for m, i in enumerate(idx))
    return OracleResult(eta, trajs, powers[j])


def power_grid_search(
    trajs: Sequence[OhfhTrajectory],
    pairing: Pairing,
    scenario: Scenario,
    grid: TimeGrid,
    levels: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
) -> tuple[float, np.ndarray]:
    """Exhaustive max-min rate over per-slot power levels (fractions of P_max) for fixed trajectories."""
    combos = _power_combos(levels, scenario.num_uavs * grid.slots)
    if len(combos) > MAX_EVALUATIONS:
        raise GridTooLarge(f"{len(combos)} power combinations exceed the cap")
    powers = combos.reshape(len(combos), scenario.num_uavs, grid.slots) * scenario.max_powers[None, :, None]
    gains = gain_tensor(sample_all(trajs, grid), scenario.user_positions, scenario.ref_gain)
    etas = _eta_over_powers(gains, powers, pairing.serving, scenario.noise_power)
    j = int(np.argmax(etas))
    return float(etas[j]), powers[j]
