"""One-way hover-fly-hover (OHFH) trajectories.

A UAV hovers at its start point for ``hover_initial`` seconds, flies a straight
segment at constant speed, and hovers at the end point for the remainder of the
period. Only the end point and the initial hover time are free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .physics import TimeGrid

BUDGET_RTOL = 1e-9


class InfeasibleTrajectory(ValueError):
    pass


@dataclass(frozen=True)
class OhfhTrajectory:
    initial: tuple[float, float, float]
    final: tuple[float, float, float]
    hover_initial: float
    hover_final: float
    speed: float
    period: float

    @property
    def flight_distance(self) -> float:
        return math.dist(self.initial, self.final)

    @property
    def flight_time(self) -> float:
        return self.flight_distance / self.speed

    @property
    def direction(self) -> np.ndarray:
        """Unit heading; zero vector for a pure hover."""
        d = np.subtract(self.final, self.initial)
        n = np.linalg.norm(d)
        return d / n if n > 0 else np.zeros(3)

    @property
    def heading(self) -> float | None:
        """Heading angle in radians from the +x axis, None when hovering in place."""
        dx, dy = self.final[0] - self.initial[0], self.final[1] - self.initial[1]
        if dx == 0 and dy == 0:
            return None
        return math.atan2(dy, dx)

    def budget_residual(self) -> float:
        return self.hover_initial + self.flight_time + self.hover_final - self.period


def make_trajectory(initial, final, hover_initial: float, speed: float, period: float) -> OhfhTrajectory:
    """Build a trajectory, deriving the final hover time from the time budget."""
    initial = tuple(float(c) for c in initial)
    final = tuple(float(c) for c in final)
    if len(initial) != 3 or len(final) != 3:
        raise ValueError("positions must be 3-vectors")
    if final[2] != initial[2]:
        raise ValueError("initial and final altitude must match")
    if speed <= 0 or period <= 0:
        raise ValueError("speed and period must be positive")
    if hover_initial < 0:
        raise InfeasibleTrajectory("initial hover time must be non-negative")
    flight = math.dist(initial, final) / speed
    hover_final = period - hover_initial - flight
    if hover_final < 0:
        if hover_final < -BUDGET_RTOL * period:
            raise InfeasibleTrajectory(
                f"time budget exceeded: hover {hover_initial:g} s + flight {flight:g} s > period {period:g} s"
            )
        hover_final = 0.0
    return OhfhTrajectory(initial, final, float(hover_initial), hover_final, float(speed), float(period))


def hover(initial, speed: float, period: float, hover_initial: float = 0.0) -> OhfhTrajectory:
    return make_trajectory(initial, initial, hover_initial, speed, period)


def positions_at(traj: OhfhTrajectory, times) -> np.ndarray:
    """Vectorized position lookup, shape ``times.shape + (3,)``."""
    t = np.asarray(times, float)
    if np.any(t < 0) or np.any(t > traj.period):
        raise ValueError("time outside [0, period]")
    travelled = np.clip((t - traj.hover_initial) * traj.speed, 0.0, traj.flight_distance)
    return np.asarray(traj.initial) + travelled[..., None] * traj.direction


def position_at(traj: OhfhTrajectory, t: float) -> np.ndarray:
    return positions_at(traj, np.asarray(float(t)))


def sample_positions(traj: OhfhTrajectory, grid: TimeGrid) -> np.ndarray:
    """(N, 3) positions at the slot midpoints."""
    return positions_at(traj, grid.midpoints)


class SeparationViolation(NamedTuple):
    uav_a: int
    uav_b: int
    slot: int
    distance: float


def separation_violation(samples: np.ndarray, d_min: float) -> SeparationViolation | None:
    """First pair/slot in (M, N, 3) samples closer than ``d_min``, or None."""
    m = samples.shape[0]
    if m < 2 or d_min <= 0:
        return None
    limit = d_min * d_min * (1.0 - BUDGET_RTOL)
    for a in range(m - 1):
        diff = samples[a + 1 :] - samples[a]
        d2 = np.einsum("bnc,bnc->bn", diff, diff)
        bad = d2 < limit
        if bad.any():
            # earliest slot first, then lowest partner id
            slot = int(np.argmax(bad.any(axis=0)))
            b = int(np.argmax(bad[:, slot]))
            return SeparationViolation(a, a + 1 + b, slot, float(math.sqrt(d2[b, slot])))
    return None


def check_separation(trajs: Sequence[OhfhTrajectory], d_min: float, grid: TimeGrid) -> SeparationViolation | None:
    """Check pairwise separation at every slot midpoint.

    Returns None when all pairs keep at least ``d_min`` apart. Between two
    midpoints the UAVs may come up to ``speed * slot_duration`` metres closer
    than what is sampled, so callers wanting a continuous-time guarantee should
    pad ``d_min`` by that margin.
    """
    if len(trajs) < 2:
        return None
    for t in trajs:
        if not math.isclose(t.period, grid.period, rel_tol=1e-12):
            raise ValueError("trajectory period does not match the time grid")
    samples = np.stack([sample_positions(t, grid) for t in trajs])
    return separation_violation(samples, d_min)
