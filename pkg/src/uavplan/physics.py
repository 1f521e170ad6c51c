"""Free-space channel gains, SINR and slot-averaged user rates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .assignment import Pairing
    from .scenario import Scenario
    from .trajectory import OhfhTrajectory

LN2 = math.log(2.0)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform midpoint discretization of ``[0, period]`` into ``slots`` cells."""

    period: float
    slots: int

    def __post_init__(self):
        if self.period <= 0 or self.slots < 1:
            raise ValueError("TimeGrid needs period > 0 and slots >= 1")

    @classmethod
    def for_scenario(cls, scenario: "Scenario") -> "TimeGrid":
        return cls(scenario.period, scenario.slots)

    @property
    def slot_duration(self) -> float:
        return self.period / self.slots

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.slots) + 0.5) * self.slot_duration


def channel_gain(uav_pos, user_pos, ref_gain: float) -> float:
    d2 = float(np.sum((np.asarray(uav_pos, float) - np.asarray(user_pos, float)) ** 2))
    if d2 == 0.0:
        raise ValueError("UAV and user positions coincide; the path-loss gain is undefined")
    return ref_gain / d2


def squared_distances(positions: np.ndarray, users: np.ndarray) -> np.ndarray:
    """Squared distances between (M, N, 3) UAV samples and (K, 3) users, shaped (M, K, N)."""
    diff = positions[:, None, :, :] - users[None, :, None, :]
    return np.einsum("mknc,mknc->mkn", diff, diff)


def gain_tensor(positions: np.ndarray, users: np.ndarray, ref_gain: float) -> np.ndarray:
    d2 = squared_distances(positions, users)
    if np.any(d2 <= 0.0):
        raise ValueError("a UAV sample coincides with a user position")
    return ref_gain / d2


def sinr(powers_at_slot, gains_at_slot, serving: int, noise: float) -> float:
    """SINR of a user served by UAV ``serving``; every other UAV interferes."""
    p = np.asarray(powers_at_slot, float)
    h = np.asarray(gains_at_slot, float)
    received = p * h
    interference = float(np.sum(np.delete(received, serving)))
    return float(received[serving]) / (interference + noise)


def instantaneous_rate(gamma):
    """Spectral efficiency log2(1 + gamma) in bits/s/Hz."""
    out = np.log1p(gamma) / LN2
    return float(out) if np.ndim(out) == 0 else out


def serving_mask(serving: Sequence[int], num_uavs: int) -> np.ndarray:
    """(M, K) boolean mask, True where UAV m serves user k."""
    mask = np.zeros((num_uavs, len(serving)), dtype=bool)
    mask[np.asarray(serving), np.arange(len(serving))] = True
    return mask


def received_powers(gains: np.ndarray, powers: np.ndarray) -> np.ndarray:
    """(M, K, N) received power p_m[n] * h_{m,k}[n]."""
    return powers[:, None, :] * gains


def signal_and_interference(gains: np.ndarray, powers: np.ndarray, serving: Sequence[int]):
    """Per-user (K, N) serving-link power and co-channel interference."""
    rx = received_powers(gains, powers)
    mask = serving_mask(serving, gains.shape[0])
    signal = np.where(mask[:, :, None], rx, 0.0).sum(axis=0)
    interference = np.where(mask[:, :, None], 0.0, rx).sum(axis=0)
    return signal, interference


def slot_rates_from_gains(gains, powers, serving, noise) -> np.ndarray:
    """(K, N) instantaneous rates."""
    signal, interference = signal_and_interference(gains, powers, serving)
    return np.log1p(signal / (interference + noise)) / LN2


def sample_all(trajectories: Sequence["OhfhTrajectory"], grid: TimeGrid) -> np.ndarray:
    from .trajectory import sample_positions

    return np.stack([sample_positions(t, grid) for t in trajectories])


def _check_dims(trajectories, powers, pairing, scenario, grid):
    m, k = scenario.num_uavs, scenario.num_users
    if len(trajectories) != m:
        raise ValueError(f"expected {m} trajectories, got {len(trajectories)}")
    if np.shape(powers) != (m, grid.slots):
        raise ValueError(f"powers must have shape {(m, grid.slots)}, got {np.shape(powers)}")
    serving = pairing.serving
    if len(serving) != k:
        raise ValueError(f"pairing covers {len(serving)} users, scenario has {k}")
    if any(not 0 <= s < m for s in serving):
        raise ValueError("pairing references an unknown UAV id")


def slot_rates(trajectories, powers, pairing: "Pairing", scenario: "Scenario", grid: TimeGrid) -> np.ndarray:
    """(K, N) rate of every user at every slot midpoint."""
    p = np.asarray(getattr(powers, "values", powers), float)
    _check_dims(trajectories, p, pairing, scenario, grid)
    gains = gain_tensor(sample_all(trajectories, grid), scenario.user_positions, scenario.ref_gain)
    return slot_rates_from_gains(gains, p, pairing.serving, scenario.noise_power)


def average_rates(trajectories, powers, pairing, scenario, grid) -> np.ndarray:
    """Per-user average rate over the period, midpoint rule on ``grid``."""
    return slot_rates(trajectories, powers, pairing, scenario, grid).mean(axis=1)


def min_rate(rates) -> float:
    rates = np.asarray(rates, float)
    if rates.size == 0:
        raise ValueError("min_rate of an empty rate vector")
    return float(rates.min())
