"""First-order Taylor bounds used by the successive convex approximation steps.

Trajectory step: the log of total received power is convex in the squared
UAV-user distances, so its linearization in those distances is a global lower
bound. The squared distance itself is bounded below by its tangent plane in the
UAV position, which gives an upper bound on interference.

Power step: the log of interference-plus-noise is concave in the powers, so
its tangent is a global upper bound and the resulting per-user rate surrogate
is concave in the powers.

All quantities live on slot-sampled arrays; nothing here knows about time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .physics import LN2, gain_tensor, sample_all, serving_mask, squared_distances


class TrustRegionError(ValueError):
    """A linearized squared distance went non-positive; the candidate is too far from the expansion point."""


@dataclass(frozen=True)
class ExpansionPoint:
    positions: np.ndarray  # (M, N, 3)
    powers: np.ndarray  # (M, N)
    iteration: int = 0

    @classmethod
    def from_state(cls, trajectories, powers, grid, iteration: int = 0) -> "ExpansionPoint":
        p = np.asarray(getattr(powers, "values", powers), float)
        return cls(sample_all(trajectories, grid), p, iteration)


@dataclass(frozen=True)
class SurrogateCoefficients:
    a: np.ndarray  # (M, K, N), 1/m^2
    b: np.ndarray  # (M, K, N), 1/W


# -- scalar, per-slot forms ---------------------------------------------------


def _received_sum(positions, powers, user_pos, ref_gain):
    d2 = np.sum((np.asarray(positions, float) - np.asarray(user_pos, float)) ** 2, axis=-1)
    if np.any(d2 <= 0):
        raise ValueError("UAV position coincides with the user")
    return np.asarray(powers, float) * ref_gain / d2, d2


def hat_rate(positions_at_slot, powers_at_slot, k: int, scenario) -> float:
    """log2 of total received power plus noise at user ``k``."""
    rx, _ = _received_sum(positions_at_slot, powers_at_slot, scenario.user_positions[k], scenario.ref_gain)
    return float(np.log2(rx.sum() + scenario.noise_power))


def trajectory_coefficient(expansion_positions, powers, k: int, scenario) -> np.ndarray:
    """Derivative of :func:`hat_rate` w.r.t. each UAV's squared distance to user ``k``."""
    rx, d2 = _received_sum(expansion_positions, powers, scenario.user_positions[k], scenario.ref_gain)
    return -(rx / d2) / ((rx.sum() + scenario.noise_power) * LN2)


def hat_rate_lb(candidate_positions_at_slot, expansion_positions, powers_at_slot, k: int, scenario) -> float:
    user = scenario.user_positions[k]
    rx_l, d2_l = _received_sum(expansion_positions, powers_at_slot, user, scenario.ref_gain)
    a = -(rx_l / d2_l) / ((rx_l.sum() + scenario.noise_power) * LN2)
    d2 = np.sum((np.asarray(candidate_positions_at_slot, float) - user) ** 2, axis=-1)
    return float(np.log2(rx_l.sum() + scenario.noise_power) + np.sum(a * (d2 - d2_l)))


def lambda_lb(candidate_pos, expansion_pos, user_pos):
    """Tangent-plane lower bound on ``||candidate - user||^2``."""
    q = np.asarray(candidate_pos, float)
    ql = np.asarray(expansion_pos, float)
    g = ql - np.asarray(user_pos, float)
    out = np.sum(g * g, axis=-1) + 2.0 * np.sum(g * (q - ql), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def xi_lb(cand_m, cand_j, exp_m, exp_j):
    """Tangent-plane lower bound on the squared UAV-UAV distance."""
    g = np.asarray(exp_m, float) - np.asarray(exp_j, float)
    out = -np.sum(g * g, axis=-1) + 2.0 * np.sum(g * (np.asarray(cand_m, float) - np.asarray(cand_j, float)), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def check_rate(powers_at_slot, gains, serving: int, noise: float) -> float:
    """log2 of interference plus noise for a user served by ``serving``."""
    p = np.asarray(powers_at_slot, float)
    h = np.asarray(gains, float)
    others = np.arange(p.size) != serving
    return float(np.log2(np.sum(p[others] * h[others]) + noise))


def power_coefficient(expansion_powers, gains, serving: int, noise: float) -> np.ndarray:
    p = np.asarray(expansion_powers, float)
    h = np.asarray(gains, float)
    others = np.arange(p.size) != serving
    interference = np.sum(p[others] * h[others]) + noise
    return np.where(others, h / (interference * LN2), 0.0)


def check_rate_ub(candidate_powers_at_slot, expansion_powers, gains, serving: int, noise: float) -> float:
    b = power_coefficient(expansion_powers, gains, serving, noise)
    delta = np.asarray(candidate_powers_at_slot, float) - np.asarray(expansion_powers, float)
    return check_rate(expansion_powers, gains, serving, noise) + float(np.sum(b * delta))


# -- vectorized evaluators ----------------------------------------------------


class TrajectorySurrogate:
    """Per-user lower bound on the slot-averaged rate as a function of UAV positions.

    Built once per expansion point; :meth:`user_rates` is then cheap enough to
    call inside a line search.
    """

    def __init__(self, expansion_positions: np.ndarray, powers: np.ndarray, serving: Sequence[int], scenario):
        self.q_l = np.asarray(expansion_positions, float)
        self.powers = np.asarray(powers, float)
        self.users = scenario.user_positions
        self.ref_gain = scenario.ref_gain
        self.noise = scenario.noise_power
        m = self.q_l.shape[0]
        mask = serving_mask(serving, m)

        self.d2_l = squared_distances(self.q_l, self.users)  # (M, K, N)
        rx_l = self.powers[:, None, :] * self.ref_gain / self.d2_l
        total_l = rx_l.sum(axis=0) + self.noise
        self.log_total_l = np.log2(total_l)
        self.a = -(rx_l / self.d2_l) / (total_l * LN2)
        self.offset = self.q_l[:, None, :, :] - self.users[None, :, None, :]  # (M, K, N, 3)
        # interference terms only exist for non-serving UAVs that actually transmit
        self.interferer = ~mask[:, :, None] & (self.powers[:, None, :] > 0)

    def slot_rates(self, positions: np.ndarray) -> np.ndarray:
        """(K, N) surrogate rates; raises TrustRegionError outside the trust region."""
        d2 = squared_distances(positions, self.users)
        hat_lb = self.log_total_l + np.sum(self.a * (d2 - self.d2_l), axis=0)
        step = positions - self.q_l
        lam_lb = self.d2_l + 2.0 * np.einsum("mknc,mnc->mkn", self.offset, step)
        if np.any(lam_lb[self.interferer] <= 0.0):
            raise TrustRegionError("linearized distance non-positive")
        safe = np.where(self.interferer, lam_lb, 1.0)
        interference = np.where(self.interferer, self.powers[:, None, :] * self.ref_gain / safe, 0.0).sum(axis=0)
        return hat_lb - np.log2(interference + self.noise)

    def user_rates(self, positions: np.ndarray) -> np.ndarray:
        return self.slot_rates(positions).mean(axis=1)

    def objective(self, positions: np.ndarray) -> float:
        return float(self.user_rates(positions).min())


class PowerSurrogate:
    """Concave per-user lower bound on the slot-averaged rate as a function of powers."""

    def __init__(self, gains: np.ndarray, expansion_powers: np.ndarray, serving: Sequence[int], noise: float):
        self.gains = np.asarray(gains, float)  # (M, K, N)
        self.p_l = np.asarray(expansion_powers, float)  # (M, N)
        self.noise = noise
        m, _, n = self.gains.shape
        self.mask = serving_mask(serving, m)[:, :, None]
        rx_l = self.p_l[:, None, :] * self.gains
        self.interference_l = np.where(self.mask, 0.0, rx_l).sum(axis=0) + noise  # (K, N)
        self.b = np.where(self.mask, 0.0, self.gains / (self.interference_l * LN2))
        self.slots = n

    def slot_rates(self, powers: np.ndarray) -> np.ndarray:
        delta = powers - self.p_l
        # total(p) - interference_l, accumulated without cancellation
        excess = np.where(self.mask, powers[:, None, :] * self.gains, delta[:, None, :] * self.gains).sum(axis=0)
        linear = np.sum(self.b * delta[:, None, :], axis=0)
        return np.log1p(excess / self.interference_l) / LN2 - linear

    def user_rates(self, powers: np.ndarray) -> np.ndarray:
        return self.slot_rates(powers).mean(axis=1)

    def objective(self, powers: np.ndarray) -> float:
        return float(self.user_rates(powers).min())

    def jacobian(self, powers: np.ndarray) -> np.ndarray:
        """(K, M, N) gradient of each user's surrogate rate w.r.t. the powers."""
        total = np.sum(powers[:, None, :] * self.gains, axis=0) + self.noise  # (K, N)
        d = self.gains / (total * LN2) - self.b  # (M, K, N)
        return np.transpose(d, (1, 0, 2)) / self.slots


def surrogate_coefficients(expansion: ExpansionPoint, serving: Sequence[int], scenario) -> SurrogateCoefficients:
    traj = TrajectorySurrogate(expansion.positions, expansion.powers, serving, scenario)
    gains = gain_tensor(expansion.positions, scenario.user_positions, scenario.ref_gain)
    power = PowerSurrogate(gains, expansion.powers, serving, scenario.noise_power)
    return SurrogateCoefficients(traj.a, power.b)


def surrogate_trajectory_objective(candidate_trajs, expansion: ExpansionPoint, powers, pairing, scenario, grid) -> float:
    """Max-min surrogate for candidate trajectories around ``expansion``.

    Raises TrustRegionError when a candidate leaves the region where the
    linearized interference distances stay positive.
    """
    p = np.asarray(getattr(powers, "values", powers), float)
    surr = TrajectorySurrogate(expansion.positions, p, pairing.serving, scenario)
    return surr.objective(sample_all(candidate_trajs, grid))


def surrogate_power_objective(candidate_powers, expansion: ExpansionPoint, trajs, pairing, scenario, grid) -> float:
    p = np.asarray(getattr(candidate_powers, "values", candidate_powers), float)
    gains = gain_tensor(sample_all(trajs, grid), scenario.user_positions, scenario.ref_gain)
    surr = PowerSurrogate(gains, expansion.powers, pairing.serving, scenario.noise_power)
    return surr.objective(p)
