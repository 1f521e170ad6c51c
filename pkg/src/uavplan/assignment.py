"""Nearest-UAV user pairing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import Scenario


@dataclass(frozen=True)
class Pairing:
    """``serving[k]`` is the id of the UAV serving user ``k``."""

    serving: tuple[int, ...]

    def users_of(self, uav: int) -> list[int]:
        return [k for k, m in enumerate(self.serving) if m == uav]

    def as_dict(self) -> dict[int, int]:
        return dict(enumerate(self.serving))


def assign_users(scenario: Scenario) -> Pairing:
    """Pair each user with the UAV whose *initial* position is closest.

    Ties go to the lowest UAV id. A UAV may end up serving nobody.
    """
    diff = scenario.initial_positions[:, None, :] - scenario.user_positions[None, :, :]
    d2 = np.einsum("mkc,mkc->mk", diff, diff)
    return Pairing(tuple(int(m) for m in np.argmin(d2, axis=0)))
