import time
from contextlib import contextmanager

import numpy as np
import pytest

from uavplan.scenario import Scenario, UavSpec, UserNode

# Simulation constants of the reference setup, in linear units.
REFERENCE = dict(altitude=100.0, period=100.0, min_separation=50.0, ref_gain=1e-6, noise_power=1e-13)
REF_SPEED = 10.0
REF_PMAX = 1e-6


def make_scenario(users, uavs, *, speed=REF_SPEED, max_power=REF_PMAX, slots=100, **overrides):
    """Scenario from plain (x, y[, z]) user tuples and (x, y) UAV tuples."""
    params = {**REFERENCE, **overrides}
    h = params["altitude"]
    user_nodes = tuple(UserNode(i, (float(u[0]), float(u[1]), float(u[2]) if len(u) > 2 else 0.0)) for i, u in enumerate(users))
    uav_specs = tuple(UavSpec(j, (float(x), float(y), h), speed, max_power) for j, (x, y) in enumerate(uavs))
    return Scenario(users=user_nodes, uavs=uav_specs, slots=slots, **params)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


# -- acceptance bookkeeping ---------------------------------------------------------

ACCEPTANCE: dict[str, tuple[str, str, str]] = {}


@contextmanager
def criterion(key: str, title: str, limit_s: float | None = None):
    """Record PASS/FAIL for one acceptance criterion; ``info['detail']`` is echoed in the summary."""
    info = {"detail": ""}
    start = time.perf_counter()
    try:
        yield info
        elapsed = time.perf_counter() - start
        if limit_s is not None:
            assert elapsed < limit_s, f"runtime {elapsed:.1f}s exceeds {limit_s:g}s"
    except BaseException as exc:
        msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        ACCEPTANCE[key] = ("FAIL", title, f"{info['detail']} | {msg}".strip(" |"))
        raise
    ACCEPTANCE[key] = ("PASS", title, f"{info['detail']} ({elapsed:.1f}s)".strip())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("ab")), k)):
        status, title, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{status}] {key}. {title}: {detail}")
