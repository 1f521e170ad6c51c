"""Block coordinate ascent over OHFH trajectories and per-slot transmit powers.

Each outer iteration updates, for every UAV in id order, the final x, then the
final y, then the initial hover time, and finally re-solves the powers. Every
block update maximizes a Taylor minorizer of the max-min rate and is kept only
if the exact objective improves, so the recorded objective never decreases.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .assignment import Pairing
from .physics import TimeGrid, gain_tensor, sample_all, slot_rates_from_gains
from .scenario import Scenario
from .surrogate import PowerSurrogate, TrajectorySurrogate, TrustRegionError
from .trajectory import (
    BUDGET_RTOL,
    InfeasibleTrajectory,
    OhfhTrajectory,
    make_trajectory,
    sample_positions,
    separation_violation,
)

log = logging.getLogger(__name__)

BLOCKS = ("x_F", "y_F", "t_I")
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_TINY = 1e-300


class InfeasibleStateError(ValueError):
    pass


@dataclass(frozen=True)
class PowerProfile:
    """(M, N) transmit powers in watts."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("power profile must be 2-D (uavs x slots)")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("powers must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def full(cls, scenario: Scenario, slots: int | None = None) -> "PowerProfile":
        n = scenario.slots if slots is None else slots
        return cls(np.repeat(scenario.max_powers[:, None], n, axis=1))

    def within_bounds(self, max_powers) -> bool:
        limit = np.asarray(max_powers, float)[:, None] * (1.0 + 1e-12)
        return bool(np.all(self.values >= 0) and np.all(self.values <= limit))

    def __eq__(self, other):
        return isinstance(other, PowerProfile) and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True)
class SolverOptions:
    epsilon: float = 1e-4  # relative increase of eta below which the loop stops
    max_outer_iters: int = 50
    max_sca_iters: int = 50
    line_search_tolerance: float = 0.5  # metres, x_F / y_F
    time_search_tolerance: float = 0.05  # seconds, t_I
    power_solver_tolerance: float = 1e-5  # relative width of the bisection bracket
    scan_points: int = 13
    max_gradient_iters: int = 150
    max_trajectory_sweeps: int = 500
    power_restarts: bool = True

    def __post_init__(self):
        for name in (
            "epsilon",
            "max_outer_iters",
            "max_sca_iters",
            "line_search_tolerance",
            "time_search_tolerance",
            "power_solver_tolerance",
            "scan_points",
            "max_gradient_iters",
            "max_trajectory_sweeps",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.scan_points < 2:
            raise ValueError("scan_points must be at least 2")


@dataclass(frozen=True)
class SolveState:
    iteration: int
    trajectories: tuple[OhfhTrajectory, ...]
    powers: PowerProfile
    eta_history: tuple[float, ...] = ()
    converged: bool = False
    termination_reason: str | None = None  # "threshold" | "max_iters" | "stalled"

    @property
    def eta(self) -> float:
        return self.eta_history[-1]


class PowerResult(NamedTuple):
    powers: PowerProfile
    eta: float
    converged: bool


# -- exact objective ------------------------------------------------------------


def _user_rates_from_samples(samples, powers, pairing, scenario) -> np.ndarray:
    gains = gain_tensor(samples, scenario.user_positions, scenario.ref_gain)
    return slot_rates_from_gains(gains, powers, pairing.serving, scenario.noise_power).mean(axis=1)


def exact_eta(trajectories, powers, pairing: Pairing, scenario: Scenario, grid: TimeGrid) -> float:
    p = np.asarray(getattr(powers, "values", powers), float)
    return float(_user_rates_from_samples(sample_all(trajectories, grid), p, pairing, scenario).min())


def feasibility_problems(trajectories, powers, scenario: Scenario, grid: TimeGrid) -> list[str]:
    """Human-readable list of violated constraints (empty when feasible)."""
    problems = []
    if len(trajectories) != scenario.num_uavs:
        return [f"expected {scenario.num_uavs} trajectories, got {len(trajectories)}"]
    for m, (t, uav) in enumerate(zip(trajectories, scenario.uavs)):
        if not np.allclose(t.initial, uav.initial_position, rtol=0, atol=1e-9):
            problems.append(f"uav {m}: trajectory does not start at the UAV's initial position")
        if t.final[2] != scenario.altitude:
            problems.append(f"uav {m}: final altitude differs from H")
        if t.hover_initial < 0 or t.hover_final < 0:
            problems.append(f"uav {m}: negative hover time")
        if abs(t.budget_residual()) > BUDGET_RTOL * t.period:
            problems.append(f"uav {m}: time budget identity violated")
        if t.speed != uav.speed or t.period != scenario.period:
            problems.append(f"uav {m}: speed or period differs from the scenario")
    p = powers if isinstance(powers, PowerProfile) else PowerProfile(powers)
    if p.values.shape != (scenario.num_uavs, grid.slots):
        problems.append(f"power profile shape {p.values.shape} != {(scenario.num_uavs, grid.slots)}")
    elif not p.within_bounds(scenario.max_powers):
        problems.append("power outside [0, P_max]")
    if not problems:
        v = separation_violation(sample_all(trajectories, grid), scenario.min_separation)
        if v is not None:
            problems.append(
                f"separation below d_min: uav {v.uav_a} and uav {v.uav_b} at slot {v.slot} ({v.distance:.6g} m)"
            )
    return problems


# -- power subproblem -------------------------------------------------------------


def _projected_violation_descent(surr: PowerSurrogate, pmax, eta, u0, max_iters):
    """Minimize sum_k max(0, eta - f_k)^2 over the unit box by projected gradient.

    Returns (u, status) with status "feasible", "infeasible" (certified through
    the Frank-Wolfe lower bound of the convex violation) or "unknown".
    """
    scale = pmax[:, None]
    u = u0.copy()

    def value_grad(u):
        f = surr.user_rates(u * scale)
        short = np.maximum(eta - f, 0.0)
        if not short.any():
            return 0.0, None, f
        jac = surr.jacobian(u * scale)  # (K, M, N)
        g = -2.0 * np.tensordot(short, jac, axes=1) * scale
        return float(np.sum(short * short)), g, f

    v, g, f = value_grad(u)
    if g is None:
        return u, "feasible"
    step = 0.5 / max(float(np.abs(g).max()), _TINY)
    checkpoint = v
    for it in range(1, max_iters + 1):
        # Frank-Wolfe bound: V(u) + min over box corners of g.(s - u)
        corner = np.where(g > 0, 0.0, 1.0)
        if v + float(np.sum(g * (corner - u))) > 0.0:
            return u, "infeasible"
        while True:
            u_new = np.clip(u - step * g, 0.0, 1.0)
            d = u_new - u
            if not d.any():
                return u, "unknown"
            v_new, g_new, f = value_grad(u_new)
            if v_new <= v + 1e-4 * float(np.sum(g * d)) or step < 1e-30:
                break
            step *= 0.5
        if g_new is None:
            return u_new, "feasible"
        # Barzilai-Borwein step for the next iteration
        y = g_new - g
        sy = float(np.sum(d * y))
        step = float(np.sum(d * d)) / sy if sy > 0 else step * 2.0
        u, v, g = u_new, v_new, g_new
        if it % 10 == 0:
            if v > 0.99 * checkpoint:
                break  # stalled: V is close to its minimum, which is positive or tiny
            checkpoint = v
    return u, "unknown"


def _maximize_surrogate_powers(surr: PowerSurrogate, pmax, p_start, options: SolverOptions):
    """Bisection on the max-min level with a projected-gradient feasibility test."""
    scale = pmax[:, None]

    def level(u):
        return float(surr.user_rates(u * scale).min())

    starts = [np.clip(p_start / scale, 0.0, 1.0), np.ones_like(p_start)]
    levels = [level(u) for u in starts]
    i = int(np.argmax(levels))
    best_u, lo = starts[i], levels[i]

    # each user's surrogate rate is below its interference-free rate at full power
    serving_gain = np.where(surr.mask, surr.gains, 0.0).sum(axis=0)  # (K, N)
    serving_pmax = (surr.mask[:, :, 0] * pmax[:, None]).sum(axis=0)  # (K,)
    hi = float(np.min(np.mean(np.log1p(serving_pmax[:, None] * serving_gain / surr.noise), axis=1) / math.log(2)))
    hi = max(hi, lo)

    while hi - lo > options.power_solver_tolerance * max(abs(hi), _TINY):
        eta = 0.5 * (lo + hi)
        u, status = _projected_violation_descent(surr, pmax, eta, best_u, options.max_gradient_iters)
        t = level(u)
        if t > lo:
            best_u, lo = u, t
        if t < eta:
            hi = eta
    return best_u * scale, lo


def time_sharing_starts(num_uavs: int, slots: int, pmax) -> list[np.ndarray]:
    """Round-robin schedules: in slot n only UAV (n + r) mod M transmits, one per shift r."""
    starts = []
    for r in range(num_uavs):
        p = np.zeros((num_uavs, slots))
        n = np.arange(slots)
        p[(n + r) % num_uavs, n] = pmax[(n + r) % num_uavs]
        starts.append(p)
    return starts


def _power_sca(gains, p0, pairing, scenario, options):
    pmax = scenario.max_powers

    def exact(p):
        return float(slot_rates_from_gains(gains, p, pairing.serving, scenario.noise_power).mean(axis=1).min())

    p, eta = p0, exact(p0)
    for _ in range(options.max_sca_iters):
        surr = PowerSurrogate(gains, p, pairing.serving, scenario.noise_power)
        p_new, predicted = _maximize_surrogate_powers(surr, pmax, p, options)
        p_new = np.clip(p_new, 0.0, pmax[:, None])
        eta_new = exact(p_new)
        if eta_new <= eta:
            return p, eta, True
        gain = predicted - eta
        p, eta = p_new, eta_new
        if gain < options.epsilon * max(abs(eta), _TINY):
            return p, eta, True
    return p, eta, False


def optimize_power_fixed_traj(
    trajs: Sequence[OhfhTrajectory],
    pairing: Pairing,
    scenario: Scenario,
    grid: TimeGrid,
    init_powers,
    options: SolverOptions = SolverOptions(),
) -> PowerResult:
    """Successive convex approximation on the powers with trajectories held fixed.

    SCA runs from ``init_powers`` and, when ``options.power_restarts`` is set
    and there is more than one UAV, also from full power and from each
    round-robin time-sharing schedule; the best exact result wins. The
    returned profile never has a lower exact max-min rate than ``init_powers``.
    """
    p0 = np.array(getattr(init_powers, "values", init_powers), dtype=float)
    gains = gain_tensor(sample_all(trajs, grid), scenario.user_positions, scenario.ref_gain)
    starts = [p0]
    if options.power_restarts and scenario.num_uavs > 1:
        starts.append(np.repeat(scenario.max_powers[:, None], grid.slots, axis=1))
        starts += time_sharing_starts(scenario.num_uavs, grid.slots, scenario.max_powers)

    best = None
    for start in starts:
        p, eta, ok = _power_sca(gains, start, pairing, scenario, options)
        if best is None or eta > best[1]:
            best = (p, eta, ok)
    p, eta, converged = best
    if not converged:
        log.warning("power SCA stopped after %d iterations without meeting the tolerance", options.max_sca_iters)
    return PowerResult(PowerProfile(p), eta, converged)


# -- trajectory blocks ------------------------------------------------------------


def block_interval(block: str, traj: OhfhTrajectory) -> tuple[float, float]:
    """Feasible range of one scalar of ``traj`` with the other two held fixed."""
    (xi, yi, _), (xf, yf, _) = traj.initial, traj.final
    reach = traj.speed * (traj.period - traj.hover_initial)
    if block == "x_F":
        half = math.sqrt(max(reach * reach - (yf - yi) ** 2, 0.0))
        return xi - half, xi + half
    if block == "y_F":
        half = math.sqrt(max(reach * reach - (xf - xi) ** 2, 0.0))
        return yi - half, yi + half
    if block == "t_I":
        return 0.0, max(traj.period - traj.flight_time, 0.0)
    raise ValueError(f"unknown block {block!r}")


def block_value(block: str, traj: OhfhTrajectory) -> float:
    return {"x_F": traj.final[0], "y_F": traj.final[1], "t_I": traj.hover_initial}[block]


def with_block(traj: OhfhTrajectory, block: str, value: float) -> OhfhTrajectory:
    x, y, z = traj.final
    t_i = traj.hover_initial
    if block == "x_F":
        x = value
    elif block == "y_F":
        y = value
    elif block == "t_I":
        t_i = value
    else:
        raise ValueError(f"unknown block {block!r}")
    return make_trajectory(traj.initial, (x, y, z), t_i, traj.speed, traj.period)


def _golden_max(f, a, b, tol):
    """Golden-section search for a maximum of ``f`` on [a, b]; returns all evaluations."""
    evals = []
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    evals += [(c, fc), (d, fd)]
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
            evals.append((c, fc))
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
            evals.append((d, fd))
    return evals


def update_trajectory_block(
    block: str,
    m: int,
    state: SolveState,
    pairing: Pairing,
    scenario: Scenario,
    grid: TimeGrid,
    options: SolverOptions = SolverOptions(),
) -> OhfhTrajectory:
    """Line search on one scalar of UAV ``m``'s trajectory.

    The search maximizes the trajectory surrogate built at the current state; a
    coarse scan picks the bracket and golden-section search refines it. The
    winner is returned only if the exact max-min rate strictly improves.
    """
    trajs = state.trajectories
    current = trajs[m]
    powers = state.powers.values
    samples = sample_all(trajs, grid)
    surr = TrajectorySurrogate(samples, powers, pairing.serving, scenario)
    current_value = block_value(block, current)
    base = surr.objective(samples)

    cache: dict[float, float] = {}

    def candidate_samples(value):
        try:
            traj = with_block(current, block, value)
        except InfeasibleTrajectory:
            return None, None
        cand = samples.copy()
        cand[m] = sample_positions(traj, grid)
        if separation_violation(cand, scenario.min_separation) is not None:
            return None, None
        return traj, cand

    def f(value):
        value = float(value)
        if value in cache:
            return cache[value]
        _, cand = candidate_samples(value)
        out = -math.inf
        if cand is not None:
            try:
                out = surr.objective(cand)
            except TrustRegionError:
                pass
        cache[value] = out
        return out

    cache[float(current_value)] = base
    lo, hi = block_interval(block, current)
    if hi - lo <= 0:
        return current
    grid_vals = np.linspace(lo, hi, options.scan_points)
    scan = sorted(set(float(v) for v in grid_vals) | {float(current_value)})
    scores = [f(v) for v in scan]
    i = int(np.argmax(scores))
    if math.isfinite(scores[i]):
        left, right = scan[max(i - 1, 0)], scan[min(i + 1, len(scan) - 1)]
        tol = options.time_search_tolerance if block == "t_I" else options.line_search_tolerance
        if right - left > tol:
            _golden_max(f, left, right, tol)

    best_value, best_score = max(cache.items(), key=lambda kv: (kv[1], -abs(kv[0] - current_value)))
    if best_score <= base or best_value == current_value:
        return current

    traj, cand = candidate_samples(best_value)
    old = float(_user_rates_from_samples(samples, powers, pairing, scenario).min())
    new = float(_user_rates_from_samples(cand, powers, pairing, scenario).min())
    if new < old - 1e-9 * max(abs(old), 1.0):
        log.warning("surrogate ascent but exact decrease on %s of uav %d: %g -> %g", block, m, old, new)
    return traj if new > old else current


# -- outer loop -------------------------------------------------------------------


def check_initial_state(state: SolveState, scenario: Scenario, grid: TimeGrid) -> None:
    problems = feasibility_problems(state.trajectories, state.powers, scenario, grid)
    if problems:
        raise InfeasibleStateError("infeasible initial state: " + "; ".join(problems))


def trajectory_phase(
    state: SolveState,
    pairing: Pairing,
    scenario: Scenario,
    grid: TimeGrid,
    options: SolverOptions = SolverOptions(),
    blocks: Sequence[str] = BLOCKS,
) -> tuple[OhfhTrajectory, ...]:
    """Sweep x_F, y_F, t_I over all UAVs with powers fixed until no block moves.

    A sweep with a negligible gain can still be followed by productive ones,
    so only a sweep that leaves every trajectory unchanged ends the phase.
    """
    trajs = list(state.trajectories)
    if not blocks:
        return tuple(trajs)
    for _ in range(options.max_trajectory_sweeps):
        before = tuple(trajs)
        for block in blocks:
            for m in range(scenario.num_uavs):
                working = replace(state, trajectories=tuple(trajs))
                trajs[m] = update_trajectory_block(block, m, working, pairing, scenario, grid, options)
        if tuple(trajs) == before:
            break
    return tuple(trajs)


def block_coordinate_descent(
    scenario: Scenario,
    pairing: Pairing,
    init_state: SolveState,
    options: SolverOptions = SolverOptions(),
    *,
    blocks: Sequence[str] = BLOCKS,
    update_power: bool = True,
    grid: TimeGrid | None = None,
    callback: Callable[[SolveState], None] | None = None,
) -> SolveState:
    """Alternate trajectory block updates and power re-allocation until eta stalls.

    ``eta_history[0]`` is the initial objective; one entry is appended per
    outer iteration. Passing ``blocks=()`` or ``update_power=False`` restricts
    the move set (power-only / trajectory-only schemes).
    """
    grid = grid or TimeGrid.for_scenario(scenario)
    check_initial_state(init_state, scenario, grid)
    eta = exact_eta(init_state.trajectories, init_state.powers, pairing, scenario, grid)
    state = replace(init_state, iteration=0, eta_history=(eta,), converged=False, termination_reason=None)

    for it in range(1, options.max_outer_iters + 1):
        trajs = list(trajectory_phase(state, pairing, scenario, grid, options, blocks))
        powers = state.powers
        if update_power:
            result = optimize_power_fixed_traj(trajs, pairing, scenario, grid, powers, options)
            powers = result.powers
        new_eta = exact_eta(trajs, powers, pairing, scenario, grid)
        if new_eta < eta:
            # cannot happen with accept-if-better blocks; keep the previous iterate if it does
            log.warning("outer iteration %d decreased eta (%g -> %g); reverting", it, eta, new_eta)
            trajs, powers, new_eta = list(state.trajectories), state.powers, eta
        moved = tuple(trajs) != state.trajectories or powers != state.powers
        state = replace(
            state,
            iteration=it,
            trajectories=tuple(trajs),
            powers=powers,
            eta_history=state.eta_history + (new_eta,),
        )
        if callback is not None:
            callback(state)
        gain = new_eta - eta
        eta = new_eta
        if not moved:
            return replace(state, converged=True, termination_reason="stalled")
        if gain < options.epsilon * max(abs(eta), _TINY):
            return replace(state, converged=True, termination_reason="threshold")
    return replace(state, converged=False, termination_reason="max_iters")


# -- initialization ---------------------------------------------------------------


def _clip_reach(start: np.ndarray, target: np.ndarray, reach: float) -> np.ndarray:
    d = target - start
    n = float(np.linalg.norm(d))
    if n <= reach:
        return target
    return start + d * (reach / n)


def default_initialization(scenario: Scenario, pairing: Pairing, grid: TimeGrid | None = None) -> SolveState:
    """Fly each UAV toward the centroid of its users, no initial hover, full power.

    Final points that end up closer than d_min are pushed apart along their
    connecting line. If the sampled paths still conflict, offending UAVs fall
    back to hovering in place, which is always feasible.
    """
    grid = grid or TimeGrid.for_scenario(scenario)
    h = scenario.altitude
    starts = scenario.initial_positions
    finals = starts.copy()
    for m, uav in enumerate(scenario.uavs):
        users = pairing.users_of(m)
        if not users:
            continue
        centroid = scenario.user_positions[users, :2].mean(axis=0)
        target = np.array([centroid[0], centroid[1], h])
        finals[m] = _clip_reach(starts[m], target, uav.speed * scenario.period)

    d_min = scenario.min_separation
    for a in range(scenario.num_uavs):
        for b in range(a + 1, scenario.num_uavs):
            gap = finals[b] - finals[a]
            dist = float(np.linalg.norm(gap))
            if dist >= d_min:
                continue
            if dist > 0:
                axis = gap / dist
            else:
                axis = starts[b] - starts[a]
                axis = axis / np.linalg.norm(axis) if np.linalg.norm(axis) > 0 else np.array([1.0, 0.0, 0.0])
            mid = 0.5 * (finals[a] + finals[b])
            finals[a] = mid - 0.5 * d_min * axis
            finals[b] = mid + 0.5 * d_min * axis

    def build(m, final):
        uav = scenario.uavs[m]
        try:
            return make_trajectory(uav.initial_position, tuple(final), 0.0, uav.speed, scenario.period)
        except InfeasibleTrajectory:
            return make_trajectory(uav.initial_position, uav.initial_position, 0.0, uav.speed, scenario.period)

    trajs = [build(m, finals[m]) for m in range(scenario.num_uavs)]
    while True:
        v = separation_violation(sample_all(trajs, grid), d_min)
        if v is None:
            break
        # revert the higher id first; a full fallback to hovering is feasible by construction
        for m in (v.uav_b, v.uav_a):
            if trajs[m].flight_distance > 0:
                uav = scenario.uavs[m]
                trajs[m] = make_trajectory(uav.initial_position, uav.initial_position, 0.0, uav.speed, scenario.period)
                break
        else:
            raise InfeasibleStateError("initial UAV positions violate the minimum separation")

    powers = PowerProfile.full(scenario, grid.slots)
    eta = exact_eta(trajs, powers, pairing, scenario, grid)
    return SolveState(0, tuple(trajs), powers, (eta,))
