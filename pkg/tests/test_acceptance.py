"""Acceptance criteria, one test per criterion; PASS/FAIL lines print in the terminal summary.

Criterion 9 audits states recorded by criteria 3 to 8, so it must run after them
(pytest keeps file order).
"""

import math

import mpmath as mp
import numpy as np
import pytest

from uavplan.assignment import Pairing, assign_users
from uavplan.optimizer import (
    PowerProfile,
    SolveState,
    SolverOptions,
    block_coordinate_descent,
    default_initialization,
    optimize_power_fixed_traj,
)
from uavplan.oracle import OracleGrid, grid_search_oracle, power_grid_search
from uavplan.physics import TimeGrid, gain_tensor, sample_all, slot_rates_from_gains
from uavplan.scenario import random_scenario
from uavplan.schemes import run_scheme
from uavplan.surrogate import (
    PowerSurrogate,
    TrajectorySurrogate,
    check_rate,
    check_rate_ub,
    hat_rate,
    hat_rate_lb,
    lambda_lb,
    power_coefficient,
    trajectory_coefficient,
    xi_lb,
)
from uavplan.trajectory import hover, make_trajectory, sample_positions

from conftest import REF_PMAX, criterion, make_scenario

BOUND_SLACK = 1e-12
TIGHT_TOL = 1e-9
GRAD_RTOL = 1e-6
ETA_SLACK = 1e-9

AUDIT: list[tuple[str, list[str]]] = []


def audit(label, state: SolveState, scenario, grid):
    """Independent feasibility check of an emitted state; findings are kept for criterion 9."""
    problems = []
    samples = sample_all(state.trajectories, grid)
    d_min = scenario.min_separation
    for a in range(scenario.num_uavs):
        for b in range(a + 1, scenario.num_uavs):
            gap = np.linalg.norm(samples[a] - samples[b], axis=1).min()
            if gap < d_min * (1 - 1e-9):
                problems.append(f"uav {a}/{b} {gap:.6g} m apart")
    p = np.asarray(state.powers.values)
    pmax = scenario.max_powers[:, None]
    if p.shape != (scenario.num_uavs, grid.slots) or np.any(p < 0) or np.any(p > pmax):
        problems.append("power outside [0, P_max]")
    for m, t in enumerate(state.trajectories):
        total = t.hover_initial + math.dist(t.initial, t.final) / t.speed + t.hover_final
        if abs(total - scenario.period) > 1e-9 * scenario.period or t.hover_initial < 0 or t.hover_final < 0:
            problems.append(f"uav {m} time budget {total!r}")
        if tuple(t.initial) != scenario.uavs[m].initial_position or t.final[2] != scenario.altitude:
            problems.append(f"uav {m} endpoints")
    AUDIT.append((label, [f"{label}: {x}" for x in problems]))


# -- 1. surrogate bounds ------------------------------------------------------------


def random_instance(rng, m=None, k=None):
    m = int(rng.integers(1, 4)) if m is None else m
    k = int(rng.integers(1, 5)) if k is None else k
    h = float(rng.uniform(50, 200))
    users = np.column_stack([rng.uniform(0, 1000, size=(k, 2)), rng.uniform(0, 0.5 * h, size=k)])
    s = make_scenario(
        users,
        [(300.0 * j, 0.0) for j in range(m)],
        max_power=float(10 ** rng.uniform(-7, 0)),
        altitude=h,
        min_separation=0.0,
        ref_gain=float(10 ** rng.uniform(-7, -5)),
        noise_power=float(10 ** rng.uniform(-14, -12)),
        slots=2,
    )
    return s


def random_positions(rng, s, count):
    return np.column_stack([rng.uniform(-200, 1200, size=(count, 2)), np.full(count, s.altitude)])


def test_criterion_1_surrogate_bounds(rng):
    with criterion("1", "surrogate bounds and tightness", limit_s=10) as info:
        worst = dict(hat=-np.inf, lam=-np.inf, xi=-np.inf, check=-np.inf, tight=0.0)
        for _ in range(1000):
            s = random_instance(rng)
            m, k = s.num_uavs, s.num_users
            pmax = s.max_powers[0]
            q_l = random_positions(rng, s, m)
            q = q_l + rng.normal(size=(m, 3)) * 10 ** rng.uniform(-6, 3) * np.array([1, 1, 0])
            p_l, p = rng.uniform(0, pmax, size=(2, m))
            user = int(rng.integers(k))
            u = s.user_positions[user]

            worst["hat"] = max(worst["hat"], hat_rate_lb(q, q_l, p_l, user, s) - hat_rate(q, p_l, user, s))
            lam = float(np.sum((q[0] - u) ** 2))
            worst["lam"] = max(worst["lam"], (lambda_lb(q[0], q_l[0], u) - lam) / max(1.0, lam))
            pair = random_positions(rng, s, 2) if m < 2 else q_l[:2]
            cand = pair + rng.normal(size=(2, 3)) * 10 ** rng.uniform(-6, 3) * np.array([1, 1, 0])
            xi = float(np.sum((cand[0] - cand[1]) ** 2))
            worst["xi"] = max(worst["xi"], (xi_lb(cand[0], cand[1], pair[0], pair[1]) - xi) / max(1.0, xi))
            gains = s.ref_gain / np.sum((q_l - u) ** 2, axis=1)
            serving = int(rng.integers(m))
            worst["check"] = max(
                worst["check"], check_rate(p, gains, serving, s.noise_power) - check_rate_ub(p, p_l, gains, serving, s.noise_power)
            )

            # tightness of every surrogate at the expansion point
            lam_l = float(np.sum((q_l[0] - u) ** 2))
            xi_l = float(np.sum((pair[0] - pair[1]) ** 2))
            serving_all = tuple(int(x) for x in rng.integers(m, size=k))
            pos = q_l[:, None, :]
            g = gain_tensor(pos, s.user_positions, s.ref_gain)
            exact = slot_rates_from_gains(g, p_l[:, None], serving_all, s.noise_power)
            gaps = [
                abs(hat_rate_lb(q_l, q_l, p_l, user, s) - hat_rate(q_l, p_l, user, s)),
                abs(lambda_lb(q_l[0], q_l[0], u) - lam_l) / max(1.0, lam_l),
                abs(xi_lb(pair[0], pair[1], pair[0], pair[1]) - xi_l) / max(1.0, xi_l),
                abs(check_rate_ub(p_l, p_l, gains, serving, s.noise_power) - check_rate(p_l, gains, serving, s.noise_power)),
                float(np.max(np.abs(TrajectorySurrogate(pos, p_l[:, None], serving_all, s).slot_rates(pos) - exact))),
                float(np.max(np.abs(PowerSurrogate(g, p_l[:, None], serving_all, s.noise_power).slot_rates(p_l[:, None]) - exact))),
            ]
            worst["tight"] = max(worst["tight"], max(gaps))
        info["detail"] = ", ".join(f"{key}={val:.2e}" for key, val in worst.items())
        assert worst["hat"] <= BOUND_SLACK
        assert worst["lam"] <= BOUND_SLACK
        assert worst["xi"] <= BOUND_SLACK
        assert worst["check"] <= BOUND_SLACK
        assert worst["tight"] <= TIGHT_TOL


# -- 2. gradient checks -------------------------------------------------------------


mp.mp.dps = 50
MP_LN2 = mp.log(2)


def central(f, x, rel=mp.mpf("1e-20")):
    x = mp.mpf(x)
    h = rel * max(abs(x), mp.mpf(1))
    return (f(x + h) - f(x - h)) / (2 * h)


def mp_hat(d2, p, rho, noise):
    return mp.log(sum(mp.mpf(pj) * rho / dj for pj, dj in zip(p, d2)) + noise) / MP_LN2


def mp_check(p, h, serving, noise):
    return mp.log(sum(mp.mpf(pj) * hj for j, (pj, hj) in enumerate(zip(p, h)) if j != serving) + noise) / MP_LN2


def mp_user_rate(p, gains, serving_k, k, noise):
    """Slot-averaged exact rate of user k; p is (M, N), gains (M, K, N)."""
    m_count, _, n_count = gains.shape
    total = mp.mpf(0)
    for n in range(n_count):
        sig = p[serving_k][n] * mp.mpf(gains[serving_k, k, n])
        inter = sum(p[j][n] * mp.mpf(gains[j, k, n]) for j in range(m_count) if j != serving_k)
        total += mp.log(1 + sig / (inter + mp.mpf(noise))) / MP_LN2
    return total / n_count


def linear_part(f, x, i, step=1.0):
    """Gradient component of an affine function of a float vector, by symmetric difference."""
    xp, xm = np.array(x, float), np.array(x, float)
    xp[i] += step
    xm[i] -= step
    return (f(xp) - f(xm)) / (2 * step)


def test_criterion_2_gradient_checks(rng):
    with criterion("2", "Taylor linear terms vs high-precision finite differences") as info:
        worst = 0.0

        def check(actual, expected):
            nonlocal worst
            actual, expected = np.asarray(actual, float), np.asarray(expected, float)
            err = np.abs(actual - expected)
            nz = expected != 0
            assert np.all(err[~nz] == 0), "non-zero coefficient where the derivative vanishes"
            if nz.any():
                worst = max(worst, float(np.max(err[nz] / np.abs(expected[nz]))))

        for _ in range(100):
            s = random_instance(rng, k=int(rng.integers(1, 4)))
            m, k = s.num_uavs, s.num_users
            pmax = s.max_powers[0]
            rho, noise = mp.mpf(s.ref_gain), mp.mpf(s.noise_power)
            q_l = random_positions(rng, s, m)
            p_l = rng.uniform(0.05, 1.0, size=m) * pmax
            user = int(rng.integers(k))
            u = s.user_positions[user]
            d2 = [mp.mpf(float(x)) for x in np.sum((q_l - u) ** 2, axis=1)]

            # A: derivative of the log total received power w.r.t. each squared distance
            fd = []
            for j in range(m):
                f = lambda t, j=j: mp_hat(d2[:j] + [t] + d2[j + 1 :], p_l, rho, noise)
                fd.append(float(central(f, d2[j])))
            check(trajectory_coefficient(q_l, p_l, user, s), fd)

            # lambda: gradient of the squared UAV-user distance w.r.t. the UAV position
            for i in range(2):
                f = lambda t, i=i: sum(
                    ((t if c == i else mp.mpf(float(q_l[0, c]))) - mp.mpf(float(u[c]))) ** 2 for c in range(3)
                )
                lin = linear_part(lambda x: lambda_lb(x, q_l[0], u), q_l[0], i)
                check(lin, float(central(f, mp.mpf(float(q_l[0, i])))))

            # xi: gradient of the squared UAV-UAV distance w.r.t. each endpoint
            pair = random_positions(rng, s, 2)
            for i in range(2):
                f = lambda t, i=i: sum(
                    ((t if c == i else mp.mpf(float(pair[0, c]))) - mp.mpf(float(pair[1, c]))) ** 2 for c in range(3)
                )
                lin = linear_part(lambda x: xi_lb(x, pair[1], pair[0], pair[1]), pair[0], i)
                check(lin, float(central(f, mp.mpf(float(pair[0, i])))))
                g = lambda t, i=i: sum(
                    (mp.mpf(float(pair[0, c])) - (t if c == i else mp.mpf(float(pair[1, c])))) ** 2 for c in range(3)
                )
                lin = linear_part(lambda x: xi_lb(pair[0], x, pair[0], pair[1]), pair[1], i)
                check(lin, float(central(g, mp.mpf(float(pair[1, i])))))

            # B: derivative of the log interference-plus-noise w.r.t. each power
            gains = s.ref_gain / np.sum((q_l - u) ** 2, axis=1)
            serving = int(rng.integers(m))
            fd = []
            for j in range(m):
                pj = [mp.mpf(float(x)) for x in p_l]
                f = lambda t, j=j: mp_check(pj[:j] + [t] + pj[j + 1 :], gains, serving, noise)
                fd.append(float(central(f, pj[j])) if j != serving else 0.0)
            check(power_coefficient(p_l, gains, serving, s.noise_power), fd)

            # power surrogate gradient at the expansion point equals the exact rate gradient
            n = 2
            pos = np.repeat(q_l[:, None, :], n, axis=1) + np.array([0.0, 25.0, 0.0]) * np.arange(n)[None, :, None]
            g3 = gain_tensor(pos, s.user_positions, s.ref_gain)
            serving_all = tuple(int(x) for x in rng.integers(m, size=k))
            P = rng.uniform(0.05, 1.0, size=(m, n)) * pmax
            jac = PowerSurrogate(g3, P, serving_all, s.noise_power).jacobian(P)
            Pm = [[mp.mpf(float(x)) for x in row] for row in P]
            for kk in range(k):
                fd = np.zeros((m, n))
                for j in range(m):
                    for t in range(n):

                        def f(val, j=j, t=t):
                            trial = [row[:] for row in Pm]
                            trial[j][t] = val
                            return mp_user_rate(trial, g3, serving_all[kk], kk, s.noise_power)

                        fd[j, t] = float(central(f, Pm[j][t]))
                check(jac[kk], fd)
        info["detail"] = f"worst relative error {worst:.2e} over 100 expansion points"
        assert worst <= GRAD_RTOL


# -- 3. monotone ascent -------------------------------------------------------------


def test_criterion_3_monotone_ascent():
    with criterion("3", "monotone ascent on 20 random scenarios", limit_s=300) as info:
        opts = SolverOptions(max_outer_iters=50)
        worst_drop, max_iter, reasons = 0.0, 0, {}
        for i in range(20):
            m, k = 1 + i % 3, 2 + (i * 5) % 7
            s = random_scenario(100 + i, k, m, slots=50)
            grid = TimeGrid.for_scenario(s)
            pairing = assign_users(s)
            seen = []
            state = block_coordinate_descent(
                s, pairing, default_initialization(s, pairing, grid), opts, grid=grid, callback=seen.append
            )
            for st in seen:
                audit(f"c3 scenario {i} iter {st.iteration}", st, s, grid)
            diffs = np.diff(state.eta_history)
            worst_drop = max(worst_drop, float(-diffs.min()) if diffs.size else 0.0)
            max_iter = max(max_iter, state.iteration)
            reasons[state.termination_reason] = reasons.get(state.termination_reason, 0) + 1
            assert np.all(diffs >= -ETA_SLACK), f"scenario {i}: eta decreased"
            assert state.iteration <= 50 and state.converged, f"scenario {i}: {state.termination_reason}"
        info["detail"] = f"max decrease {max(worst_drop, 0.0):.1e}, max iterations {max_iter}, stops {reasons}"


# -- 4. trajectory oracle -----------------------------------------------------------


def test_criterion_4_trajectory_oracle(rng):
    with criterion("4", "BCD vs 11x11x11 trajectory grid oracle (M=1, K=1, N=4)", limit_s=30) as info:
        ratios = []
        for _ in range(4):
            r, ang = rng.uniform(0, 900), rng.uniform(0, 2 * math.pi)
            s = make_scenario([(r * math.cos(ang), r * math.sin(ang))], [(0, 0)], slots=4)
            grid = TimeGrid.for_scenario(s)
            pairing = assign_users(s)
            oracle = grid_search_oracle(s, pairing, OracleGrid(11, 11, (0.0, 0.5, 1.0)), grid)
            for init in (default_initialization(s, pairing, grid), SolveState(0, (hover((0, 0, 100), 10, 100),), PowerProfile.full(s, 4))):
                state = block_coordinate_descent(s, pairing, init, grid=grid)
                audit("c4", state, s, grid)
                ratios.append(state.eta / oracle.eta)
        info["detail"] = f"min ratio {min(ratios):.4f} over {len(ratios)} runs"
        assert min(ratios) >= 0.99


# -- 5. power oracle ----------------------------------------------------------------


def test_criterion_5_power_oracle(rng):
    with criterion("5", "power SCA vs 5-level grid (M=2, K=2, N=2)", limit_s=60) as info:
        ratios = {}
        for regime, pmax in (("noise-limited", REF_PMAX), ("interference-limited", 1.0)):
            for trial in range(5):
                users = rng.uniform(0, 1000, size=(2, 2))
                s = make_scenario(users, [(333, 500), (667, 500)], max_power=pmax, slots=2)
                grid = TimeGrid.for_scenario(s)
                pairing = assign_users(s)
                trajs = default_initialization(s, pairing, grid).trajectories
                oracle, _ = power_grid_search(trajs, pairing, s, grid)
                init = rng.uniform(0, pmax, size=(2, 2))
                res = optimize_power_fixed_traj(trajs, pairing, s, grid, init)
                audit("c5", SolveState(1, trajs, res.powers), s, grid)
                ratios.setdefault(regime, []).append(res.eta / oracle)
        info["detail"] = ", ".join(f"{r}: min ratio {min(v):.4f}" for r, v in ratios.items())
        assert min(min(v) for v in ratios.values()) >= 0.98


# -- 6. closed form -----------------------------------------------------------------


def test_criterion_6_closed_form():
    with criterion("6", "hover-overhead closed form", limit_s=10) as info:
        s = make_scenario([(0, 0)], [(0, 0)])
        grid = TimeGrid.for_scenario(s)
        pairing = assign_users(s)
        state = block_coordinate_descent(s, pairing, default_initialization(s, pairing, grid), grid=grid)
        audit("c6", state, s, grid)
        expected = math.log2(1 + REF_PMAX * s.ref_gain / (s.altitude**2 * s.noise_power))
        info["detail"] = f"eta={state.eta:.8e}, closed form={expected:.8e}"
        assert expected == pytest.approx(1.44197e-3, rel=1e-5)
        assert state.converged
        assert state.eta == pytest.approx(expected, rel=1e-6)


# -- 7. scheme dominance ------------------------------------------------------------


def test_criterion_7_scheme_dominance():
    with criterion("7", "joint >= power-only and trajectory-only on 10 seeds (M=2, K=8)") as info:
        margins = []
        for seed in range(10):
            s = random_scenario(seed, 8, 2)
            grid = TimeGrid.for_scenario(s)
            pairing = assign_users(s)
            init = default_initialization(s, pairing, grid)
            eta = {}
            for scheme in ("joint", "power-only", "trajectory-only"):
                state = run_scheme(scheme, s, pairing, init, grid=grid)
                audit(f"c7 seed {seed} {scheme}", state, s, grid)
                eta[scheme] = state.eta
            margins.append(min(eta["joint"] - eta["power-only"], eta["joint"] - eta["trajectory-only"]))
            assert eta["joint"] >= eta["power-only"] - ETA_SLACK, f"seed {seed}: {eta}"
            assert eta["joint"] >= eta["trajectory-only"] - ETA_SLACK, f"seed {seed}: {eta}"
        info["detail"] = f"smallest margin {min(margins):.2e}"


# -- 8. trend over users and UAVs ---------------------------------------------------

SWEEP_USERS = range(1, 13)
SWEEP_UAVS = (1, 2, 3)
SWEEP_SEEDS = 10
SWEEP_SLOTS = 20


@pytest.fixture(scope="module")
def sweep_table():
    """Seed-averaged (max-min rate, mean per-user rate) for each (M, K), joint scheme."""
    table = {}
    for m in SWEEP_UAVS:
        for k in SWEEP_USERS:
            etas, means = [], []
            for seed in range(SWEEP_SEEDS):
                s = random_scenario(seed, k, m, slots=SWEEP_SLOTS)
                grid = TimeGrid.for_scenario(s)
                pairing = assign_users(s)
                state = run_scheme("joint", s, pairing, default_initialization(s, pairing, grid), grid=grid)
                audit(f"c8 M={m} K={k} seed {seed}", state, s, grid)
                g = gain_tensor(sample_all(state.trajectories, grid), s.user_positions, s.ref_gain)
                rates = slot_rates_from_gains(g, state.powers.values, pairing.serving, s.noise_power).mean(axis=1)
                etas.append(rates.min())
                means.append(rates.mean())
            table[m, k] = (float(np.mean(etas)), float(np.mean(means)))
    return table


def trend_violations(table, column):
    out = []
    for m in SWEEP_UAVS:
        curve = [table[m, k][column] for k in SWEEP_USERS]
        rises = [k for k, (a, b) in zip(SWEEP_USERS[1:], zip(curve, curve[1:])) if b > a]
        out.append((m, rises))
    return out


def check_trend(table, column, info):
    trends = trend_violations(table, column)
    below = [k for k in SWEEP_USERS if table[3, k][column] < table[1, k][column]]
    info["detail"] = "; ".join(f"M={m} rises at K={r}" for m, r in trends) + f"; M=3<M=1 at K={below}"
    for m, rises in trends:
        assert len(rises) <= 1, f"M={m}: mean curve rises at K={rises}"
    assert not below, f"M=3 below M=1 at K={below}"


def test_criterion_8_mean_user_rate_trend(sweep_table):
    with criterion("8", "seed-averaged mean per-user rate non-increasing in K, M=3 >= M=1") as info:
        check_trend(sweep_table, 1, info)


def test_criterion_8b_max_min_rate_trend(sweep_table):
    with criterion("8b", "seed-averaged max-min rate non-increasing in K, M=3 >= M=1") as info:
        check_trend(sweep_table, 0, info)


# -- 9. feasibility audit -----------------------------------------------------------


def test_criterion_9_feasibility_audit():
    with criterion("9", "feasibility of every state emitted in criteria 3-8") as info:
        labels = {label.split()[0] for label, _ in AUDIT}
        problems = [p for _, found in AUDIT for p in found]
        info["detail"] = f"{len(AUDIT)} states from {sorted(labels)}, {len(problems)} violations"
        assert labels == {"c3", "c4", "c5", "c6", "c7", "c8"}, "criteria 3-8 must run first"
        assert not problems, problems[:5]
