"""Command-line front end: solve one instance under one or all schemes, or sweep sizes."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .assignment import Pairing, assign_users
from .optimizer import InfeasibleStateError, SolverOptions, SolveState, default_initialization
from .physics import TimeGrid, sample_all, slot_rates
from .scenario import Scenario, ScenarioError, load_scenario, random_scenario, with_slots
from .schemes import SCHEMES, run_scheme

log = logging.getLogger("uavplan")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_SCENARIO = 3
EXIT_INFEASIBLE = 4

TRAJECTORY_FILE = "trajectory.csv"
RATES_FILE = "rates.csv"
REPORT_FILE = "report.json"


@dataclass
class RunReport:
    scheme: str
    final_eta: float
    eta_history: list[float]
    user_rates: list[float]
    iterations: int
    converged: bool
    termination_reason: str | None
    pairing: list[int]
    trajectories: list[dict]
    options: dict
    scenario_digest: str
    wall_time_s: float | None = None

    def to_json(self) -> str:
        data = asdict(self)
        if self.wall_time_s is None:
            del data["wall_time_s"]
        return json.dumps(data, indent=2) + "\n"


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trajectory_csv(path: Path, state: SolveState, grid: TimeGrid) -> None:
    samples = sample_all(state.trajectories, grid)
    times = grid.midpoints
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slot", "time_s", "uav_id", "x_m", "y_m", "z_m"])
        for n in range(grid.slots):
            for m in range(samples.shape[0]):
                x, y, z = samples[m, n]
                w.writerow([n, _fmt(times[n]), m, _fmt(x), _fmt(y), _fmt(z)])


def write_rates_csv(path: Path, rates: np.ndarray, pairing: Pairing) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slot", "user_id", "serving_uav", "rate_bps_hz"])
        for n in range(rates.shape[1]):
            for k in range(rates.shape[0]):
                w.writerow([n, k, pairing.serving[k], _fmt(rates[k, n])])


def build_report(scheme, state, rates, pairing, scenario, options, wall_time=None) -> RunReport:
    user_rates = rates.mean(axis=1)
    return RunReport(
        scheme=scheme,
        final_eta=float(user_rates.min()),
        eta_history=[float(e) for e in state.eta_history],
        user_rates=[float(r) for r in user_rates],
        iterations=state.iteration,
        converged=state.converged,
        termination_reason=state.termination_reason,
        pairing=list(pairing.serving),
        trajectories=[
            {
                "uav_id": m,
                "initial": list(t.initial),
                "final": list(t.final),
                "hover_initial_s": t.hover_initial,
                "hover_final_s": t.hover_final,
            }
            for m, t in enumerate(state.trajectories)
        ],
        options=asdict(options),
        scenario_digest=scenario.digest(),
        wall_time_s=wall_time,
    )


def solve_and_write(scenario: Scenario, schemes, options: SolverOptions, out: Path, record_time=False) -> dict:
    """Run each scheme from one shared initialization and write its three files."""
    grid = TimeGrid.for_scenario(scenario)
    pairing = assign_users(scenario)
    init = default_initialization(scenario, pairing, grid)
    nested = len(schemes) > 1
    reports = {}
    for scheme in schemes:
        start = time.perf_counter()
        state = run_scheme(scheme, scenario, pairing, init, options, grid)
        elapsed = time.perf_counter() - start
        rates = slot_rates(state.trajectories, state.powers, pairing, scenario, grid)
        report = build_report(scheme, state, rates, pairing, scenario, options, elapsed if record_time else None)
        target = out / scheme if nested else out
        target.mkdir(parents=True, exist_ok=True)
        write_trajectory_csv(target / TRAJECTORY_FILE, state, grid)
        write_rates_csv(target / RATES_FILE, rates, pairing)
        (target / REPORT_FILE).write_text(report.to_json())
        reports[scheme] = report
        log.info("%s: eta=%.6g after %d iterations (%s)", scheme, report.final_eta, state.iteration,
                 state.termination_reason)
    return reports


def eta_from_rate_trace(path) -> float:
    """Recompute the max-min average rate from a rates.csv trace."""
    per_user: dict[int, list[float]] = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            per_user.setdefault(int(row["user_id"]), []).append(float(row["rate_bps_hz"]))
    return min(float(np.mean(v)) for v in per_user.values())


# -- sweep --------------------------------------------------------------------------


def _sweep_cell(args):
    m, k, seed, area, slots, options = args
    scenario = random_scenario(seed, k, m, area, slots=slots)
    grid = TimeGrid.for_scenario(scenario)
    pairing = assign_users(scenario)
    init = default_initialization(scenario, pairing, grid)
    state = run_scheme("joint", scenario, pairing, init, options, grid)
    rates = slot_rates(state.trajectories, state.powers, pairing, scenario, grid).mean(axis=1)
    return m, k, seed, float(rates.min()), float(rates.mean())


def sweep(users_range, uavs_range, seeds, area=1000.0, slots=100, options=SolverOptions(), base_seed=0, jobs=1):
    """Seed-averaged joint-scheme results for every (M, K) cell.

    Returns rows ``(M, K, mean final eta, mean per-user average rate)`` sorted by M then K.
    """
    cells = [
        (m, k, base_seed + s, area, slots, options)
        for m in uavs_range
        for k in users_range
        for s in range(seeds)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_cell, cells, chunksize=1))
    else:
        results = [_sweep_cell(c) for c in cells]
    grouped: dict[tuple[int, int], list[tuple[float, float]]] = {}
    for m, k, _, eta, mean_rate in results:
        grouped.setdefault((m, k), []).append((eta, mean_rate))
    rows = []
    for (m, k) in sorted(grouped):
        vals = np.array(grouped[m, k])
        rows.append((m, k, float(vals[:, 0].mean()), float(vals[:, 1].mean())))
    return rows


def write_sweep(rows, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["uavs", "users", "mean_eta", "mean_user_rate"])
    for m, k, eta, rate in rows:
        w.writerow([m, k, _fmt(eta), _fmt(rate)])


# -- argument handling ----------------------------------------------------------------


def _range(text: str) -> range:
    try:
        a, b = text.split("..")
        lo, hi = int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a..b, got {text!r}")
    if lo < 1 or hi < lo:
        raise argparse.ArgumentTypeError(f"empty or non-positive range {text!r}")
    return range(lo, hi + 1)


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="uavplan",
        description="Plan multi-UAV hover-fly-hover trajectories and transmit powers for max-min user rate.",
    )
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", type=Path, help="scenario file (JSON or YAML)")
    src.add_argument("--random", action="store_true", help="generate a random scenario")
    src.add_argument("--sweep", action="store_true", help="sweep user/UAV counts over random scenarios")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--users", type=_positive_int, default=8)
    p.add_argument("--uavs", type=_positive_int, default=2)
    p.add_argument("--area", type=float, default=1000.0, help="side of the square user area in metres")
    p.add_argument("--scheme", choices=SCHEMES + ("all",), default="joint")
    p.add_argument("--slots", type=_positive_int, help="time slots per period (default: scenario value, 100)")
    p.add_argument("--epsilon", type=_positive_float, default=SolverOptions.epsilon)
    p.add_argument("--max-iters", type=_positive_int, default=SolverOptions.max_outer_iters)
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--users-range", type=_range, default=range(1, 13))
    p.add_argument("--uavs-range", type=_range, default=range(1, 4))
    p.add_argument("--seeds", type=_positive_int, default=10)
    p.add_argument("--jobs", type=_positive_int, default=1, help="parallel worker processes for --sweep")
    p.add_argument("--record-time", action="store_true", help="include wall time in reports (not reproducible)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.slots is not None and args.slots < 2:
        print("error: --slots must be at least 2", file=sys.stderr)
        return EXIT_USAGE
    options = SolverOptions(epsilon=args.epsilon, max_outer_iters=args.max_iters)

    if args.sweep:
        rows = sweep(
            args.users_range, args.uavs_range, args.seeds, args.area, args.slots or 100, options, args.seed, args.jobs
        )
        write_sweep(rows, sys.stdout)
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            with open(args.out / "sweep.csv", "w", newline="") as fh:
                write_sweep(rows, fh)
        return EXIT_OK

    if args.out is None:
        print("error: --out is required unless --sweep is given", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.scenario is not None:
            scenario = load_scenario(args.scenario)
            if args.slots is not None:
                scenario = with_slots(scenario, args.slots)
        else:
            scenario = random_scenario(args.seed, args.users, args.uavs, args.area, slots=args.slots or 100)
    except (OSError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO

    schemes = SCHEMES if args.scheme == "all" else (args.scheme,)
    try:
        reports = solve_and_write(scenario, schemes, options, args.out, args.record_time)
    except InfeasibleStateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    for scheme, report in reports.items():
        print(f"{scheme}\t{report.final_eta!r}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
