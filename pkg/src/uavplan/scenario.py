"""Problem instances: ground users, UAVs and the physical constants of one period."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

# Simulation constants used when generating random instances.
DEFAULT_ALTITUDE = 100.0
DEFAULT_PERIOD = 100.0
DEFAULT_MIN_SEPARATION = 50.0
DEFAULT_REF_GAIN = 1e-6  # -60 dB at 1 m
DEFAULT_NOISE = 1e-13  # -100 dBm
DEFAULT_SPEED = 10.0
DEFAULT_MAX_POWER = 1e-6  # -30 dBm
DEFAULT_SLOTS = 100


class ScenarioError(ValueError):
    """Raised when a scenario file cannot be parsed or violates an invariant."""


def db_to_linear(db: float) -> float:
    try:
        return 10.0 ** (db / 10.0)
    except OverflowError:
        raise ScenarioError(f"{db!r} dB is out of range") from None


def dbm_to_watts(dbm: float) -> float:
    return db_to_linear(dbm - 30.0)


@dataclass(frozen=True)
class UserNode:
    id: int
    position: tuple[float, float, float]


@dataclass(frozen=True)
class UavSpec:
    id: int
    initial_position: tuple[float, float, float]
    speed: float
    max_power: float


@dataclass(frozen=True)
class Scenario:
    """Immutable world description for a single communication period.

    Powers are in watts and gains are linear; unit conversion happens at load time.
    """

    users: tuple[UserNode, ...]
    uavs: tuple[UavSpec, ...]
    altitude: float
    period: float
    min_separation: float
    ref_gain: float
    noise_power: float
    slots: int
    _arrays: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        object.__setattr__(self, "uavs", tuple(self.uavs))
        validate(self)

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def num_uavs(self) -> int:
        return len(self.uavs)

    def _cached(self, key, build):
        if key not in self._arrays:
            arr = build()
            arr.setflags(write=False)
            self._arrays[key] = arr
        return self._arrays[key]

    @property
    def user_positions(self) -> np.ndarray:
        """(K, 3) array of user coordinates."""
        return self._cached("users", lambda: np.array([u.position for u in self.users], dtype=float))

    @property
    def initial_positions(self) -> np.ndarray:
        """(M, 3) array of UAV starting coordinates."""
        return self._cached("uavs", lambda: np.array([u.initial_position for u in self.uavs], dtype=float))

    @property
    def max_powers(self) -> np.ndarray:
        return self._cached("pmax", lambda: np.array([u.max_power for u in self.uavs], dtype=float))

    @property
    def speeds(self) -> np.ndarray:
        return self._cached("speed", lambda: np.array([u.speed for u in self.uavs], dtype=float))

    def digest(self) -> str:
        """Short stable hash of the serialized scenario."""
        return hashlib.sha256(dumps_scenario(self).encode()).hexdigest()[:16]


def _finite(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def validate(s: Scenario) -> None:
    """Raise ScenarioError naming the first violated invariant."""
    for name in ("altitude", "period", "min_separation", "ref_gain", "noise_power"):
        if not _finite(getattr(s, name)):
            raise ScenarioError(f"{name} must be a finite number")
    if s.altitude <= 0:
        raise ScenarioError("altitude must be positive")
    if s.period <= 0:
        raise ScenarioError("period must be positive")
    if s.min_separation < 0:
        raise ScenarioError("min_separation must be non-negative")
    if s.ref_gain <= 0:
        raise ScenarioError("ref_gain must be positive")
    if s.noise_power <= 0:
        raise ScenarioError("noise_power must be positive")
    if not isinstance(s.slots, int) or isinstance(s.slots, bool) or s.slots < 2:
        raise ScenarioError("slots must be an integer >= 2")
    if not s.users:
        raise ScenarioError("at least one user is required")
    if not s.uavs:
        raise ScenarioError("at least one UAV is required")

    for i, u in enumerate(s.users):
        if u.id != i:
            raise ScenarioError(f"user ids must be 0..K-1 in order (got {u.id} at position {i})")
        if len(u.position) != 3 or not all(_finite(c) for c in u.position):
            raise ScenarioError(f"user {u.id}: position must be three finite numbers")
        if u.position[2] < 0:
            raise ScenarioError(f"user {u.id}: z must be >= 0")
        if u.position[2] >= s.altitude:
            raise ScenarioError(f"user {u.id}: z must be below the flight altitude")
    for i, v in enumerate(s.uavs):
        if v.id != i:
            raise ScenarioError(f"uav ids must be 0..M-1 in order (got {v.id} at position {i})")
        if len(v.initial_position) != 3 or not all(_finite(c) for c in v.initial_position):
            raise ScenarioError(f"uav {v.id}: position must be three finite numbers")
        if v.initial_position[2] != s.altitude:
            raise ScenarioError(f"uav {v.id}: initial z must equal the altitude")
        if not _finite(v.speed) or v.speed <= 0:
            raise ScenarioError(f"uav {v.id}: speed must be positive")
        if not _finite(v.max_power) or v.max_power <= 0:
            raise ScenarioError(f"uav {v.id}: max_power must be positive")

    for i in range(len(s.uavs)):
        for j in range(i + 1, len(s.uavs)):
            d = math.dist(s.uavs[i].initial_position, s.uavs[j].initial_position)
            if d < s.min_separation:
                raise ScenarioError(
                    f"initial UAV separation below d_min: uav {i} and uav {j} are {d:.6g} m apart"
                )


_TOP_KEYS = {"altitude_m", "period_s", "min_separation_m", "slots", "users", "uavs"}
_TOP_ALTS = (("ref_gain_db", "ref_gain_linear"), ("noise_dbm", "noise_w"))
_USER_KEYS = {"id", "x", "y", "z"}
_UAV_KEYS = {"id", "x", "y", "speed_mps"}
_UAV_ALTS = ("max_power_dbm", "max_power_w")


def _pick_alternative(d: dict, keys: tuple[str, str], where: str) -> tuple[str, object]:
    present = [k for k in keys if k in d]
    if len(present) != 1:
        raise ScenarioError(f"{where}: exactly one of {keys[0]!r} or {keys[1]!r} is required")
    return present[0], d[present[0]]


def _number(value, where: str) -> float:
    if not _finite(value):
        raise ScenarioError(f"{where}: expected a finite number, got {value!r}")
    return float(value)


def _integer(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"{where}: expected an integer, got {value!r}")
    return value


def scenario_from_dict(data) -> Scenario:
    """Build a Scenario from the file schema; unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a mapping")
    allowed = _TOP_KEYS | {k for pair in _TOP_ALTS for k in pair}
    unknown = set(data) - allowed
    if unknown:
        raise ScenarioError(f"unknown keys: {sorted(unknown)}")
    missing = _TOP_KEYS - set(data)
    if missing:
        raise ScenarioError(f"missing keys: {sorted(missing)}")

    altitude = _number(data["altitude_m"], "altitude_m")
    key, raw = _pick_alternative(data, _TOP_ALTS[0], "scenario")
    ref_gain = db_to_linear(_number(raw, key)) if key == "ref_gain_db" else _number(raw, key)
    key, raw = _pick_alternative(data, _TOP_ALTS[1], "scenario")
    noise = dbm_to_watts(_number(raw, key)) if key == "noise_dbm" else _number(raw, key)

    if not isinstance(data["users"], list) or not isinstance(data["uavs"], list):
        raise ScenarioError("users and uavs must be lists")

    users = []
    for i, u in enumerate(data["users"]):
        where = f"users[{i}]"
        if not isinstance(u, dict):
            raise ScenarioError(f"{where}: expected a mapping")
        if set(u) - _USER_KEYS:
            raise ScenarioError(f"{where}: unknown keys {sorted(set(u) - _USER_KEYS)}")
        if not {"id", "x", "y"} <= set(u):
            raise ScenarioError(f"{where}: id, x and y are required")
        pos = (_number(u["x"], where), _number(u["y"], where), _number(u.get("z", 0.0), where))
        users.append(UserNode(_integer(u["id"], where), pos))

    uavs = []
    for i, v in enumerate(data["uavs"]):
        where = f"uavs[{i}]"
        if not isinstance(v, dict):
            raise ScenarioError(f"{where}: expected a mapping")
        extra = set(v) - _UAV_KEYS - set(_UAV_ALTS)
        if extra:
            raise ScenarioError(f"{where}: unknown keys {sorted(extra)}")
        if not _UAV_KEYS <= set(v):
            raise ScenarioError(f"{where}: id, x, y and speed_mps are required")
        key, raw = _pick_alternative(v, _UAV_ALTS, where)
        pmax = dbm_to_watts(_number(raw, key)) if key == "max_power_dbm" else _number(raw, key)
        pos = (_number(v["x"], where), _number(v["y"], where), altitude)
        uavs.append(UavSpec(_integer(v["id"], where), pos, _number(v["speed_mps"], where), pmax))

    return Scenario(
        users=tuple(users),
        uavs=tuple(uavs),
        altitude=altitude,
        period=_number(data["period_s"], "period_s"),
        min_separation=_number(data["min_separation_m"], "min_separation_m"),
        ref_gain=ref_gain,
        noise_power=noise,
        slots=_integer(data["slots"], "slots"),
    )


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "altitude_m": s.altitude,
        "period_s": s.period,
        "min_separation_m": s.min_separation,
        "ref_gain_linear": s.ref_gain,
        "noise_w": s.noise_power,
        "slots": s.slots,
        "users": [{"id": u.id, "x": u.position[0], "y": u.position[1], "z": u.position[2]} for u in s.users],
        "uavs": [
            {
                "id": v.id,
                "x": v.initial_position[0],
                "y": v.initial_position[1],
                "speed_mps": v.speed,
                "max_power_w": v.max_power,
            }
            for v in s.uavs
        ],
    }


def dumps_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2) + "\n"


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(dumps_scenario(s))


def load_scenario(path) -> Scenario:
    """Load a scenario file (JSON or YAML syntax) and validate it."""
    text = Path(path).read_text()
    try:
        # JSON first: YAML 1.1 reads exponent floats without a dot ("1e-06") as strings
        data = json.loads(text)
    except json.JSONDecodeError:
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ScenarioError(f"cannot parse {path}: {exc}") from exc
    return scenario_from_dict(data)


def uav_line_positions(m: int, area: float, min_separation: float) -> np.ndarray:
    """Evenly spaced (x, y) starting points on the horizontal line through the area centre."""
    spacing = max(min_separation, area / (m + 1))
    if m > 1 and (m - 1) * spacing > area:
        raise ScenarioError(f"cannot place {m} UAVs {spacing:g} m apart inside a {area:g} m square")
    centre = area / 2.0
    xs = centre + (np.arange(m) - (m - 1) / 2.0) * spacing
    return np.column_stack([xs, np.full(m, centre)])


def random_scenario(
    seed: int,
    k: int,
    m: int,
    area: float = 1000.0,
    *,
    altitude: float = DEFAULT_ALTITUDE,
    period: float = DEFAULT_PERIOD,
    min_separation: float = DEFAULT_MIN_SEPARATION,
    ref_gain: float = DEFAULT_REF_GAIN,
    noise_power: float = DEFAULT_NOISE,
    speed: float = DEFAULT_SPEED,
    max_power: float = DEFAULT_MAX_POWER,
    slots: int = DEFAULT_SLOTS,
) -> Scenario:
    """Ground users uniform in ``[0, area]^2``; UAVs on a line through the centre.

    Users are drawn one at a time from the seeded stream, so the first ``k``
    users of a larger instance coincide with the users of a smaller one.
    """
    if k < 1 or m < 1:
        raise ScenarioError("need at least one user and one UAV")
    if area < 0:
        raise ScenarioError("area must be non-negative")
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0.0, area, size=(k, 2))
    users = tuple(UserNode(i, (float(x), float(y), 0.0)) for i, (x, y) in enumerate(xy))
    starts = uav_line_positions(m, area, min_separation)
    uavs = tuple(
        UavSpec(j, (float(x), float(y), float(altitude)), float(speed), float(max_power))
        for j, (x, y) in enumerate(starts)
    )
    return Scenario(
        users=users,
        uavs=uavs,
        altitude=float(altitude),
        period=float(period),
        min_separation=float(min_separation),
        ref_gain=float(ref_gain),
        noise_power=float(noise_power),
        slots=int(slots),
    )


def with_slots(s: Scenario, slots: int) -> Scenario:
    """Copy of ``s`` discretized with a different slot count."""
    return Scenario(s.users, s.uavs, s.altitude, s.period, s.min_separation, s.ref_gain, s.noise_power, slots)
