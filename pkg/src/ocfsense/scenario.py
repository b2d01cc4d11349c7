"""Problem instances: tasks, users, geometry and channel gains.

Random instances follow the desk-scale experimental setup: tasks and users
placed uniformly in an ``L x L`` square with the base station at its centre,
Rayleigh block fading with one gain draw per (subcarrier, user) pair.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Sequence

import numpy as np

SCHEMA_VERSION = "ocfsense.scenario/1"

# Distances below this floor (km) are clamped before any negative power.
DISTANCE_FLOOR = 0.01

# Uniform ranges used by generate_scenario.
PHI_RANGE = (90.0, 150.0)
RHO_RANGE = (35.0, 60.0)
A_RANGE = (3.0, 7.0)
RATE_RANGE = (6.0, 12.0)  # nominal units, multiplied by GlobalParams.rate_unit
AOI_RANGE = (0.6, 2.5)  # km


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class GlobalParams:
    """Global constants of one sensing market.

    ``rate_unit`` converts nominal task rates to b/s. ``charge_unit`` is the
    rate (b/s) that one unit of ``rate_charge_scale`` is quoted against, so the
    BS charge for a task is ``rate_charge_scale * r / charge_unit``.
    """

    side_length: float = 10.0
    n_subcarriers: int = 60
    bandwidth: float = 15e3
    tx_power: float = dbm_to_watt(23.0)
    noise_variance: float = dbm_to_watt(-90.0)
    path_loss_exponent: float = 3.0
    contribution_exponent: float = 0.8
    rate_charge_scale: float = 7.0
    revenue_split: float = 0.2
    incentive_alpha1: float = 1.0
    incentive_alpha2: float = 0.5
    rate_unit: float = 10e3
    charge_unit: float = 200e3
    rng_seed: int = 0

    def __post_init__(self):
        positive = (
            "side_length", "bandwidth", "tx_power", "noise_variance",
            "path_loss_exponent", "contribution_exponent", "rate_charge_scale",
            "rate_unit", "charge_unit",
        )
        for name in positive:
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite number, got {value!r}")
        if int(self.n_subcarriers) != self.n_subcarriers or self.n_subcarriers < 1:
            raise ValueError(f"n_subcarriers must be a positive integer, got {self.n_subcarriers!r}")
        for name in ("revenue_split", "incentive_alpha1", "incentive_alpha2"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be >= 0, got {value!r}")
        if int(self.rng_seed) != self.rng_seed:
            raise ValueError(f"rng_seed must be an integer, got {self.rng_seed!r}")

    def replace(self, **changes) -> "GlobalParams":
        return dataclasses.replace(self, **changes)

    @property
    def bs_location(self) -> tuple[float, float]:
        half = self.side_length / 2.0
        return (half, half)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GlobalParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown GlobalParams fields: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Task:
    id: int
    location: tuple[float, float]
    a: float
    d0: float
    r: float  # b/s
    rho: float
    phi: float

    def __post_init__(self):
        for name in ("a", "d0", "r", "rho", "phi"):
            if not getattr(self, name) > 0:
                raise ValueError(f"task {self.id}: {name} must be > 0")


@dataclass(frozen=True)
class User:
    id: int
    location: tuple[float, float]
    distance_to_bs: float
    distances_to_tasks: tuple[float, ...]


def distance(p: Sequence[float], q: Sequence[float]) -> float:
    """Euclidean distance between two points in the plane (km)."""
    return math.hypot(p[0] - q[0], p[1] - q[1])


def gain_mean(dist_km: float, path_loss_exponent: float) -> float:
    """Mean of ``|h|^2`` for a user at ``dist_km`` from the BS, with the distance floor."""
    return max(dist_km, DISTANCE_FLOOR) ** (-path_loss_exponent)


def make_user(user_id: int, location, tasks: Sequence[Task], bs_location) -> User:
    loc = (float(location[0]), float(location[1]))
    return User(
        id=user_id,
        location=loc,
        distance_to_bs=distance(loc, bs_location),
        distances_to_tasks=tuple(distance(loc, t.location) for t in tasks),
    )


@dataclass(frozen=True, eq=False)
class Scenario:
    params: GlobalParams
    tasks: tuple[Task, ...]
    users: tuple[User, ...]
    channel_gains: np.ndarray = field(repr=False)  # K x M, |h_{k,j}|^2

    def __post_init__(self):
        gains = np.array(self.channel_gains, dtype=float)
        n_users = len(self.users)
        if gains.shape != (self.params.n_subcarriers, n_users):
            raise ValueError(
                f"channel_gains has shape {gains.shape}, expected "
                f"({self.params.n_subcarriers}, {n_users})"
            )
        if n_users and not np.all(gains > 0):
            raise ValueError("channel gains must be positive")
        gains.setflags(write=False)
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "users", tuple(self.users))
        object.__setattr__(self, "channel_gains", gains)
        for i, t in enumerate(self.tasks, start=1):
            if t.id != i:
                raise ValueError(f"task ids must be 1..N in order, got {t.id} at position {i}")
        bs = self.params.bs_location
        for j, u in enumerate(self.users, start=1):
            if u.id != j:
                raise ValueError(f"user ids must be 1..M in order, got {u.id} at position {j}")
            fresh = make_user(u.id, u.location, self.tasks, bs)
            if fresh != u:
                raise ValueError(f"user {u.id}: stored distances disagree with locations")

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_subcarriers(self) -> int:
        return self.params.n_subcarriers

    @property
    def seed(self) -> int:
        return self.params.rng_seed

    @cached_property
    def rates(self) -> np.ndarray:
        return _frozen(np.array([t.r for t in self.tasks], dtype=float))

    @cached_property
    def phi(self) -> np.ndarray:
        return _frozen(np.array([t.phi for t in self.tasks], dtype=float))

    @cached_property
    def rho(self) -> np.ndarray:
        return _frozen(np.array([t.rho for t in self.tasks], dtype=float))

    @cached_property
    def charges(self) -> np.ndarray:
        """Per-task BS charge ``beta * r_i`` paid by each participant."""
        p = self.params
        return _frozen(p.rate_charge_scale * self.rates / p.charge_unit)

    @cached_property
    def contributions(self) -> np.ndarray:
        """N x M matrix of contributions Q."""
        from .sensing import contribution_matrix

        return _frozen(contribution_matrix(self))

    @cached_property
    def capacities(self) -> np.ndarray:
        from .channel import compute_capacities

        return _frozen(compute_capacities(self))

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": SCHEMA_VERSION,
            "params": self.params.to_dict(),
            "tasks": [dataclasses.asdict(t) for t in self.tasks],
            "users": [dataclasses.asdict(u) for u in self.users],
            "channel_gains": self.channel_gains.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Scenario":
        if data.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported scenario schema {data.get('schema')!r}")
        tasks = tuple(
            Task(**{**t, "location": tuple(t["location"])}) for t in data["tasks"]
        )
        users = tuple(
            User(
                id=u["id"],
                location=tuple(u["location"]),
                distance_to_bs=u["distance_to_bs"],
                distances_to_tasks=tuple(u["distances_to_tasks"]),
            )
            for u in data["users"]
        )
        gains = np.array(data["channel_gains"], dtype=float).reshape(
            data["params"]["n_subcarriers"], len(users)
        )
        return cls(GlobalParams.from_dict(data["params"]), tasks, users, gains)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def make_scenario(params: GlobalParams, tasks: Sequence[Task], user_locations, channel_gains=None) -> Scenario:
    """Assemble a scenario from explicit tasks and user positions.

    When ``channel_gains`` is omitted, gains are drawn from ``params.rng_seed``
    exactly as :func:`generate_scenario` would draw them.
    """
    bs = params.bs_location
    users = tuple(make_user(j, loc, tasks, bs) for j, loc in enumerate(user_locations, start=1))
    if channel_gains is None:
        rng = np.random.default_rng(params.rng_seed)
        channel_gains = draw_channel_gains(rng, users, params)
    return Scenario(params, tuple(tasks), users, np.asarray(channel_gains, dtype=float))


def draw_channel_gains(rng: np.random.Generator, users: Sequence[User], params: GlobalParams) -> np.ndarray:
    """Exponential ``|h|^2`` with mean ``D_j^-delta``, drawn row-major over (k, j)."""
    means = np.array([gain_mean(u.distance_to_bs, params.path_loss_exponent) for u in users])
    unit = rng.standard_exponential(size=(params.n_subcarriers, len(users)))
    return unit * means[np.newaxis, :]


def generate_scenario(params: GlobalParams, n_tasks: int, n_users: int) -> Scenario:
    """Draw a random instance from ``params.rng_seed``.

    Draw order is fixed: task locations, a, d0, r, rho, phi (each as a
    length-N vector), then user locations, then the K x M gains row-major.
    """
    if int(n_tasks) != n_tasks or n_tasks < 1:
        raise ValueError(f"n_tasks must be a positive integer, got {n_tasks!r}")
    if int(n_users) != n_users or n_users < 1:
        raise ValueError(f"n_users must be a positive integer, got {n_users!r}")
    n_tasks, n_users = int(n_tasks), int(n_users)
    L = params.side_length
    rng = np.random.default_rng(params.rng_seed)

    task_xy = rng.uniform(0.0, L, size=(n_tasks, 2))
    a = rng.uniform(*A_RANGE, size=n_tasks)
    d0 = rng.uniform(*AOI_RANGE, size=n_tasks)
    r = rng.uniform(*RATE_RANGE, size=n_tasks) * params.rate_unit
    rho = rng.uniform(*RHO_RANGE, size=n_tasks)
    phi = rng.uniform(*PHI_RANGE, size=n_tasks)
    tasks = tuple(
        Task(
            id=i + 1,
            location=(float(task_xy[i, 0]), float(task_xy[i, 1])),
            a=float(a[i]),
            d0=float(d0[i]),
            r=float(r[i]),
            rho=float(rho[i]),
            phi=float(phi[i]),
        )
        for i in range(n_tasks)
    )

    user_xy = rng.uniform(0.0, L, size=(n_users, 2))
    bs = params.bs_location
    users = tuple(make_user(j + 1, user_xy[j], tasks, bs) for j in range(n_users))
    gains = draw_channel_gains(rng, users, params)
    return Scenario(params, tasks, users, gains)
