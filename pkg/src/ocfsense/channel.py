"""OFDMA capacities and subcarrier assignment schemes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .scenario import Scenario

IDLE = -1


@dataclass(frozen=True, eq=False)
class SubcarrierAssignment:
    """Which user holds each subcarrier.

    Stored as an owner vector of length K (``IDLE`` for an unassigned
    subcarrier), so at most one user per subcarrier holds by construction.
    """

    owner: np.ndarray
    n_users: int

    def __post_init__(self):
        owner = np.array(self.owner, dtype=np.int64).reshape(-1)
        if owner.size and (owner.min() < IDLE or owner.max() >= self.n_users):
            raise ValueError("subcarrier owner out of range")
        owner.setflags(write=False)
        object.__setattr__(self, "owner", owner)

    @property
    def n_subcarriers(self) -> int:
        return self.owner.size

    @property
    def s(self) -> np.ndarray:
        """K x M binary matrix."""
        s = np.zeros((self.n_subcarriers, self.n_users), dtype=np.int8)
        held = self.owner != IDLE
        s[np.flatnonzero(held), self.owner[held]] = 1
        return s

    @classmethod
    def from_matrix(cls, s) -> "SubcarrierAssignment":
        s = np.asarray(s)
        if np.any(s.sum(axis=1) > 1):
            raise ValueError("a subcarrier is assigned to more than one user")
        owner = np.where(s.any(axis=1), s.argmax(axis=1), IDLE)
        return cls(owner, s.shape[1])

    def __eq__(self, other):
        if not isinstance(other, SubcarrierAssignment):
            return NotImplemented
        return self.n_users == other.n_users and np.array_equal(self.owner, other.owner)

    def to_pairs(self) -> list[list[int]]:
        """1-based ``[subcarrier, user]`` pairs for held subcarriers."""
        return [[k + 1, int(j) + 1] for k, j in enumerate(self.owner) if j != IDLE]

    @classmethod
    def from_pairs(cls, pairs, n_subcarriers: int, n_users: int) -> "SubcarrierAssignment":
        owner = np.full(n_subcarriers, IDLE, dtype=np.int64)
        for k, j in pairs:
            if owner[k - 1] != IDLE:
                raise ValueError(f"subcarrier {k} listed twice")
            owner[k - 1] = j - 1
        return cls(owner, n_users)

    def to_dict(self) -> dict[str, Any]:
        return {"n_subcarriers": self.n_subcarriers, "n_users": self.n_users, "pairs": self.to_pairs()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SubcarrierAssignment":
        return cls.from_pairs(data["pairs"], data["n_subcarriers"], data["n_users"])


def capacity(snr, bandwidth: float):
    return bandwidth * np.log2(1.0 + snr)


def compute_capacities(scenario: Scenario) -> np.ndarray:
    """K x M matrix ``c[k, j] = B log2(1 + P |h|^2 / sigma^2)`` in b/s."""
    p = scenario.params
    snr = p.tx_power * scenario.channel_gains / p.noise_variance
    return capacity(snr, p.bandwidth)


def budgets(caps: np.ndarray, assign: SubcarrierAssignment) -> np.ndarray:
    """Per-user uplink budget ``sum_k s[k, j] c[k, j]``."""
    out = np.zeros(assign.n_users)
    held = np.flatnonzero(assign.owner != IDLE)
    np.add.at(out, assign.owner[held], caps[held, assign.owner[held]])
    return out


def user_budget(caps: np.ndarray, assign: SubcarrierAssignment, j: int) -> float:
    return float(budgets(caps, assign)[j])


def check_rate_feasible(caps, assign: SubcarrierAssignment, participation, rates) -> np.ndarray:
    """Boolean per user: budget covers the summed rates of its tasks (inclusive)."""
    demand = np.asarray(rates, dtype=float) @ np.asarray(participation, dtype=float)
    return budgets(caps, assign) >= demand


def allocate_random(scenario: Scenario, rng: np.random.Generator) -> SubcarrierAssignment:
    """Each subcarrier goes to an independently, uniformly drawn user."""
    M = scenario.n_users
    if M < 1:
        raise ValueError("random allocation needs at least one user")
    owner = rng.integers(0, M, size=scenario.n_subcarriers)
    return SubcarrierAssignment(owner, M)


def priority_keys(scenario: Scenario) -> np.ndarray:
    """``RK_j = sum_i Q[i, j] / r_i``."""
    return (scenario.contributions / scenario.rates[:, np.newaxis]).sum(axis=0)


def allocate_priority(scenario: Scenario, caps: np.ndarray | None = None) -> SubcarrierAssignment:
    """Round-robin down the RK priority list; each user takes its best free subcarrier.

    Users are ranked by RK descending (ties: lower id first). Every round
    gives each user, in priority order, the unassigned subcarrier with the
    highest capacity for that user (ties: lower subcarrier id), until all
    subcarriers are taken.
    """
    caps = scenario.capacities if caps is None else caps
    K, M = caps.shape
    owner = np.full(K, IDLE, dtype=np.int64)
    if M == 0:
        return SubcarrierAssignment(owner, M)
    order = np.argsort(-priority_keys(scenario), kind="stable")
    free = np.ones(K, dtype=bool)
    remaining = K
    while remaining:
        for j in order:
            if not remaining:
                break
            col = np.where(free, caps[:, j], -np.inf)
            k = int(np.argmax(col))  # first maximum -> lowest id on ties
            owner[k] = j
            free[k] = False
            remaining -= 1
    return SubcarrierAssignment(owner, M)
