"""Contributions, task performance, charges, utilities and payoff division.

Participation matrices ``X`` are N x M 0/1 arrays (row i is the coalition of
task i, column j the strategy of user j). Payoff matrices share that shape.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from .scenario import DISTANCE_FLOOR, Scenario, Task, User

# Gate for discrete decisions driven by float comparisons.
EPS = 1e-9


def contribution(task: Task, user: User, lam: float) -> float:
    """Contribution of ``user`` to ``task``; flat inside the area of interest."""
    d = user.distances_to_tasks[task.id - 1]
    if d <= task.d0:
        return task.a / task.d0 ** lam
    return task.a / max(d, DISTANCE_FLOOR) ** lam


def contribution_matrix(scenario: Scenario) -> np.ndarray:
    lam = scenario.params.contribution_exponent
    Q = np.empty((scenario.n_tasks, scenario.n_users))
    for j, user in enumerate(scenario.users):
        for i, task in enumerate(scenario.tasks):
            Q[i, j] = contribution(task, user, lam)
    return Q


def performance_from_totals(totals, phi, rho) -> np.ndarray:
    """Saturating task performance for given total contributions."""
    totals = np.asarray(totals, dtype=float)
    return np.where(totals < rho, phi * totals / rho, phi)


def total_contributions(scenario: Scenario, X) -> np.ndarray:
    return (scenario.contributions * np.asarray(X)).sum(axis=1)


def task_performance(scenario: Scenario, X) -> np.ndarray:
    """Per-task performance vector (length N)."""
    return performance_from_totals(total_contributions(scenario, X), scenario.phi, scenario.rho)


def platform_performance(scenario: Scenario, X) -> float:
    return float(task_performance(scenario, X).sum())


def rate_charge(task: Task, x: int, beta: float, charge_unit: float = 1.0) -> float:
    """BS charge for one (task, user) pair."""
    return beta * task.r / charge_unit * x


def rate_charges(scenario: Scenario, X) -> np.ndarray:
    """N x M matrix of BS charges."""
    return scenario.charges[:, np.newaxis] * np.asarray(X)


def coalition_value(scenario: Scenario, i: int, members, alpha2: float) -> float:
    """Value of coalition ``i`` with 0/1 membership row ``members``."""
    total = float(scenario.contributions[i] @ np.asarray(members, dtype=float))
    return alpha2 * float(performance_from_totals(total, scenario.phi[i], scenario.rho[i]))


def payoff_rate(total, phi, rho, alpha2: float):
    """Reward per unit of contribution in a coalition with the given total.

    Equals ``v / total`` for a non-empty coalition. Written as
    ``alpha2 * phi / max(total, rho)`` so that it is exactly monotone in the
    total under floating point.
    """
    return alpha2 * phi / np.maximum(total, rho)


def divide_payoff(scenario: Scenario, i: int, members, alpha2: float) -> np.ndarray:
    """Proportional split of coalition ``i``'s value among its members."""
    members = np.asarray(members)
    q = scenario.contributions[i] * members
    total = q.sum()
    if total <= 0:
        return np.zeros(scenario.n_users)
    return payoff_rate(total, scenario.phi[i], scenario.rho[i], alpha2) * q


def payoff_matrix(scenario: Scenario, X, alpha2: float) -> np.ndarray:
    """All coalitions' proportional splits at once (N x M)."""
    QX = scenario.contributions * np.asarray(X)
    totals = QX.sum(axis=1)
    rate = payoff_rate(totals, scenario.phi, scenario.rho, alpha2)
    return rate[:, np.newaxis] * QX


def _alpha(value, default):
    return default if value is None else value


def utility_centralized(scenario: Scenario, X) -> float:
    g = scenario.params.revenue_split
    return platform_performance(scenario, X) + g * float(rate_charges(scenario, X).sum())


def utility_noncoop_platform(scenario: Scenario, X, alpha1: float | None = None) -> float:
    alpha1 = _alpha(alpha1, scenario.params.incentive_alpha1)
    X = np.asarray(X)
    incentive = alpha1 * float((scenario.contributions * X).sum())
    return utility_centralized(scenario, X) - incentive


def noncoop_user_utilities(scenario: Scenario, X, alpha1: float | None = None) -> np.ndarray:
    alpha1 = _alpha(alpha1, scenario.params.incentive_alpha1)
    X = np.asarray(X)
    return alpha1 * (scenario.contributions * X).sum(axis=0) - rate_charges(scenario, X).sum(axis=0)


def utility_noncoop_user(scenario: Scenario, X, j: int, alpha1: float | None = None) -> float:
    return float(noncoop_user_utilities(scenario, X, alpha1)[j])


def utility_coop_platform(scenario: Scenario, X, alpha2: float | None = None) -> float:
    alpha2 = _alpha(alpha2, scenario.params.incentive_alpha2)
    g = scenario.params.revenue_split
    pfm = platform_performance(scenario, X)
    return (1.0 - alpha2) * pfm + g * float(rate_charges(scenario, X).sum())


def coop_user_utilities(scenario: Scenario, X, payoffs) -> np.ndarray:
    return np.asarray(payoffs).sum(axis=0) - rate_charges(scenario, X).sum(axis=0)


def utility_coop_user(scenario: Scenario, X, payoffs, j: int) -> float:
    return float(coop_user_utilities(scenario, X, payoffs)[j])


@dataclass(frozen=True)
class UtilityReport:
    platform_utility: float
    pfm: float
    per_user_utility: tuple[float, ...]
    incentive_cost: float
    bs_revenue_split: float
    seed: int

    @property
    def total_user_utility(self) -> float:
        return float(sum(self.per_user_utility))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["per_user_utility"] = list(self.per_user_utility)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "UtilityReport":
        return cls(**{**data, "per_user_utility": tuple(data["per_user_utility"])})


def report_centralized(scenario: Scenario, X) -> UtilityReport:
    """Users earn nothing and still pay the BS, so each user's utility is minus its charges."""
    X = np.asarray(X)
    charges = rate_charges(scenario, X)
    return UtilityReport(
        platform_utility=utility_centralized(scenario, X),
        pfm=platform_performance(scenario, X),
        per_user_utility=tuple(float(v) for v in -charges.sum(axis=0)),
        incentive_cost=0.0,
        bs_revenue_split=scenario.params.revenue_split * float(charges.sum()),
        seed=scenario.seed,
    )


def report_noncoop(scenario: Scenario, X, alpha1: float) -> UtilityReport:
    X = np.asarray(X)
    return UtilityReport(
        platform_utility=utility_noncoop_platform(scenario, X, alpha1),
        pfm=platform_performance(scenario, X),
        per_user_utility=tuple(float(v) for v in noncoop_user_utilities(scenario, X, alpha1)),
        incentive_cost=alpha1 * float((scenario.contributions * X).sum()),
        bs_revenue_split=scenario.params.revenue_split * float(rate_charges(scenario, X).sum()),
        seed=scenario.seed,
    )


def report_coop(scenario: Scenario, X, alpha2: float, payoffs=None) -> UtilityReport:
    X = np.asarray(X)
    payoffs = payoff_matrix(scenario, X, alpha2) if payoffs is None else payoffs
    pfm = platform_performance(scenario, X)
    return UtilityReport(
        platform_utility=utility_coop_platform(scenario, X, alpha2),
        pfm=pfm,
        per_user_utility=tuple(float(v) for v in coop_user_utilities(scenario, X, payoffs)),
        incentive_cost=alpha2 * pfm,
        bs_revenue_split=scenario.params.revenue_split * float(rate_charges(scenario, X).sum()),
        seed=scenario.seed,
    )
