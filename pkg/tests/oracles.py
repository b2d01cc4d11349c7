"""Brute-force references written independently of the package solvers."""
import itertools

import numpy as np

from ocfsense import sensing


def brute_knapsack(values, weights, capacity):
    best = 0.0
    n = len(values)
    for bits in itertools.product((0, 1), repeat=n):
        b = np.array(bits)
        if float(np.dot(b, weights)) <= capacity:
            best = max(best, float(np.dot(b, values)))
    return best


def relaxation_follower(scenario, budget, j, alpha1):
    """Greedy by Q/r (ties by id); stop at the first task that does not fit or does not pay."""
    Q, r, c = scenario.contributions[:, j], scenario.rates, scenario.charges
    order = sorted(range(len(r)), key=lambda i: (-Q[i] / r[i], i))
    x = np.zeros(len(r), dtype=int)
    used = 0.0
    for i in order:
        if used + r[i] > budget or alpha1 * Q[i] - c[i] <= 1e-9:
            break
        used += r[i]
        x[i] = 1
    return x


def prefix_follower(scenario, budget, j):
    """Value-blind: take tasks by Q/r while the running rate sum fits."""
    Q, r = scenario.contributions[:, j], scenario.rates
    order = sorted(range(len(r)), key=lambda i: (-Q[i] / r[i], i))
    x = np.zeros(len(r), dtype=int)
    used = 0.0
    for i in order:
        if used + r[i] > budget:
            break
        used += r[i]
        x[i] = 1
    return x


def predicted_participation(scenario, owner, alpha1, predictor="prefix"):
    bud = owner_budgets(scenario.capacities, owner)
    cols = []
    for j in range(scenario.n_users):
        if predictor == "prefix":
            cols.append(prefix_follower(scenario, bud[j], j))
        else:
            cols.append(relaxation_follower(scenario, bud[j], j, alpha1))
    return np.stack(cols, axis=1)


def owner_budgets(caps, owner):
    bud = np.zeros(caps.shape[1])
    for k, j in enumerate(owner):
        if j >= 0:
            bud[j] += caps[k, j]
    return bud


def best_leader_value(scenario, alpha1, predictor="prefix"):
    """Max of the predicted non-cooperative platform utility over every assignment with idle slots."""
    K, M = scenario.capacities.shape
    best = -np.inf
    for owner in itertools.product(range(-1, M), repeat=K):
        X = predicted_participation(scenario, owner, alpha1, predictor)
        best = max(best, sensing.utility_noncoop_platform(scenario, X, alpha1))
    return best


def best_centralized_value(scenario):
    N, M = scenario.n_tasks, scenario.n_users
    K = scenario.n_subcarriers
    best = -np.inf
    for owner in itertools.product(range(M), repeat=K):
        bud = owner_budgets(scenario.capacities, owner)
        for bits in itertools.product((0, 1), repeat=N * M):
            X = np.array(bits).reshape(N, M)
            if np.all(scenario.rates @ X <= bud):
                best = max(best, sensing.utility_centralized(scenario, X))
    return best
