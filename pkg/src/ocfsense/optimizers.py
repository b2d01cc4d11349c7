"""Centralized upper bound and the non-cooperative Stackelberg mechanism.

The BS (leader) picks a subcarrier assignment; each user (follower) then
picks tasks under its budget. The leader evaluates an assignment through a
prefix predictor of the followers' choices, so its search space is only the
assignment itself.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import asdict, dataclass

import numpy as np

from .channel import IDLE, SubcarrierAssignment, allocate_priority, allocate_random, budgets
from .outcome import MechanismOutcome, scenario_meta
from .scenario import Scenario
from .sensing import EPS, performance_from_totals, report_centralized, report_noncoop

# Follower behaviours: "relaxation" takes the preference-order prefix up to the
# first unprofitable task (Dantzig's LP-relaxation greedy for the follower's
# knapsack); "prefix" ignores profitability; "exact" solves the knapsack.
FOLLOWERS = ("relaxation", "prefix", "exact")
# How the leader predicts followers: "prefix" is the value-blind prefix rule,
# "relaxation" also stops at the first unprofitable task.
PREDICTORS = ("prefix", "relaxation")

LEADER_EXACT_CAP = 10**6  # (M + 1)^K assignments
CENTRAL_EXACT_VARS = 20  # N*M + K*M binary variables
KNAPSACK_NODE_CAP = 2_000_000


class SolverLimitError(RuntimeError):
    pass


@dataclass
class SolverDiagnostics:
    iterations: int = 0
    nodes_explored: int = 0
    wall_time: float = 0.0
    optimality_flag: str = "heuristic"

    def to_dict(self, timing: bool = False) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("wall_time")
        return d


def build_preference_matrix(scenario: Scenario) -> np.ndarray:
    """N x M matrix; column j lists task indices by Q/r descending (ties: lower id)."""
    ratio = scenario.contributions / scenario.rates[:, np.newaxis]
    return np.argsort(-ratio, axis=0, kind="stable")


def follower_prefix_selection(prefs, budget: float, rates, j: int, values=None) -> np.ndarray:
    """Take tasks in preference order while the cumulative rate fits the budget.

    Selection stops at the first task that does not fit; later, cheaper tasks
    are not considered. With ``values`` given, it also stops at the first task
    whose value is not positive.
    """
    order = np.asarray(prefs)[:, j]
    rates = np.asarray(rates, dtype=float)
    cum = np.cumsum(rates[order])
    n = int(np.searchsorted(cum, budget, side="right"))
    if values is not None:
        bad = np.flatnonzero(np.asarray(values, dtype=float)[order] <= EPS)
        if bad.size:
            n = min(n, int(bad[0]))
    x = np.zeros(len(order), dtype=np.int8)
    x[order[:n]] = 1
    return x


def knapsack_01(values, weights, capacity: float, max_nodes: int = KNAPSACK_NODE_CAP):
    """Exact 0-1 knapsack by depth-first branch and bound.

    Returns ``(selection, value, nodes)``. Items with non-positive value are
    never selected. Raises :class:`SolverLimitError` past ``max_nodes``.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    cand = [i for i in range(values.size) if values[i] > 0 and weights[i] <= capacity]
    cand.sort(key=lambda i: (-values[i] / weights[i], i))
    v = [float(values[i]) for i in cand]
    w = [float(weights[i]) for i in cand]
    n = len(cand)

    best_val = 0.0
    best = []
    nodes = 0
    chosen = []

    def bound(level, cap, val):
        for t in range(level, n):
            if w[t] <= cap:
                cap -= w[t]
                val += v[t]
            else:
                return val + v[t] * cap / w[t]
        return val

    def visit(level, cap, val):
        nonlocal best_val, best, nodes
        nodes += 1
        if nodes > max_nodes:
            raise SolverLimitError(f"knapsack exceeded {max_nodes} nodes")
        if val > best_val:
            best_val, best = val, chosen.copy()
        if level == n or bound(level, cap, val) <= best_val:
            return
        if w[level] <= cap:
            chosen.append(cand[level])
            visit(level + 1, cap - w[level], val + v[level])
            chosen.pop()
        visit(level + 1, cap, val)

    visit(0, float(capacity), 0.0)
    sel = np.zeros(values.size, dtype=np.int8)
    sel[best] = 1
    return sel, best_val, nodes


def knapsack_scaled_dp(values, weights, capacity: float, resolution: int = 2048):
    """Approximate 0-1 knapsack by DP over weights rounded up to ``capacity / resolution``.

    Rounding up keeps every returned selection feasible for the true weights.
    Returns ``(selection, value)`` with the value measured on the true items.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    sel = np.zeros(values.size, dtype=np.int8)
    if capacity <= 0:
        return sel, 0.0
    unit = capacity / resolution
    w = np.ceil(weights / unit - 1e-12).astype(np.int64)
    cand = [i for i in range(values.size) if values[i] > 0 and w[i] <= resolution]
    best = np.zeros(resolution + 1)
    take = np.zeros((len(cand), resolution + 1), dtype=bool)
    for t, i in enumerate(cand):
        shifted = np.full(resolution + 1, -np.inf)
        shifted[w[i]:] = best[: resolution + 1 - w[i]] + values[i]
        take[t] = shifted > best
        best = np.maximum(best, shifted)
    cap = int(np.argmax(best))
    for t in range(len(cand) - 1, -1, -1):
        if take[t, cap]:
            sel[cand[t]] = 1
            cap -= w[cand[t]]
    return sel, float(values @ sel)


def follower_values(scenario: Scenario, j: int, alpha1: float) -> np.ndarray:
    return alpha1 * scenario.contributions[:, j] - scenario.charges


def follower_exact_knapsack(scenario: Scenario, budget: float, j: int, alpha1: float) -> np.ndarray:
    sel, _, _ = knapsack_01(follower_values(scenario, j, alpha1), scenario.rates, budget)
    return sel


def follower_response(scenario: Scenario, prefs, budget: float, j: int, alpha1: float, follower: str):
    if follower == "exact":
        return follower_exact_knapsack(scenario, budget, j, alpha1)
    if follower == "relaxation":
        return follower_prefix_selection(prefs, budget, scenario.rates, j, follower_values(scenario, j, alpha1))
    if follower == "prefix":
        return follower_prefix_selection(prefs, budget, scenario.rates, j)
    raise ValueError(f"unknown follower rule {follower!r}; expected one of {FOLLOWERS}")


class PrefixPredictor:
    """Platform objective as a function of user budgets under prefix followers.

    Each user takes the first ``n_j`` tasks of its preference order, where
    ``n_j`` is the number of cumulative rates within its budget (capped at the
    first unprofitable task when ``truncate``). Per-user item terms beyond the
    performance sum are ``linear[i, j]`` (revenue split minus incentive).
    """

    def __init__(self, scenario: Scenario, prefs, linear, item_values=None):
        Q = scenario.contributions
        N, M = Q.shape
        self.phi, self.rho = scenario.phi, scenario.rho
        self.order = np.asarray(prefs)
        cols = np.arange(M)
        self.cum = np.cumsum(scenario.rates[self.order], axis=0)  # N x M
        if item_values is None:
            self.limit = np.full(M, N)
        else:
            ok = np.asarray(item_values)[self.order, cols] > EPS
            self.limit = np.where(ok.all(axis=0), N, np.argmin(ok, axis=0))
        steps = np.zeros((M, N, N))
        t_idx = np.repeat(np.arange(N), M)
        j_idx = np.tile(cols, N)
        task = self.order.reshape(-1)
        steps[j_idx, t_idx, task] = Q[task, j_idx]
        self.prefix = np.zeros((M, N + 1, N))  # totals added by each user's first n tasks
        self.prefix[:, 1:, :] = np.cumsum(steps, axis=1)
        lin = np.asarray(linear)[self.order, cols]  # N x M in preference order
        self.lin = np.zeros((M, N + 1))
        self.lin[:, 1:] = np.cumsum(lin, axis=0).T
        self.M, self.N = M, N

    def counts(self, budgets) -> np.ndarray:
        return np.minimum((self.cum <= budgets).sum(axis=0), self.limit)

    def participation(self, counts) -> np.ndarray:
        X = np.zeros((self.N, self.M), dtype=np.int8)
        for j, n in enumerate(counts):
            X[self.order[:n, j], j] = 1
        return X

    def totals(self, counts) -> np.ndarray:
        return self.prefix[np.arange(self.M), counts].sum(axis=0)

    def objective(self, counts) -> float:
        perf = performance_from_totals(self.totals(counts), self.phi, self.rho).sum()
        return float(perf + self.lin[np.arange(self.M), counts].sum())


def _local_search(pred: PrefixPredictor, caps, owner, allow_idle: bool, diag: SolverDiagnostics):
    """Best-improvement single-subcarrier moves until no move gains more than EPS."""
    K, M = caps.shape
    owner = owner.copy()
    bud = np.zeros(M)
    held = owner != IDLE
    np.add.at(bud, owner[held], caps[np.flatnonzero(held), owner[held]])
    n = pred.counts(bud)
    rows = np.arange(M)
    totals = pred.totals(n)
    lin_total = float(pred.lin[rows, n].sum())
    current = float(performance_from_totals(totals, pred.phi, pred.rho).sum()) + lin_total
    diag.nodes_explored += 1

    improved = True
    while improved:
        improved = False
        for k in range(K):
            a = owner[k]
            base_totals = totals
            base_lin = lin_total
            bud_a = n_a = None
            if a != IDLE:
                bud_a = bud[a] - caps[k, a]
                n_a = min(int((pred.cum[:, a] <= bud_a).sum()), int(pred.limit[a]))
                base_totals = totals - pred.prefix[a, n[a]] + pred.prefix[a, n_a]
                base_lin = lin_total - pred.lin[a, n[a]] + pred.lin[a, n_a]
            new_n = pred.counts(bud + caps[k])
            if a != IDLE:
                # moving k to b leaves a with reduced budget; b's count is
                # computed from b's own budget, so a's column is excluded below
                new_n[a] = n[a]
            cand_totals = base_totals - pred.prefix[rows, n] + pred.prefix[rows, new_n]
            cand_vals = performance_from_totals(cand_totals, pred.phi, pred.rho).sum(axis=1)
            cand_vals = cand_vals + base_lin - pred.lin[rows, n] + pred.lin[rows, new_n]
            if a != IDLE:
                cand_vals[a] = -np.inf
            diag.iterations += M - int(a != IDLE)
            b = int(np.argmax(cand_vals))
            best_val, target = float(cand_vals[b]), b
            if allow_idle and a != IDLE:
                diag.iterations += 1
                idle_val = float(performance_from_totals(base_totals, pred.phi, pred.rho).sum()) + base_lin
                if idle_val > best_val:
                    best_val, target = idle_val, IDLE
            if best_val > current + EPS:
                if a != IDLE:
                    bud[a] = bud_a
                    n[a] = n_a
                owner[k] = target
                if target != IDLE:
                    bud[target] += caps[k, target]
                    n[target] = new_n[target]
                totals = pred.totals(n)
                lin_total = float(pred.lin[rows, n].sum())
                current = float(performance_from_totals(totals, pred.phi, pred.rho).sum()) + lin_total
                diag.nodes_explored += 1
                improved = True
    return owner, current


def _exhaustive(pred: PrefixPredictor, caps, choices, diag: SolverDiagnostics):
    K, M = caps.shape
    best_val, best_owner = -np.inf, None
    for combo in itertools.product(choices, repeat=K):
        owner = np.array(combo, dtype=np.int64)
        bud = np.zeros(M)
        held = owner != IDLE
        np.add.at(bud, owner[held], caps[np.flatnonzero(held), owner[held]])
        val = pred.objective(pred.counts(bud))
        diag.iterations += 1
        diag.nodes_explored += 1
        if val > best_val:
            best_val, best_owner = val, owner
    return best_owner, best_val


def _search_assignment(scenario, pred, caps, allow_idle, restarts, seed, exact_cap, diag):
    K, M = caps.shape
    choices = ([IDLE] if allow_idle else []) + list(range(M))
    if len(choices) ** K <= exact_cap:
        owner, val = _exhaustive(pred, caps, choices, diag)
        diag.optimality_flag = "exact"
        return owner, val
    starts = [allocate_priority(scenario, caps).owner]
    rng = np.random.default_rng([seed, 0x5EED])
    for _ in range(max(restarts, 1) - 1):
        starts.append(allocate_random(scenario, rng).owner)
    best_val, best_owner = -np.inf, None
    for start in starts:
        owner, val = _local_search(pred, caps, start, allow_idle, diag)
        if val > best_val + EPS:
            best_val, best_owner = val, owner
    diag.optimality_flag = "heuristic"
    return best_owner, best_val


def leader_allocate(
    scenario: Scenario,
    prefs=None,
    alpha1: float | None = None,
    restarts: int = 20,
    exact_cap: int = LEADER_EXACT_CAP,
    predictor: str = "prefix",
):
    """Subcarrier assignment maximizing the predicted non-cooperative platform utility.

    By default the leader predicts that every user takes the full affordable
    prefix of its preference order, whatever the task values; with
    ``predictor="relaxation"`` it also knows users stop at the first
    unprofitable task. Subcarriers may be left idle, since extra budget can
    make users take tasks the platform overpays for. Exhaustive when
    ``(M + 1)^K <= exact_cap``, otherwise best-improvement local search from
    the priority allocation plus ``restarts - 1`` random starts.
    """
    if predictor not in PREDICTORS:
        raise ValueError(f"unknown predictor {predictor!r}; expected one of {PREDICTORS}")
    t0 = time.perf_counter()
    alpha1 = scenario.params.incentive_alpha1 if alpha1 is None else alpha1
    diag = SolverDiagnostics()
    M, K = scenario.n_users, scenario.n_subcarriers
    if M == 0:
        diag.optimality_flag = "exact"
        return SubcarrierAssignment(np.full(K, IDLE), 0), diag
    prefs = build_preference_matrix(scenario) if prefs is None else prefs
    Q = scenario.contributions
    gamma = scenario.params.revenue_split
    item_values = alpha1 * Q - scenario.charges[:, np.newaxis] if predictor == "relaxation" else None
    linear = gamma * scenario.charges[:, np.newaxis] - alpha1 * Q
    pred = PrefixPredictor(scenario, prefs, linear, item_values)
    owner, _ = _search_assignment(
        scenario, pred, scenario.capacities, True, restarts, scenario.seed, exact_cap, diag
    )
    diag.wall_time = time.perf_counter() - t0
    return SubcarrierAssignment(owner, M), diag


def run_noncooperative(
    scenario: Scenario,
    alpha1: float | None = None,
    follower: str = "relaxation",
    restarts: int = 20,
    exact_cap: int = LEADER_EXACT_CAP,
    predictor: str = "prefix",
) -> MechanismOutcome:
    """Leader assigns subcarriers, then each follower picks its tasks.

    The leader's prediction and the followers' actual rule can differ; with
    the defaults the leader plans for value-blind prefixes while users drop
    tasks that do not pay.
    """
    if follower not in FOLLOWERS:
        raise ValueError(f"unknown follower rule {follower!r}; expected one of {FOLLOWERS}")
    alpha1 = scenario.params.incentive_alpha1 if alpha1 is None else alpha1
    prefs = build_preference_matrix(scenario)
    assign, diag = leader_allocate(scenario, prefs, alpha1, restarts, exact_cap, predictor)
    bud = budgets(scenario.capacities, assign)
    X = np.zeros((scenario.n_tasks, scenario.n_users), dtype=np.int8)
    for j in range(scenario.n_users):
        X[:, j] = follower_response(scenario, prefs, bud[j], j, alpha1, follower)
    report = report_noncoop(scenario, X, alpha1)
    d = diag.to_dict()
    d["follower"] = follower
    d["predictor"] = predictor
    return MechanismOutcome(
        mode="noncoop",
        seed=scenario.seed,
        alpha=float(alpha1),
        assignment=assign,
        participation=X,
        utilities=report,
        diagnostics=d,
        scenario_meta=scenario_meta(scenario),
    )


def _centralized_exact(scenario: Scenario, diag: SolverDiagnostics):
    """Enumerate every participation matrix and every full assignment."""
    N, M, K = scenario.n_tasks, scenario.n_users, scenario.n_subcarriers
    caps = scenario.capacities
    Q, rates = scenario.contributions, scenario.rates
    gamma = scenario.params.revenue_split
    bits = np.array(list(itertools.product((0, 1), repeat=N * M)), dtype=np.int8).reshape(-1, N, M)
    totals = (bits * Q).sum(axis=2)
    values = performance_from_totals(totals, scenario.phi, scenario.rho).sum(axis=1)
    values = values + gamma * (bits * scenario.charges[:, np.newaxis]).sum(axis=(1, 2))
    demand = np.einsum("i,pij->pj", rates, bits.astype(float))
    best = (-np.inf, None, None)
    for combo in itertools.product(range(M), repeat=K):
        owner = np.array(combo, dtype=np.int64)
        bud = np.zeros(M)
        np.add.at(bud, owner, caps[np.arange(K), owner])
        feasible = np.all(demand <= bud, axis=1)
        diag.iterations += 1
        diag.nodes_explored += int(bits.shape[0])
        p = int(np.argmax(np.where(feasible, values, -np.inf)))
        if values[p] > best[0]:
            best = (float(values[p]), owner, bits[p])
    return best[1], best[2]


def _coordinate_ascent(
    scenario: Scenario, X, bud, diag: SolverDiagnostics, max_sweeps: int = 50, node_cap: int = 100_000
):
    """Each user re-solves its knapsack against everyone else's choices.

    A user's knapsack value for task i is its marginal effect on task i's
    performance plus the revenue share, which is exactly its effect on the
    centralized objective, so every accepted step strictly improves it.
    Knapsacks too large for branch and bound fall back to the scaled DP.
    """
    Q = scenario.contributions
    phi, rho, rates = scenario.phi, scenario.rho, scenario.rates
    share = scenario.params.revenue_split * scenario.charges
    X = X.copy()
    totals = (Q * X).sum(axis=1)
    for _ in range(max_sweeps):
        changed = False
        for j in range(scenario.n_users):
            if bud[j] <= 0:
                continue
            rest = totals - Q[:, j] * X[:, j]
            base = performance_from_totals(rest, phi, rho)
            gain = performance_from_totals(rest + Q[:, j], phi, rho) - base + share
            current = float(gain @ X[:, j])
            try:
                sel, val, nodes = knapsack_01(gain, rates, bud[j], max_nodes=node_cap)
                diag.nodes_explored += nodes
            except SolverLimitError:
                sel, val = knapsack_scaled_dp(gain, rates, bud[j])
            diag.iterations += 1
            if val > current + EPS:
                X[:, j] = sel
                totals = rest + Q[:, j] * sel
                changed = True
        if not changed:
            break
    return X


def run_centralized(
    scenario: Scenario,
    restarts: int = 20,
    exact_vars: int = CENTRAL_EXACT_VARS,
) -> MechanismOutcome:
    """Joint choice of assignment and participation; an upper-bound estimate.

    Exact enumeration when ``N*M + K*M <= exact_vars``. Otherwise the
    assignment comes from local search with prefix-predicted participation,
    then participation is refined by per-user exact knapsacks.
    """
    t0 = time.perf_counter()
    diag = SolverDiagnostics()
    N, M, K = scenario.n_tasks, scenario.n_users, scenario.n_subcarriers
    if M == 0:
        owner, X = np.full(K, IDLE), np.zeros((N, 0), dtype=np.int8)
        diag.optimality_flag = "exact"
    elif N * M + K * M <= exact_vars:
        owner, X = _centralized_exact(scenario, diag)
        diag.optimality_flag = "exact"
    else:
        prefs = build_preference_matrix(scenario)
        linear = np.broadcast_to(
            scenario.params.revenue_split * scenario.charges[:, np.newaxis], (N, M)
        )
        pred = PrefixPredictor(scenario, prefs, linear)
        owner, _ = _search_assignment(
            scenario, pred, scenario.capacities, False, restarts, scenario.seed, 0, diag
        )
        bud = np.zeros(M)
        np.add.at(bud, owner, scenario.capacities[np.arange(K), owner])
        X = pred.participation(pred.counts(bud))
        X = _coordinate_ascent(scenario, X, bud, diag)
        diag.optimality_flag = "heuristic"
    diag.wall_time = time.perf_counter() - t0
    d = diag.to_dict()
    d["upper_bound_estimate"] = True
    return MechanismOutcome(
        mode="centralized",
        seed=scenario.seed,
        alpha=None,
        assignment=SubcarrierAssignment(owner, M),
        participation=X,
        utilities=report_centralized(scenario, X),
        diagnostics=d,
        scenario_meta=scenario_meta(scenario),
    )
