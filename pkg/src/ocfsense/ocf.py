"""Overlapping coalition formation among users.

Each task is a coalition; a user may sit in several at once as long as the
summed task rates fit its uplink budget. Coalition value is the incentive
``alpha2 * performance`` split in proportion to contributions. Users move by
transfers (leave p, enter q), quits and joins; entering a coalition needs the
consent of its members, i.e. nobody already inside may lose payoff.

Rounds follow a fixed order: record strategies, a quit-or-transfer pass over
every (user, task) membership that does not pay, then each user in turn
exhausts its feasible transfers and finally scans for joins. Transfer pairs
(p, q) in that last step are drawn from the strategy recorded at the start of
the round and each is tried at most once, which caps the attempts per user at
``|g| (N - |g|)``. The run stops after a round in which no user's strategy
changed, so the final round scans every pair of the final OCS.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np

from .channel import SubcarrierAssignment, budgets as channel_budgets
from .optimizers import build_preference_matrix, follower_prefix_selection
from .outcome import MechanismOutcome, scenario_meta
from .scenario import Scenario
from .sensing import EPS, payoff_matrix, report_coop

DEFAULT_MAX_ROUNDS = 10_000


class OcfConvergenceError(RuntimeError):
    def __init__(self, message: str, dump: dict[str, Any]):
        super().__init__(message)
        self.dump = dump


@dataclass
class CoalitionState:
    """Mutable overlapping coalition structure plus per-user budgets.

    ``ocs[i, j] == 1`` when user j is in coalition i. ``totals`` caches the
    summed contribution of each coalition and is kept in sync by the
    ``apply_*`` methods.
    """

    ocs: np.ndarray
    budgets: np.ndarray
    contributions: np.ndarray
    tried_pairs: list[np.ndarray] = field(default_factory=list)
    iteration: int = 0
    totals: np.ndarray = field(init=False)
    sizes: np.ndarray = field(init=False)

    def __post_init__(self):
        self.ocs = np.array(self.ocs, dtype=np.int8)
        self.budgets = np.asarray(self.budgets, dtype=float)
        self.totals = (self.contributions * self.ocs).sum(axis=1)
        self.sizes = self.ocs.sum(axis=1).astype(np.int64)
        N, M = self.ocs.shape
        if not self.tried_pairs:
            # tried_pairs[j][p, q]: user j already tried moving from p to q this round
            self.tried_pairs = [np.zeros((N, N), dtype=bool) for _ in range(M)]

    @classmethod
    def from_participation(cls, scenario: Scenario, X, budgets) -> "CoalitionState":
        return cls(np.array(X, dtype=np.int8), budgets, scenario.contributions)

    def strategy(self, j: int) -> np.ndarray:
        return self.ocs[:, j].copy()

    def _set(self, i: int, j: int, value: int):
        if self.ocs[i, j] == value:
            raise ValueError(f"user {j + 1} membership in coalition {i + 1} already {value}")
        self.ocs[i, j] = value
        self.sizes[i] += 1 if value else -1
        # recompute instead of += / -= so totals never drift
        self.totals[i] = float(self.contributions[i] @ self.ocs[i])

    def apply_join(self, j: int, q: int):
        self._set(q, j, 1)

    def apply_quit(self, j: int, p: int):
        self._set(p, j, 0)

    def apply_transfer(self, j: int, p: int, q: int):
        self._set(p, j, 0)
        self._set(q, j, 1)

    def is_valid(self, rates) -> bool:
        return bool(np.all(np.asarray(rates) @ self.ocs <= self.budgets))


class _View:
    """Everything user j needs to judge its moves against the current OCS."""

    __slots__ = ("j", "member", "demand", "budget", "current_net", "join_net", "permitted", "_state", "_rate_now", "_alpha2", "_scenario")

    def __init__(self, state: CoalitionState, scenario: Scenario, alpha2: float, j: int):
        Q = state.contributions
        q_j = Q[:, j]
        phi, rho, charges, rates = scenario.phi, scenario.rho, scenario.charges, scenario.rates
        member = state.ocs[:, j].astype(bool)
        totals = state.totals
        rate_now = alpha2 * phi / np.maximum(totals, rho)
        self.j, self._state, self._scenario, self._alpha2 = j, state, scenario, alpha2
        self._rate_now = rate_now
        self.member = member
        self.demand = float(rates @ member)
        self.budget = float(state.budgets[j])
        self.current_net = np.where(member, rate_now * q_j - charges, -np.inf)

        # entering coalition q (only meaningful where j is not a member)
        rate_in = alpha2 * phi / np.maximum(totals + q_j, rho)
        self.join_net = np.where(member, -np.inf, rate_in * q_j - charges)
        # the incumbent with the largest contribution loses the most
        q_max = (state.ocs * Q).max(axis=1)
        self.permitted = rate_in * q_max >= rate_now * q_max - EPS

    def leave_ok(self, p: int) -> bool:
        """Whether every other member of p keeps its payoff when j leaves."""
        state = self._state
        others = state.ocs[p].astype(bool)
        others[self.j] = False
        q = state.contributions[p, others]
        total = state.totals[p] - state.contributions[p, self.j]
        rate_out = self._alpha2 * self._scenario.phi[p] / max(total, self._scenario.rho[p])
        return bool(np.all(rate_out * q >= self._rate_now[p] * q - EPS))

    def transfer_ok(self, p: int, q: int, rates) -> tuple[bool, str]:
        if self.demand - rates[p] + rates[q] > self.budget:
            return False, "budget"
        if not self.join_net[q] > max(0.0, self.current_net[p]) + EPS:
            return False, "unprofitable"
        if not self.permitted[q]:
            return False, "not permitted"
        return True, "feasible"

    def transfer_targets(self, p: int, rates) -> np.ndarray:
        """Boolean over q: feasible transfers out of p."""
        fits = self.demand - rates[p] + rates <= self.budget
        gains = self.join_net > max(0.0, self.current_net[p]) + EPS
        return fits & gains & self.permitted & ~self.member

    def join_ok(self, q: int, rates) -> bool:
        return bool(
            not self.member[q]
            and self.join_net[q] > EPS
            and self.demand + rates[q] <= self.budget
            and self.permitted[q]
        )


def _check_alpha(scenario: Scenario, alpha2):
    return scenario.params.incentive_alpha2 if alpha2 is None else float(alpha2)


def transfer_feasible(state: CoalitionState, j: int, p: int, q: int, scenario: Scenario, alpha2=None):
    """Whether user j may move from coalition p to q, and the first failed condition.

    Conditions, in order: the new task set fits the budget; the net payoff in
    q beats both zero and the current net payoff in p by more than EPS; no
    member of q loses more than EPS of payoff.
    """
    if state.ocs[p, j] != 1 or state.ocs[q, j] != 0:
        raise ValueError(f"transfer needs user {j + 1} in coalition {p + 1} and not in {q + 1}")
    view = _View(state, scenario, _check_alpha(scenario, alpha2), j)
    return view.transfer_ok(p, q, scenario.rates)


def quit_feasible(state: CoalitionState, j: int, p: int, scenario: Scenario, alpha2=None) -> bool:
    """User j may quit p when p does not pay and no feasible transfer out of p exists.

    Remaining members can never lose payoff from a departure; that is checked
    anyway and a violation raises.
    """
    if state.ocs[p, j] != 1:
        raise ValueError(f"user {j + 1} is not in coalition {p + 1}")
    view = _View(state, scenario, _check_alpha(scenario, alpha2), j)
    if not view.leave_ok(p):
        raise RuntimeError(f"departure of user {j + 1} would lower payoffs in coalition {p + 1}")
    return bool(view.current_net[p] <= EPS and not view.transfer_targets(p, scenario.rates).any())


def join_feasible(state: CoalitionState, j: int, q: int, scenario: Scenario, alpha2=None) -> bool:
    if state.ocs[q, j] != 0:
        raise ValueError(f"user {j + 1} is already in coalition {q + 1}")
    view = _View(state, scenario, _check_alpha(scenario, alpha2), j)
    return view.join_ok(q, scenario.rates)


def init_ocs(scenario: Scenario, assignment: SubcarrierAssignment) -> CoalitionState:
    """Each user takes the preference-order prefix of tasks that fits its budget."""
    bud = channel_budgets(scenario.capacities, assignment)
    prefs = build_preference_matrix(scenario)
    X = np.zeros((scenario.n_tasks, scenario.n_users), dtype=np.int8)
    for j in range(scenario.n_users):
        X[:, j] = follower_prefix_selection(prefs, bud[j], scenario.rates, j)
    return CoalitionState.from_participation(scenario, X, bud)


def user_utilities(state: CoalitionState, scenario: Scenario, alpha2: float) -> np.ndarray:
    pay = payoff_matrix(scenario, state.ocs, alpha2)
    return pay.sum(axis=0) - (scenario.charges[:, np.newaxis] * state.ocs).sum(axis=0)


def verify_t_stable(state: CoalitionState, scenario: Scenario, alpha2=None):
    """Exhaustive check that no user has a feasible transfer, quit or join.

    Returns ``(True, None)`` or ``(False, counterexample)``.
    """
    alpha2 = _check_alpha(scenario, alpha2)
    rates = scenario.rates
    for j in range(scenario.n_users):
        view = _View(state, scenario, alpha2, j)
        for p in np.flatnonzero(view.member):
            targets = np.flatnonzero(view.transfer_targets(p, rates))
            if targets.size:
                return False, {"op": "transfer", "user": j + 1, "from": int(p) + 1, "to": int(targets[0]) + 1}
        for p in np.flatnonzero(view.member):
            if view.current_net[p] <= EPS:
                return False, {"op": "quit", "user": j + 1, "from": int(p) + 1, "to": None}
        for q in range(scenario.n_tasks):
            if view.join_ok(q, rates):
                return False, {"op": "join", "user": j + 1, "from": None, "to": q + 1}
    return True, None


def worst_case_attempts(M: int, N: int) -> int:
    """Transfer attempts in one round when every user sits in ceil(N/2) coalitions."""
    h = math.ceil(N / 2)
    return M * h * (N - h)


def signaling_cost_estimate(M: int, N: int, eta: int = 1, mu: int = 1) -> dict[str, int]:
    """Control-channel message counts; ``eta`` per value/location, ``mu`` per id."""
    return {
        "phase1": M * N * eta + M * mu,
        "per_iteration_worst": worst_case_attempts(M, N) * ((M + 1) * eta + (M - 1) * mu),
        "settlement": 2 * M * N * mu,
    }


@dataclass
class OcfDiagnostics:
    rounds: int = 0
    iterations_to_converge: int = 0
    transfer_attempts: int = 0
    attempts_per_round: list[int] = field(default_factory=list)
    transfers_executed: int = 0
    quits: int = 0
    joins: int = 0
    messages_estimate: int = 0
    total_user_utility_trace: list[float] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class _Recorder:
    def __init__(self, state, scenario, alpha2, diag, sink, check):
        self.state, self.scenario, self.alpha2 = state, scenario, alpha2
        self.diag, self.sink, self.check = diag, sink, check

    def __call__(self, op: str, j: int, src, dst, before_util, before_pay):
        state, scenario = self.state, self.scenario
        if op == "transfer":
            self.diag.transfers_executed += 1
        elif op == "quit":
            self.diag.quits += 1
        else:
            self.diag.joins += 1
        if self.sink is None and not self.check:
            return
        after_util = user_utilities(state, scenario, self.alpha2)
        if self.check:
            _check_move(state, scenario, self.alpha2, op, j, src, dst, before_util, after_util, before_pay)
        if self.sink is not None:
            self.sink({
                "iteration": state.iteration,
                "user": j + 1,
                "op": op,
                "from": None if src is None else int(src) + 1,
                "to": None if dst is None else int(dst) + 1,
                "utility_before": float(before_util[j]),
                "utility_after": float(after_util[j]),
            })


def _check_move(state, scenario, alpha2, op, j, src, dst, before_util, after_util, before_pay):
    """Post-move invariants: validity, mover gain, total utility kept, no incumbent harmed."""
    if not state.is_valid(scenario.rates):
        raise RuntimeError(f"{op} by user {j + 1} broke the budget constraint")
    gain = after_util[j] - before_util[j]
    if op in ("transfer", "join") and not gain > EPS:
        raise RuntimeError(f"{op} by user {j + 1} did not improve its utility ({gain})")
    if after_util.sum() < before_util.sum() - EPS:
        raise RuntimeError(f"{op} by user {j + 1} lowered the total user utility")
    after_pay = payoff_matrix(scenario, state.ocs, alpha2)
    for coalition in (c for c in (src, dst) if c is not None):
        stay = state.ocs[coalition].astype(bool)
        stay[j] = False
        if np.any(after_pay[coalition, stay] < before_pay[coalition, stay] - EPS):
            raise RuntimeError(f"{op} by user {j + 1} lowered a payoff in coalition {coalition + 1}")


def _dump(state: CoalitionState, diag: OcfDiagnostics) -> dict[str, Any]:
    return {"ocs": state.ocs.tolist(), "budgets": state.budgets.tolist(), "diagnostics": diag.to_dict()}


def run_ocf(
    scenario: Scenario,
    assignment: SubcarrierAssignment,
    alpha2: float | None = None,
    *,
    mode: str = "ocf",
    max_rounds: int = DEFAULT_MAX_ROUNDS,
    trace: Callable[[dict], None] | None = None,
    check_invariants: bool = False,
    eta: int = 1,
    mu: int = 1,
):
    """Run coalition formation from the prefix initialisation to a stable OCS.

    ``iterations_to_converge`` counts user turns (one per user per round,
    including the final round that confirms nothing changes); ``rounds``
    counts the passes themselves. ``trace`` receives one dict per executed
    operation. With ``check_invariants`` every move is re-audited.
    The final state can be rebuilt with :func:`state_from_outcome`.
    """
    alpha2 = _check_alpha(scenario, alpha2)
    N, M = scenario.n_tasks, scenario.n_users
    rates = scenario.rates
    state = init_ocs(scenario, assignment)
    diag = OcfDiagnostics()
    diag.messages_estimate = signaling_cost_estimate(M, N, eta, mu)["phase1"]
    diag.total_user_utility_trace.append(float(user_utilities(state, scenario, alpha2).sum()))
    record = _Recorder(state, scenario, alpha2, diag, trace, check_invariants)
    auditing = trace is not None or check_invariants

    def snapshot():
        if not auditing:
            return None, None
        return user_utilities(state, scenario, alpha2), payoff_matrix(scenario, state.ocs, alpha2)

    while True:
        state.iteration += 1
        if state.iteration > max_rounds:
            raise OcfConvergenceError(f"no stable OCS after {max_rounds} rounds", _dump(state, diag))
        recorded = state.ocs.copy()
        for tried in state.tried_pairs:
            tried[:] = False
        attempts = 0

        # memberships that do not pay: move elsewhere if possible, else quit
        for j in range(M):
            view = _View(state, scenario, alpha2, j)
            for i in range(N):
                if not view.member[i] or view.current_net[i] > EPS:
                    continue
                targets = view.transfer_targets(i, rates)
                before = snapshot()
                if targets.any():
                    q = int(np.argmax(np.where(targets, view.join_net, -np.inf)))
                    state.apply_transfer(j, i, q)
                    record("transfer", j, i, q, *before)
                else:
                    if not view.leave_ok(i):
                        raise RuntimeError(f"departure of user {j + 1} would lower payoffs in coalition {i + 1}")
                    state.apply_quit(j, i)
                    record("quit", j, i, None, *before)
                view = _View(state, scenario, alpha2, j)

        # each user exhausts feasible transfers, then looks for joins
        for j in range(M):
            tried = state.tried_pairs[j]
            while True:
                view = _View(state, scenario, alpha2, j)
                hit, n_tried, msgs = _scan_pairs(view, recorded[:, j], tried, rates, state.sizes, eta, mu)
                attempts += n_tried
                diag.messages_estimate += msgs
                if hit is None:
                    break
                p, q = hit
                before = snapshot()
                state.apply_transfer(j, p, q)
                record("transfer", j, p, q, *before)
            view = _View(state, scenario, alpha2, j)
            for q in range(N):
                if view.join_ok(q, rates):
                    before = snapshot()
                    state.apply_join(j, q)
                    record("join", j, None, q, *before)
                    view = _View(state, scenario, alpha2, j)

        diag.transfer_attempts += attempts
        diag.attempts_per_round.append(attempts)
        diag.total_user_utility_trace.append(float(user_utilities(state, scenario, alpha2).sum()))
        unchanged = int(np.all(recorded == state.ocs, axis=0).sum())
        if unchanged == M:
            break

    diag.rounds = state.iteration
    diag.iterations_to_converge = state.iteration * M
    diag.messages_estimate += 2 * int(state.ocs.sum()) * mu
    X = state.ocs.copy()
    pay = payoff_matrix(scenario, X, alpha2)
    outcome = MechanismOutcome(
        mode=mode,
        seed=scenario.seed,
        alpha=alpha2,
        assignment=assignment,
        participation=X,
        utilities=report_coop(scenario, X, alpha2, pay),
        diagnostics=diag.to_dict(),
        scenario_meta=scenario_meta(scenario),
        payoffs=pay,
    )
    return outcome, diag


def _scan_pairs(view: _View, recorded, tried, rates, sizes, eta: int, mu: int):
    """Ordered scan over untried (p, q) pairs; returns the first feasible one.

    Pairs run over p ascending among recorded memberships, then q among
    recorded non-memberships by prospective net payoff (descending, ties by
    id). Every pair up to and including the hit is marked tried. Also returns
    the number of pairs tried and their message cost: each attempt ships the
    locations and ids of q's members plus q's two task constants.
    """
    current = np.flatnonzero(view.member & (recorded == 1))
    outside = np.flatnonzero(~view.member & (recorded == 0))
    if current.size == 0 or outside.size == 0:
        return None, 0, 0
    outside = outside[np.argsort(-view.join_net[outside], kind="stable")]
    fits = view.demand - rates[current][:, np.newaxis] + rates[outside] <= view.budget
    floor = np.maximum(0.0, view.current_net[current]) + EPS
    gains = view.join_net[outside] > floor[:, np.newaxis]
    feasible = fits & gains & view.permitted[outside]
    fresh = ~tried[np.ix_(current, outside)]
    order = np.flatnonzero(fresh.ravel())
    if order.size == 0:
        return None, 0, 0
    ok = feasible.ravel()[order]
    stop = int(np.argmax(ok)) if ok.any() else order.size - 1
    taken = order[: stop + 1]
    rows, cols = np.divmod(taken, outside.size)
    tried[current[rows], outside[cols]] = True
    s = sizes[outside[cols]]
    msgs = int(((s + 2) * eta + s * mu).sum())
    if not ok.any():
        return None, int(taken.size), msgs
    return (int(current[rows[-1]]), int(outside[cols[-1]])), int(taken.size), msgs


def jsonl_writer(fh) -> Callable[[dict], None]:
    def write(record: dict):
        fh.write(json.dumps(record, sort_keys=True) + "\n")

    return write


def state_from_outcome(scenario: Scenario, outcome: MechanismOutcome) -> CoalitionState:
    bud = channel_budgets(scenario.capacities, outcome.assignment)
    return CoalitionState.from_participation(scenario, outcome.participation, bud)
