import io
import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocfsense import ocf
from ocfsense.channel import SubcarrierAssignment, allocate_priority, allocate_random, check_rate_feasible
from ocfsense.ocf import CoalitionState
from ocfsense.optimizers import build_preference_matrix
from ocfsense.scenario import GlobalParams, generate_scenario

from .conftest import toy_scenario, toy_task

GOLDEN = Path(__file__).parent / "data" / "golden_trace.jsonl"


def _two_tasks(a_q=5.0, rho_q=4.0, phi_q=100.0, r_q=100e3, a_p=0.1):
    # everyone inside both AoIs (d0 = 1 km), so Q equals a
    p = toy_task(1, location=(2.0, 2.0), a=a_p, d0=1.0, r=100e3, rho=10.0, phi=10.0)
    q = toy_task(2, location=(2.0, 2.5), a=a_q, d0=1.0, r=r_q, rho=rho_q, phi=phi_q)
    return toy_scenario([p, q], [(2.0, 2.0), (2.0, 2.5)], n_subcarriers=2)


def _state(s, ocs, budgets):
    return CoalitionState.from_participation(s, np.array(ocs), np.array(budgets, dtype=float))


def test_transfer_into_saturated_coalition_not_permitted():
    s = _two_tasks()
    st_ = _state(s, [[1, 0], [0, 1]], [200e3, 200e3])
    # incumbent alone already exceeds rho: its payoff falls from 50 to 25 if user 1 enters
    assert s.contributions[1, 1] > s.rho[1]
    assert ocf.transfer_feasible(st_, 0, 0, 1, s, 0.5) == (False, "not permitted")


def test_transfer_into_empty_coalition():
    s = _two_tasks(rho_q=40.0)
    st_ = _state(s, [[1, 0], [0, 0]], [200e3, 200e3])
    gain = 0.5 * s.phi[1] / s.rho[1] * s.contributions[1, 0] - s.charges[1]
    stay = 0.5 * s.phi[0] / s.rho[0] * s.contributions[0, 0] - s.charges[0]
    assert gain > 0 > stay
    assert ocf.transfer_feasible(st_, 0, 0, 1, s, 0.5) == (True, "feasible")


def test_transfer_over_budget():
    s = _two_tasks(rho_q=40.0, r_q=300e3)
    st_ = _state(s, [[1, 0], [0, 0]], [200e3, 200e3])
    assert ocf.transfer_feasible(st_, 0, 0, 1, s, 0.5) == (False, "budget")


def test_transfer_not_profitable():
    s = _two_tasks(rho_q=40.0)
    st_ = _state(s, [[1, 0], [0, 0]], [200e3, 200e3])
    assert ocf.transfer_feasible(st_, 0, 0, 1, s, 0.0) == (False, "unprofitable")


def test_transfer_precondition():
    s = _two_tasks()
    st_ = _state(s, [[0, 0], [0, 0]], [200e3, 200e3])
    with pytest.raises(ValueError):
        ocf.transfer_feasible(st_, 0, 0, 1, s, 0.5)


def test_quit_examples():
    s = _two_tasks(rho_q=40.0)
    lonely = _state(s, [[1, 0], [0, 0]], [100e3, 100e3])
    # 0.5 * (10 / 10) * 0.1 = 0.05 payoff against a charge of 0.7; no room to transfer is needed
    assert ocf.quit_feasible(lonely, 0, 0, s, 0.5) is False  # transfer to task 2 still possible
    assert ocf.quit_feasible(lonely, 0, 0, s, 0.0) is True
    rich = _two_tasks(a_p=20.0)
    happy = _state(rich, [[1, 0], [0, 0]], [100e3, 100e3])
    assert ocf.quit_feasible(happy, 0, 0, rich, 0.5) is False


def test_join_examples():
    s = _two_tasks(rho_q=40.0)
    st_ = _state(s, [[0, 0], [0, 0]], [200e3, 200e3])
    assert ocf.join_feasible(st_, 0, 1, s, 0.5)
    full = _state(s, [[1, 0], [0, 0]], [100e3, 100e3])
    assert not ocf.join_feasible(full, 0, 1, s, 0.5)
    sat = _two_tasks()
    crowded = _state(sat, [[0, 0], [0, 1]], [200e3, 200e3])
    assert not ocf.join_feasible(crowded, 0, 1, sat, 0.5)
    with pytest.raises(ValueError):
        ocf.join_feasible(crowded, 1, 1, sat, 0.5)


def test_verify_detects_profitable_join():
    s = _two_tasks(rho_q=40.0)
    st_ = _state(s, [[0, 0], [0, 0]], [200e3, 0.0])
    ok, cex = ocf.verify_t_stable(st_, s, 0.5)
    assert not ok
    assert cex == {"op": "join", "user": 1, "from": None, "to": 2}
    assert ocf.verify_t_stable(st_, s, 0.0) == (True, None)


def test_worst_case_attempts():
    assert ocf.worst_case_attempts(1, 2) == 1
    assert ocf.worst_case_attempts(20, 20) == 2000
    assert ocf.worst_case_attempts(5, 1) == 0


def test_signaling_cost():
    assert ocf.signaling_cost_estimate(1, 1)["phase1"] == 2
    assert ocf.signaling_cost_estimate(2, 3)["settlement"] == 12
    assert ocf.signaling_cost_estimate(2, 2)["per_iteration_worst"] == 8
    assert ocf.signaling_cost_estimate(2, 2, eta=2, mu=0)["per_iteration_worst"] == 2 * 3 * 2


def test_init_ocs_prefix():
    s = generate_scenario(GlobalParams(rng_seed=2, n_subcarriers=4), 5, 3)
    assign = SubcarrierAssignment([0, 0, 0, 0], 3)  # users 2 and 3 get nothing
    st_ = ocf.init_ocs(s, assign)
    assert st_.ocs[:, 1].sum() == 0 and st_.ocs[:, 2].sum() == 0
    prefs = build_preference_matrix(s)
    order = prefs[:, 0]
    cum = np.cumsum(s.rates[order])
    n = int((cum <= st_.budgets[0]).sum())
    assert sorted(np.flatnonzero(st_.ocs[:, 0]).tolist()) == sorted(order[:n].tolist())

    rich = generate_scenario(GlobalParams(rng_seed=2, n_subcarriers=4, rate_unit=1.0), 5, 1)
    full = ocf.init_ocs(rich, SubcarrierAssignment([0, 0, 0, 0], 1))
    assert full.ocs[:, 0].sum() == 5


def test_single_user_converges_fast():
    for seed in range(10):
        s = generate_scenario(GlobalParams(rng_seed=seed, n_subcarriers=3, rate_unit=20e3), 6, 1)
        out, diag = ocf.run_ocf(s, allocate_priority(s), 0.5, check_invariants=True)
        assert diag.rounds <= 2
        st_ = ocf.state_from_outcome(s, out)
        assert ocf.verify_t_stable(st_, s, 0.5)[0]
        net = out.payoffs[:, 0] - s.charges
        assert np.all(net[out.participation[:, 0] == 1] > 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 12), st.integers(1, 8), st.floats(0.0, 1.5), st.booleans())
def test_run_invariants(seed, m, n, alpha2, random_alloc):
    s = generate_scenario(GlobalParams(rng_seed=seed, n_subcarriers=8, rate_unit=20e3), n, m)
    assign = allocate_random(s, np.random.default_rng(seed)) if random_alloc else allocate_priority(s)
    records = []
    out, diag = ocf.run_ocf(s, assign, alpha2, trace=records.append, check_invariants=True)
    st_ = ocf.state_from_outcome(s, out)
    assert ocf.verify_t_stable(st_, s, alpha2) == (True, None)
    assert check_rate_feasible(s.capacities, assign, out.participation, s.rates).all()
    trace = diag.total_user_utility_trace
    assert len(trace) == diag.rounds + 1
    assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))
    assert max(diag.attempts_per_round) <= ocf.worst_case_attempts(m, n)
    assert diag.iterations_to_converge == diag.rounds * m
    assert len(records) == diag.transfers_executed + diag.quits + diag.joins
    for r in records:
        if r["op"] in ("transfer", "join"):
            assert r["utility_after"] > r["utility_before"] + 1e-9
    assert math.isclose(out.utilities.total_user_utility, trace[-1], rel_tol=1e-9, abs_tol=1e-9)


def test_quit_assertion_never_fires():
    rng = np.random.default_rng(0)
    checked = 0
    for seed in range(200):
        s = generate_scenario(GlobalParams(rng_seed=seed, n_subcarriers=2), 4, 8)
        for _ in range(50):
            X = rng.integers(0, 2, size=(4, 8))
            st_ = _state(s, X, np.full(8, 1e9))
            i, j = np.argwhere(X)[rng.integers(X.sum())] if X.sum() else (None, None)
            if i is None:
                continue
            ocf.quit_feasible(st_, int(j), int(i), s, rng.uniform(0, 2))
            checked += 1
    assert checked >= 9000


GOLDEN_PARAMS = GlobalParams(rng_seed=5, rate_unit=10e3, charge_unit=200e3)


def test_trace_lines_and_golden():
    s = generate_scenario(GOLDEN_PARAMS, 10, 12)
    buf = io.StringIO()
    ocf.run_ocf(s, allocate_priority(s), 0.5, trace=ocf.jsonl_writer(buf))
    lines = buf.getvalue().splitlines()
    assert lines
    for line in lines:
        rec = json.loads(line)
        assert set(rec) == {"iteration", "user", "op", "from", "to", "utility_before", "utility_after"}
        assert rec["op"] in ("transfer", "quit", "join")
        assert 1 <= rec["user"] <= 12
    assert lines == GOLDEN.read_text().splitlines()


def test_iteration_cap():
    s = generate_scenario(GlobalParams(rng_seed=5), 10, 12)
    with pytest.raises(ocf.OcfConvergenceError) as err:
        ocf.run_ocf(s, allocate_priority(s), 0.5, max_rounds=1)
    assert "ocs" in err.value.dump and "diagnostics" in err.value.dump


def test_alpha_zero_empties_everything(small_scenario):
    out, diag = ocf.run_ocf(small_scenario, allocate_priority(small_scenario), 0.0)
    assert out.participation.sum() == 0
    assert out.platform_utility == 0.0
