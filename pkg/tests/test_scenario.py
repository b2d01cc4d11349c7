import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocfsense.scenario import (
    A_RANGE, AOI_RANGE, DISTANCE_FLOOR, PHI_RANGE, RATE_RANGE, RHO_RANGE,
    GlobalParams, Scenario, Task, dbm_to_watt, distance, gain_mean, generate_scenario,
    make_scenario,
)

from .conftest import toy_task

coords = st.tuples(st.floats(-100, 100), st.floats(-100, 100))


def test_distance_examples():
    assert distance((0, 0), (3, 4)) == 5.0
    assert distance((2.5, 2.5), (2.5, 2.5)) == 0.0


@given(coords, coords)
def test_distance_symmetric_and_nonnegative(p, q):
    assert distance(p, q) == distance(q, p)
    assert distance(p, q) >= 0
    if p == q:
        assert distance(p, q) == 0


def test_dbm_conversion():
    assert math.isclose(dbm_to_watt(23.0), 0.19952623149688797)
    assert math.isclose(dbm_to_watt(-90.0), 1e-12)


def test_generate_is_deterministic():
    p = GlobalParams(rng_seed=3)
    a, b = generate_scenario(p, 10, 15), generate_scenario(p, 10, 15)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert np.array_equal(a.channel_gains, b.channel_gains)
    c = generate_scenario(p.replace(rng_seed=4), 10, 15)
    assert not np.array_equal(a.channel_gains, c.channel_gains)


def test_user_at_base_station_uses_floor():
    p = GlobalParams()
    s = make_scenario(p, [toy_task(1)], [p.bs_location])
    assert s.users[0].distance_to_bs == 0.0
    assert gain_mean(0.0, p.path_loss_exponent) == DISTANCE_FLOOR ** -3.0
    assert np.all(np.isfinite(s.capacities))


@pytest.mark.parametrize("n_tasks,n_users", [(0, 5), (5, 0), (-1, 2)])
def test_rejects_bad_dimensions(n_tasks, n_users):
    with pytest.raises(ValueError):
        generate_scenario(GlobalParams(), n_tasks, n_users)


@pytest.mark.parametrize("field", ["bandwidth", "tx_power", "rate_unit", "side_length"])
def test_rejects_nonpositive_params(field):
    with pytest.raises(ValueError):
        GlobalParams(**{field: 0.0})


def test_rejects_negative_alpha():
    with pytest.raises(ValueError):
        GlobalParams(incentive_alpha1=-0.1)


def test_task_invariants():
    with pytest.raises(ValueError):
        Task(id=1, location=(0, 0), a=1.0, d0=0.0, r=1.0, rho=1.0, phi=1.0)


def test_distributional_means():
    # 400 scenarios x 30 tasks = 12000 draws per quantity
    draws = {k: [] for k in ("a", "rho", "phi", "r", "d0")}
    for seed in range(400):
        s = generate_scenario(GlobalParams(rng_seed=seed), 30, 1)
        for t in s.tasks:
            draws["a"].append(t.a)
            draws["rho"].append(t.rho)
            draws["phi"].append(t.phi)
            draws["r"].append(t.r / s.params.rate_unit)
            draws["d0"].append(t.d0)
    ranges = {"a": A_RANGE, "rho": RHO_RANGE, "phi": PHI_RANGE, "r": RATE_RANGE, "d0": AOI_RANGE}
    for key, (lo, hi) in ranges.items():
        mean = np.mean(draws[key])
        assert abs(mean - (lo + hi) / 2) <= 0.02 * (lo + hi) / 2, key
    assert 115 <= np.mean(draws["phi"]) <= 125


def test_gain_means_follow_path_loss():
    p = GlobalParams(rng_seed=5, n_subcarriers=2000)
    s = generate_scenario(p, 1, 4)
    for j, u in enumerate(s.users):
        ratio = s.channel_gains[:, j].mean() / gain_mean(u.distance_to_bs, p.path_loss_exponent)
        # mean of 2000 unit exponentials: sd ~ 0.022
        assert abs(ratio - 1.0) < 0.1


def test_json_round_trip(small_scenario):
    text = json.dumps(small_scenario.to_dict())
    back = Scenario.from_dict(json.loads(text))
    assert json.dumps(back.to_dict()) == text
    assert np.array_equal(back.contributions, small_scenario.contributions)


def test_params_round_trip_rejects_unknown():
    p = GlobalParams(rng_seed=9, rate_unit=10e3)
    assert GlobalParams.from_dict(p.to_dict()) == p
    with pytest.raises(ValueError):
        GlobalParams.from_dict({"nonsense": 1})


def test_stored_distances_must_match(small_scenario):
    d = small_scenario.to_dict()
    d["users"][0]["distance_to_bs"] += 1.0
    with pytest.raises(ValueError):
        Scenario.from_dict(d)


def test_gain_shape_checked():
    with pytest.raises(ValueError):
        make_scenario(GlobalParams(), [toy_task(1)], [(1.0, 1.0)], np.ones((3, 1)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 6))
def test_generated_scenarios_satisfy_invariants(seed, n, m):
    s = generate_scenario(GlobalParams(rng_seed=seed, n_subcarriers=5), n, m)
    assert s.channel_gains.shape == (5, m)
    assert np.all(s.channel_gains > 0)
    for u in s.users:
        assert u.distance_to_bs == distance(u.location, s.params.bs_location)
        for t in s.tasks:
            assert u.distances_to_tasks[t.id - 1] == distance(u.location, t.location)
            assert 0 <= t.location[0] <= 10 and 0 <= t.location[1] <= 10
