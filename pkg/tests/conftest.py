import sys

import numpy as np
import pytest

from ocfsense.scenario import GlobalParams, Task, generate_scenario, make_scenario


def toy_task(i, location=(5.0, 5.0), a=5.0, d0=1.0, r=100e3, rho=10.0, phi=20.0):
    return Task(id=i, location=location, a=a, d0=d0, r=r, rho=rho, phi=phi)


def toy_scenario(tasks, user_locations, gains=None, **params):
    p = GlobalParams(**params)
    if gains is None:
        gains = np.ones((p.n_subcarriers, len(user_locations))) * 1e-3
    return make_scenario(p, tasks, user_locations, gains)


@pytest.fixture(scope="session")
def small_scenario():
    return generate_scenario(GlobalParams(rng_seed=7), 8, 12)


@pytest.fixture(scope="session")
def medium_scenario():
    return generate_scenario(GlobalParams(rng_seed=11), 20, 20)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("tests.test_acceptance")
    lines = getattr(acceptance, "RESULTS", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
