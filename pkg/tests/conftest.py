from __future__ import annotations

import pytest

from sipf.config import Discretization, InitialCondition, PhysParams, validate_config


def make_config(mass=20.0, modes=8, particles=64, dt=1e-3, horizon=1e-2, seed=3, epsilon=1e-4, k=0.1, mu=1.0, chi=1.0, init=None, box_len=8.0):
    phys = PhysParams(mu=mu, chi=chi, epsilon=epsilon, k=k, mass=mass)
    disc = Discretization(box_len=box_len, modes=modes, particles=particles, dt=dt, horizon=horizon, seed=seed)
    return validate_config(phys, disc, init or InitialCondition())


@pytest.fixture
def small_cfg():
    return make_config()


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
