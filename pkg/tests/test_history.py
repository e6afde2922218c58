from __future__ import annotations

import math

import numpy as np
import pytest

from sipf.config import PhysParams
from sipf.history import MAX_PARTICLES, HistoryScaleError, history_grad_c, history_oracle_step
from sipf.particles import pairwise_drift


def _pair(sep):
    return np.array([[-sep, 0.0, 0.0], [sep, 0.0, 0.0]])


def test_first_step_matches_memoryless_drift():
    # smooth regime: separation well inside the diffusion length sqrt(dt/eps)
    phys = PhysParams(mu=1.0, chi=1.0, epsilon=1.0, k=1.0, mass=2.0)
    dt = 0.01
    pos = _pair(0.015)
    beta = math.sqrt(phys.k**2 + phys.epsilon / dt)
    memoryless, _ = pairwise_drift(pos, phys, beta, dt)
    oracle = history_oracle_step([pos], phys, dt)
    rel = np.linalg.norm(memoryless - oracle) / np.linalg.norm(oracle)
    assert rel <= 0.10
    # both attract
    assert oracle[0, 0] > 0 and oracle[1, 0] < 0


def test_long_history_reaches_elliptic_limit():
    # frozen particles: after many steps the field is the screened potential with beta = k
    phys = PhysParams(mu=1.0, chi=1.0, epsilon=0.01, k=1.0, mass=2.0)
    dt = 0.01
    pos = _pair(0.25)
    elliptic, _ = pairwise_drift(pos, phys, phys.k, dt)
    errs = []
    for n in (1, 5, 20):
        oracle = history_oracle_step([pos] * n, phys, dt)
        errs.append(np.linalg.norm(oracle - elliptic) / np.linalg.norm(elliptic))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-8


def test_shapes_and_self_exclusion():
    rng = np.random.default_rng(4)
    pos = rng.normal(size=(6, 3))
    phys = PhysParams(epsilon=0.5, k=1.0, mass=3.0)
    inc = history_oracle_step([pos, pos + 0.01], phys, 0.05)
    assert inc.shape == (6, 3)
    assert np.all(np.isfinite(inc))
    # a lone particle feels nothing from its own path
    np.testing.assert_array_equal(history_oracle_step([pos[:1]], phys, 0.05), 0.0)


def test_zero_mass_gives_zero_drift():
    phys = PhysParams(epsilon=1.0, k=1.0, mass=0.0)
    np.testing.assert_array_equal(history_grad_c(np.zeros(3), [_pair(0.1)], phys, 0.01), 0.0)


def test_scale_limits():
    phys = PhysParams(epsilon=1.0, k=1.0, mass=1.0)
    with pytest.raises(HistoryScaleError):
        history_oracle_step([np.zeros((MAX_PARTICLES + 1, 3))], phys, 0.01)
    with pytest.raises(ValueError):
        history_oracle_step([], phys, 0.01)
    with pytest.raises(ValueError):
        history_grad_c(np.zeros(3), [_pair(0.1)], PhysParams(epsilon=0.0, mass=1.0), 0.01)
