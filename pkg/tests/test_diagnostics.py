from __future__ import annotations

import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sipf import diagnostics as dg
from sipf.config import PhysParams
from sipf.driver import DiagnosticsSeries, run
from sipf.spectral import SpectralField

from .conftest import make_config


def _series(values, dt=0.1, status="completed"):
    s = DiagnosticsSeries(dt=dt, status=status)
    for i, v in enumerate(values):
        s.append(i * dt, v, 0.0, 0.0)
    return s


# ---------------------------------------------------------------- ratio


def test_ratio_identical_resolution_is_one():
    cfg = make_config(mass=20.0, horizon=5e-3)
    res = dg.ratio_diagnostic(cfg, 8, 8)
    np.testing.assert_array_equal(res.ratio, 1.0)
    assert len(res.times) == cfg.disc.n_steps
    assert not dg.classify_blowup(res.times, res.ratio).blowup


def test_ratio_excludes_initial_step():
    t, r = dg.ratio_series(_series([0.0, 2.0, 4.0]), _series([0.0, 1.0, 2.0]))
    np.testing.assert_allclose(t, [0.1, 0.2])
    np.testing.assert_array_equal(r, [2.0, 2.0])


def test_ratio_undefined_denominator():
    with pytest.raises(dg.UndefinedRatioError):
        dg.ratio_series(_series([0.0, 1.0, 1.0]), _series([0.0, 1.0, 0.0]))


def test_ratio_after_divergence_is_infinite():
    hi = _series([0.0, 1.0], status="diverged")
    t, r = dg.ratio_series(hi, _series([0.0, 1.0, 1.0, 1.0]), n_steps=3, dt=0.1)
    assert r[0] == 1.0 and np.all(np.isinf(r[1:]))
    v = dg.classify_blowup(t, r, threshold=1.5, sustain=10)
    assert v.blowup and v.onset == pytest.approx(0.2)


def test_ratio_twin_order():
    with pytest.raises(ValueError):
        dg.ratio_diagnostic(make_config(), 8, 12)


def test_classify_blowup_cases():
    t = np.arange(1, 31) * 0.01
    assert not dg.classify_blowup(t, np.ones(30)).blowup
    r = np.ones(30)
    r[5:14] = 2.0  # nine steps only
    assert not dg.classify_blowup(t, r, sustain=10).blowup
    r[5:15] = 2.0
    v = dg.classify_blowup(t, r, sustain=10)
    assert v.blowup and v.onset == pytest.approx(t[5])
    r = np.ones(30)
    r[3] = 1.6
    assert dg.classify_blowup(t, r, sustain=1).onset == pytest.approx(t[3])
    assert not dg.classify_blowup(t, r, threshold=1.6, sustain=1).blowup


def test_calibrated_threshold_between_one_and_delta_limit():
    phys = PhysParams(mass=80.0)
    rd = dg.delta_limit_ratio(phys, 8.0, 12, 8)
    assert rd > 1
    thr = dg.calibrated_threshold(phys, 8.0, 12, 8)
    assert thr == pytest.approx(1 + 0.5 * (rd - 1))
    assert dg.delta_limit_ratio(phys, 8.0, 8, 8) == 1.0
    with pytest.raises(ValueError):
        dg.calibrated_threshold(phys, 8.0, 12, 8, fraction=1.0)


# ---------------------------------------------------------------- scaling


def test_scaling_fits_choose_the_right_law():
    H = np.array([8, 12, 16, 20, 24])
    assert dg.scaling_fits(H, 3.0 * H + 1).preferred == "linear"
    assert dg.scaling_fits(H, 5.0 * np.log(H) + 1).preferred == "log"
    res = dg.scaling_fits(H, 3.0 * H + 1)
    assert res.r2_lin == pytest.approx(1.0) and res.slope_lin == pytest.approx(3.0)
    with pytest.raises(ValueError):
        dg.scaling_fits([8, 12], [1, 2])


# ---------------------------------------------------------------- c0 error


def test_c0_error_zero_for_exact_law():
    phys = PhysParams(epsilon=1e-4, k=0.1, mass=80.0)
    t = np.linspace(0, 0.01, 101)
    c = dg.c0_ground_truth(t, phys)
    assert dg.c0_error((t, c), phys) == 0.0
    assert dg.c0_error((t, c), phys, reduce="final") == 0.0
    with pytest.raises(ValueError):
        dg.c0_error((t, c), phys, reduce="max")


def test_c0_ground_truth_limits():
    phys = PhysParams(epsilon=1e-4, k=0.1, mass=80.0)
    assert dg.c0_ground_truth(0.0, phys, 3.0) == pytest.approx(3.0)
    assert dg.c0_ground_truth(1.0, phys) == pytest.approx(80.0 / 0.01)
    eq = dg.c0_ground_truth(np.array([0.0, 1.0]), dataclasses.replace(phys, epsilon=0.0))
    np.testing.assert_allclose(eq, [0.0, 8000.0])


def test_c0_error_resampling_invariance():
    phys = PhysParams(epsilon=1e-4, k=0.1, mass=80.0)

    def err(n):
        t = np.linspace(0, 0.01, n)
        c = dg.c0_ground_truth(t, phys) * (1 + 0.01 * np.sin(300 * t))
        return dg.c0_error((t, c), phys)

    assert abs(err(4001) - err(8001)) <= 1e-3 * err(8001)


# ---------------------------------------------------------------- field error


def _field(seed, modes=4):
    rng = np.random.default_rng(seed)
    return SpectralField(rng.normal(size=(modes,) * 3) + 1j * rng.normal(size=(modes,) * 3), 8.0)


def test_field_l2_error_basic():
    a = _field(0)
    assert dg.field_l2_error(a, a) == 0.0
    b = SpectralField(2 * a.coeffs, 8.0)
    assert dg.field_l2_error(a, b) == pytest.approx(0.5)
    with pytest.raises(ZeroDivisionError):
        dg.field_l2_error(a, SpectralField.zeros(4, 8.0))
    with pytest.raises(ValueError):
        dg.field_l2_error(a, SpectralField(a.coeffs, 6.0))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 2**31), st.integers(0, 2**31))
def test_field_l2_triangle_inequality(s1, s2, s3):
    a, b, c = _field(s1), _field(s2), _field(s3)
    nc = float(np.sqrt(np.sum(np.abs(c.coeffs) ** 2)))
    nb = float(np.sqrt(np.sum(np.abs(b.coeffs) ** 2)))
    ab = dg.field_l2_error(a, b) * nb
    bc = dg.field_l2_error(b, c) * nc
    ac = dg.field_l2_error(a, c) * nc
    assert ac <= ab + bc + 1e-9


# ---------------------------------------------------------------- convergence


def test_loglog_slope():
    x = np.array([1.0, 0.5, 0.25, 0.125])
    assert dg.loglog_slope(x, 3 * x**1.5) == pytest.approx(1.5)


def test_convergence_study_dt_small():
    ref = make_config(mass=20.0, dt=2.5e-4, horizon=4e-3, particles=64)
    res = dg.convergence_study("dt", [2e-3, 1e-3, 5e-4], ref)
    assert res.axis == "dt" and len(res.l2_errors) == 3
    assert np.all(res.l2_errors > 0)
    assert res.l2_errors[0] > res.l2_errors[-1]
    with pytest.raises(ValueError):
        dg.convergence_study("dt", [1e-4], ref)
    with pytest.raises(ValueError):
        dg.convergence_study("x", [1e-3], ref)


# ---------------------------------------------------------------- mass scans


def test_critical_mass_scan_grid():
    b = dg.critical_mass_scan(lambda m: m > 47.7, masses=[40, 45, 47, 48, 55])
    assert (b.lower, b.upper) == (47.0, 48.0)
    assert len(b.scanned) == 5
    with pytest.raises(dg.NoBracketError):
        dg.critical_mass_scan(lambda m: False, masses=[40, 50])
    with pytest.raises(dg.NoBracketError):
        dg.critical_mass_scan(lambda m: True, masses=[40, 50])


def test_critical_mass_scan_bisection():
    b = dg.critical_mass_scan(lambda m: dg.BlowupVerdict(m > 47.7), bracket=(40, 60), mode="bisection", width=0.2)
    assert b.width <= 0.2
    assert b.lower <= 47.7 < b.upper
    with pytest.raises(dg.NoBracketError):
        dg.critical_mass_scan(lambda m: m > 70, bracket=(40, 60), mode="bisection")


def test_bracket_overlap():
    a = dg.MassBracket(45.0, 50.0)
    assert a.overlaps(dg.MassBracket(48.0, 49.0))
    assert not a.overlaps(dg.MassBracket(55.0, 56.0))
    assert a.overlaps(dg.MassBracket(55.0, 56.0), tol=5.0)
    with pytest.raises(ValueError):
        dg.MassBracket(2.0, 1.0)


def test_map_tasks_keeps_order(monkeypatch):
    assert dg.map_tasks(abs, [-3, 1, -2], jobs=1) == [3, 1, 2]
    monkeypatch.setenv("SIPF_THREADS", "1")
    assert dg.resolve_jobs(8) == 1


# ---------------------------------------------------------------- variance


def test_variance_free_diffusion_slope():
    # chi = 0 is outside the validated range, so bypass validation
    cfg = make_config(mass=20.0, particles=2000, dt=1e-3, horizon=0.05, seed=5)
    cfg = dataclasses.replace(cfg, phys=dataclasses.replace(cfg.phys, chi=0.0))
    s = run(cfg).series
    fit = dg.variance_fit(s.time, s.variance, s.status)
    assert fit.slope == pytest.approx(6.0, rel=0.1)


def test_variance_fit_frozen_and_errors():
    t = np.linspace(0, 1, 20)
    fit = dg.variance_fit(t, np.full(20, 0.2))
    assert fit.slope == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(dg.DivergedRunError):
        dg.variance_fit(t, t, status="diverged")
    with pytest.raises(ValueError):
        dg.variance_fit(t[:5], t[:5])


# ---------------------------------------------------------------- reports


def test_report_writers(tmp_path):
    dg.write_ratio_csv(tmp_path / "ratio.csv", [0.1, 0.2], [1.0, math.inf])
    lines = (tmp_path / "ratio.csv").read_text().splitlines()
    assert lines[0] == "time,ratio" and lines[2] == "0.2,inf"
    out = dg.write_study_report(tmp_path / "study.csv", ["H", "cinf"], [(8, 1.5), (12, np.float64(2.5))], {"slope": np.float64(0.25)})
    assert out.name == "study_summary.json"
    assert json.loads(out.read_text()) == {"slope": 0.25}
    assert (tmp_path / "study.csv").read_text().splitlines() == ["H,cinf", "8,1.5", "12,2.5"]
