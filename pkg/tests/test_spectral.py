from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sipf.config import Discretization, PhysParams, mode_indices, omega_squared
from sipf.spectral import (
    CorruptedFieldError,
    SpectralField,
    deposit_particles,
    eval_field_grid,
    eval_field_refined,
    eval_field_shifted,
    field_from_grid,
    field_max_abs,
    field_step,
    hermitian_residual,
    read_field_csv,
    restrict_modes,
    total_concentration,
    write_field_csv,
)

L = 8.0


def _disc(H=8, dt=1e-4):
    return Discretization(box_len=L, modes=H, particles=10, dt=dt, horizon=dt)


def _cos_mode(H, amp=1.0):
    a = np.zeros((H, H, H), complex)
    a[1, 0, 0] = a[-1, 0, 0] = amp / 2
    return SpectralField(a, L)


def _random_hermitian(H, seed):
    rng = np.random.default_rng(seed)
    return field_from_grid(rng.standard_normal((H, H, H)), L)


# ---------------------------------------------------------------- deposition


def test_all_particles_at_origin_give_flat_spectrum():
    rho = deposit_particles(np.zeros((5, 3)), 20.0, _disc())
    np.testing.assert_allclose(rho, 20.0, rtol=0, atol=1e-13)


def test_two_symmetric_particles_give_cosine():
    x0 = np.array([0.3, -0.7, 1.1])
    disc = _disc()
    rho = deposit_particles(np.stack([x0, -x0]), 2.0, disc)
    idx = mode_indices(8)
    w = 2 * np.pi / L * idx
    phase = w[:, None, None] * x0[0] + w[None, :, None] * x0[1] + w[None, None, :] * x0[2]
    interior = np.abs(idx) < 4
    mask = interior[:, None, None] & interior[None, :, None] & interior[None, None, :]
    np.testing.assert_allclose(rho[mask].real, 2 * np.cos(phase[mask]), atol=1e-13)
    np.testing.assert_allclose(rho[mask].imag, 0.0, atol=1e-13)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 300), st.floats(0.1, 100.0), st.integers(0, 2**32 - 1))
def test_deposition_bound_and_zero_mode(n, mass, seed):
    pos = np.random.default_rng(seed).uniform(-L / 2, L / 2, (n, 3))
    rho = deposit_particles(pos, mass, _disc())
    assert rho[0, 0, 0].real == mass
    assert rho[0, 0, 0].imag == 0.0
    assert np.max(np.abs(rho)) <= mass * (1 + 1e-12)
    assert hermitian_residual(rho) <= 1e-10


def test_deposition_is_chunk_invariant():
    pos = np.random.default_rng(0).uniform(-4, 4, (5000, 3))
    rho = deposit_particles(pos, 1.0, _disc())
    parts = sum(deposit_particles(pos[i : i + 1000], 1.0, _disc()) * 1000 for i in range(0, 5000, 1000)) / 5000
    np.testing.assert_allclose(rho, parts, atol=1e-13)


# ---------------------------------------------------------------- field update


def test_elliptic_limit_ignores_previous():
    disc = _disc()
    rho = deposit_particles(np.random.default_rng(1).uniform(-2, 2, (50, 3)), 5.0, disc)
    phys = PhysParams(epsilon=0.0, k=0.4, mass=5.0)
    prev = _random_hermitian(8, 3)
    out = field_step(prev, rho, phys, disc)
    np.testing.assert_allclose(out.coeffs, rho / (L**3 * (omega_squared(8, L) + 0.16)), rtol=1e-14)


def test_elliptic_fixed_point_is_steady():
    disc = _disc()
    rho = deposit_particles(np.random.default_rng(2).uniform(-2, 2, (50, 3)), 5.0, disc)
    phys = PhysParams(epsilon=1e-2, k=0.4, mass=5.0)
    steady = SpectralField(rho / (L**3 * (omega_squared(8, L) + 0.16)), L)
    out = field_step(steady, rho, phys, disc)
    np.testing.assert_allclose(out.coeffs, steady.coeffs, rtol=1e-12, atol=1e-16)


def test_zero_mode_arithmetic():
    disc = _disc(dt=1e-4)
    phys = PhysParams(epsilon=1e-4, k=0.1, mass=20.0)
    rho = np.zeros((8, 8, 8), complex)
    rho[0, 0, 0] = 20.0
    out = field_step(SpectralField.zeros(8, L), rho, phys, disc)
    assert L**3 * out.coeffs[0, 0, 0].real == pytest.approx(20 / 1.01, rel=1e-14)
    assert total_concentration(out) == pytest.approx(19.80198, rel=1e-6)


def test_eps_to_zero_continuity():
    disc = _disc(dt=1e-3)
    rho = deposit_particles(np.random.default_rng(4).uniform(-2, 2, (40, 3)), 3.0, disc)
    prev = _random_hermitian(8, 5)
    a = field_step(prev, rho, PhysParams(epsilon=1e-12, k=1.0, mass=3.0), disc).coeffs
    b = field_step(prev, rho, PhysParams(epsilon=0.0, k=1.0, mass=3.0), disc).coeffs
    assert np.max(np.abs(a - b)) / np.max(np.abs(b)) <= 1e-8


def test_field_step_preserves_hermitian_symmetry():
    disc = _disc()
    rho = deposit_particles(np.random.default_rng(6).uniform(-3, 3, (30, 3)), 1.0, disc)
    out = field_step(_random_hermitian(8, 7), rho, PhysParams(), disc)
    assert hermitian_residual(out.coeffs) <= 1e-10


# ---------------------------------------------------------------- evaluation


def test_constant_mode_grid():
    a = np.zeros((8, 8, 8), complex)
    a[0, 0, 0] = 2.5
    np.testing.assert_allclose(eval_field_grid(SpectralField(a, L)), 2.5)


def test_cosine_reconstruction():
    H = 8
    g = (np.arange(H) - H // 2) * L / H
    vals = eval_field_grid(_cos_mode(H))
    np.testing.assert_allclose(vals, np.broadcast_to(np.cos(2 * np.pi * g / L)[:, None, None], vals.shape), atol=1e-14)


def test_grid_round_trip():
    rng = np.random.default_rng(8)
    vals = rng.standard_normal((8, 8, 8))
    f = field_from_grid(vals, L)
    assert hermitian_residual(f.coeffs) <= 1e-10
    np.testing.assert_allclose(eval_field_grid(f), vals, atol=1e-12)
    np.testing.assert_allclose(field_from_grid(eval_field_grid(f), L).coeffs, f.coeffs, atol=1e-12)


def test_corrupted_field_detected():
    a = np.zeros((8, 8, 8), complex)
    a[1, 0, 0] = 1.0
    with pytest.raises(CorruptedFieldError):
        eval_field_grid(SpectralField(a, L))


def test_zero_shift_is_grid():
    f = _random_hermitian(8, 9)
    np.testing.assert_allclose(eval_field_shifted(f, np.zeros(3)), eval_field_grid(f), atol=1e-12)


def test_constant_field_shift_invariant():
    a = np.zeros((8, 8, 8), complex)
    a[0, 0, 0] = -1.5
    np.testing.assert_allclose(eval_field_shifted(SpectralField(a, L), [0.13, -0.2, 0.31]), -1.5, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_cosine_translation(s1, s2, s3):
    H = 8
    g = (np.arange(H) - H // 2) * L / H
    vals = eval_field_shifted(_cos_mode(H), [s1, s2, s3])
    want = np.cos(2 * np.pi * (g - s1) / L)[:, None, None]
    np.testing.assert_allclose(vals, np.broadcast_to(want, vals.shape), atol=1e-13)


def test_nyquist_shift_stays_real():
    # a Nyquist-only field is cos(pi x / h); its translate is still real
    a = np.zeros((8, 8, 8), complex)
    a[4, 0, 0] = 1.0
    vals = eval_field_shifted(SpectralField(a, L), [0.3, 0.0, 0.0])
    g = (np.arange(8) - 4) * 1.0
    np.testing.assert_allclose(vals[:, 0, 0], np.cos(np.pi * (g - 0.3)), atol=1e-13)


def test_refined_grid_contains_native_grid():
    f = _random_hermitian(8, 10)
    np.testing.assert_allclose(eval_field_refined(f, 2)[::2, ::2, ::2], eval_field_grid(f), atol=1e-12)


def test_max_abs_examples():
    a = np.zeros((8, 8, 8), complex)
    a[0, 0, 0] = -3.0
    assert field_max_abs(SpectralField(a, L)) == pytest.approx(3.0)
    assert field_max_abs(_cos_mode(8), refine=2) == pytest.approx(1.0, rel=1e-12)


def test_max_abs_refinement_smooth_field():
    rng = np.random.default_rng(11)
    H = 8
    idx = mode_indices(H)
    w2 = idx[:, None, None] ** 2 + idx[None, :, None] ** 2 + idx[None, None, :] ** 2
    f = field_from_grid(rng.standard_normal((H, H, H)), L)
    smooth = SpectralField(np.where(w2 <= 4, f.coeffs, 0), L)
    a, b = field_max_abs(smooth), field_max_abs(smooth, refine=2)
    assert b >= a
    assert abs(b - a) / b < 0.05


def test_total_concentration_examples():
    a = np.zeros((8, 8, 8), complex)
    a[0, 0, 0] = 0.25
    assert total_concentration(SpectralField(a, L)) == pytest.approx(512 * 0.25)
    disc = _disc()
    rho = deposit_particles(np.random.default_rng(12).uniform(-1, 1, (20, 3)), 7.0, disc)
    steady = field_step(SpectralField.zeros(8, L), rho, PhysParams(epsilon=0.0, k=0.5, mass=7.0), disc)
    assert total_concentration(steady) == pytest.approx(7.0 / 0.25, rel=1e-14)


def test_restrict_modes():
    f = _random_hermitian(12, 13)
    r = restrict_modes(f.coeffs, 8)
    assert r.shape == (8, 8, 8)
    assert r[1, 2, 3] == f.coeffs[1, 2, 3]
    assert r[-1, -2, 0] == f.coeffs[-1, -2, 0]
    with pytest.raises(ValueError):
        restrict_modes(r, 12)


def test_coefficients_are_read_only():
    f = SpectralField.zeros(4, L)
    with pytest.raises(ValueError):
        f.coeffs[0, 0, 0] = 1.0


def test_csv_round_trip_exact(tmp_path):
    f = _random_hermitian(6, 14)
    write_field_csv(tmp_path / "f.csv", f, step=12, time=0.0012)
    g, meta = read_field_csv(tmp_path / "f.csv")
    np.testing.assert_array_equal(g.coeffs, f.coeffs)
    assert meta == {"L": L, "H": 6, "step": 12, "time": 0.0012}
