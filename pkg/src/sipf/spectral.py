"""Fourier-series representation of the chemical concentration ``c``.

Coefficients ``alpha`` multiply the basis ``exp(i omega . x)`` on the centered
box ``[-L/2, L/2]^3`` with ``omega = 2 pi/L (j, m, l)`` and
``j, m, l in {-H/2, ..., H/2 - 1}``.  Arrays are stored in FFT order (see
:func:`sipf.config.mode_indices`); grid values are returned in centered
order, so ``grid[a, b, c]`` lives at ``((a - H/2) h, (b - H/2) h, (c - H/2) h)``
with ``h = L/H``.

The Nyquist index ``-H/2`` has no partner inside the cube.  Wherever the
series is evaluated off the quadrature grid, or a point mass is projected
onto it, a Nyquist factor ``exp(+-i omega_N x)`` is replaced by
``cos(omega_N x)``, i.e. the coefficient is split equally between
``+H/2`` and ``-H/2``.  This keeps every field real-valued.

Deposition returns the unnormalized transform ``rho_hat(0) = M0``; the
field update divides by ``L**3`` so that ``alpha`` are basis coefficients
and ``int c dx = L**3 Re alpha_000``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Discretization, PhysParams, mode_indices, omega_squared

__all__ = [
    "CorruptedFieldError",
    "SpectralField",
    "phase_factors",
    "deposit_particles",
    "field_step",
    "field_from_grid",
    "eval_field_grid",
    "eval_field_shifted",
    "eval_field_refined",
    "field_max_abs",
    "total_concentration",
    "hermitian_residual",
    "restrict_modes",
    "write_field_csv",
    "read_field_csv",
]

_IMAG_TOL = 1e-8
_DEPOSIT_CHUNK = 2048


class CorruptedFieldError(ValueError):
    """The coefficients are not Hermitian, so the field is not real-valued."""


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients of ``c`` on the ``H**3`` mode cube (FFT order)."""

    coeffs: np.ndarray
    box_len: float

    def __post_init__(self):
        arr = np.array(self.coeffs, dtype=np.complex128)
        if arr.ndim != 3 or len(set(arr.shape)) != 1:
            raise ValueError(f"coefficients must be a cube, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    @property
    def modes(self) -> int:
        return self.coeffs.shape[0]

    @classmethod
    def zeros(cls, modes: int, box_len: float) -> "SpectralField":
        return cls(np.zeros((modes,) * 3, dtype=np.complex128), box_len)

    def centered(self) -> np.ndarray:
        """Coefficients with index ``[j + H/2, m + H/2, l + H/2]``."""
        return np.fft.fftshift(self.coeffs)

    @classmethod
    def from_centered(cls, arr: np.ndarray, box_len: float) -> "SpectralField":
        return cls(np.fft.ifftshift(np.asarray(arr, dtype=np.complex128)), box_len)

    def scaled(self, factor: float) -> "SpectralField":
        return SpectralField(self.coeffs * factor, self.box_len)


def phase_factors(x: np.ndarray, modes: int, box_len: float, sign: int = -1) -> np.ndarray:
    """One-dimensional factors ``exp(sign i omega_j x)`` for every mode ``j``.

    ``x`` has shape ``(N,)``; the result has shape ``(N, H)`` in FFT order.
    The Nyquist column is ``cos(omega_N x)``.
    """
    idx = mode_indices(modes)
    omega = 2 * np.pi / box_len * idx
    phase = np.outer(np.asarray(x, dtype=float), omega)
    out = np.exp(sign * 1j * phase)
    nyq = modes // 2
    out[:, nyq] = np.cos(phase[:, nyq])
    return out


def deposit_particles(positions: np.ndarray, mass: float, disc: Discretization) -> np.ndarray:
    """Transform of the empirical measure, ``(M0/P) sum_p exp(-i omega . X_p)``.

    Returns the ``(H, H, H)`` mode array in FFT order.  ``rho_hat(0)`` equals
    ``mass`` exactly and ``|rho_hat| <= mass`` everywhere.
    """
    pos = np.asarray(positions, dtype=float)
    n, H, L = len(pos), disc.modes, disc.box_len
    total = np.zeros((H * H, H), dtype=np.complex128)
    for start in range(0, n, _DEPOSIT_CHUNK):
        block = pos[start : start + _DEPOSIT_CHUNK]
        ex = phase_factors(block[:, 0], H, L)
        ey = phase_factors(block[:, 1], H, L)
        ez = phase_factors(block[:, 2], H, L)
        exy = (ex[:, :, None] * ey[:, None, :]).reshape(len(block), H * H)
        total += exy.T @ ez
    return mass * (total.reshape(H, H, H) / n)


def field_step(prev: SpectralField, rho_hat: np.ndarray, phys: PhysParams, disc: Discretization) -> SpectralField:
    """One implicit-Euler update of the concentration, mode by mode.

    ``alpha_n = A alpha_{n-1} + rho_hat / (L^3 (|w|^2 + beta^2))`` with
    ``A = 1 / (1 + (|w|^2 + k^2) dt / eps)``.  For ``eps = 0`` this is the
    elliptic solve ``rho_hat / (L^3 (|w|^2 + k^2))``.
    """
    L = disc.box_len
    w2 = omega_squared(disc.modes, L)
    if phys.epsilon == 0:
        new = rho_hat / (L**3 * (w2 + phys.k**2))
    else:
        decay = 1.0 / (1.0 + (w2 + phys.k**2) * disc.dt / phys.epsilon)
        beta_sq = phys.k**2 + phys.epsilon / disc.dt
        new = decay * prev.coeffs + rho_hat / (L**3 * (w2 + beta_sq))
    return SpectralField(new, L)


def field_from_grid(values: np.ndarray, box_len: float) -> SpectralField:
    """Coefficients interpolating real grid values given in centered order."""
    values = np.asarray(values, dtype=float)
    return SpectralField(np.fft.fftn(np.fft.ifftshift(values)) / values.size, box_len)


def _to_grid(coeffs: np.ndarray) -> np.ndarray:
    vals = np.fft.ifftn(coeffs) * coeffs.size
    scale = np.max(np.abs(vals.real)) if vals.size else 0.0
    resid = np.max(np.abs(vals.imag)) if vals.size else 0.0
    if resid > _IMAG_TOL * max(scale, np.finfo(float).tiny):
        raise CorruptedFieldError(f"imaginary residue {resid:.3e} exceeds tolerance (scale {scale:.3e})")
    return np.fft.fftshift(vals.real)


def eval_field_grid(field: SpectralField, disc: Discretization | None = None) -> np.ndarray:
    """Real values of ``c`` on the ``H**3`` quadrature grid (centered order)."""
    return _to_grid(field.coeffs)


def _shift_multiplier(shift: np.ndarray, modes: int, box_len: float) -> np.ndarray:
    fx, fy, fz = (phase_factors(np.array([s]), modes, box_len)[0] for s in shift)
    return fx[:, None, None] * fy[None, :, None] * fz[None, None, :]


def eval_field_shifted(field: SpectralField, shift, disc: Discretization | None = None) -> np.ndarray:
    """Values of ``c`` at ``x_{j,m,l} - shift`` (centered order).

    The coefficients are multiplied by ``exp(-i omega . shift)`` and
    transformed back; this is an exact translation of the truncated series.
    """
    shift = np.asarray(shift, dtype=float).reshape(3)
    if not np.all(np.isfinite(shift)):
        raise ValueError("shift must be finite")
    mult = _shift_multiplier(shift, field.modes, field.box_len)
    return _to_grid(field.coeffs * mult)


def _pad_axis(arr: np.ndarray, axis: int, new: int) -> np.ndarray:
    H = arr.shape[axis]
    half = H // 2
    shape = list(arr.shape)
    shape[axis] = new
    out = np.zeros(shape, dtype=arr.dtype)
    src = np.moveaxis(arr, axis, 0)
    dst = np.moveaxis(out, axis, 0)
    dst[:half] = src[:half]
    dst[new - half + 1 :] = src[half + 1 :]
    dst[half] += 0.5 * src[half]
    dst[new - half] += 0.5 * src[half]
    return out


def eval_field_refined(field: SpectralField, refine: int = 2) -> np.ndarray:
    """Values of ``c`` on a grid ``refine`` times finer (centered order), by zero padding."""
    refine = int(refine)
    if refine < 1:
        raise ValueError("refine must be >= 1")
    if refine == 1:
        return eval_field_grid(field)
    new = field.modes * refine
    coeffs = field.coeffs
    for axis in range(3):
        coeffs = _pad_axis(coeffs, axis, new)
    return _to_grid(coeffs)


def field_max_abs(field: SpectralField, disc: Discretization | None = None, refine: int = 1) -> float:
    """``max |c|`` on the quadrature grid, optionally refined by zero padding."""
    return float(np.max(np.abs(eval_field_refined(field, refine))))


def total_concentration(field: SpectralField, disc: Discretization | None = None) -> float:
    """``int_Omega c dx = L**3 Re alpha_000``."""
    return float(field.box_len**3 * field.coeffs[0, 0, 0].real)


def hermitian_residual(coeffs: np.ndarray) -> float:
    """Relative violation of ``alpha(-k) = conj(alpha(k))`` (indices mod ``H``)."""
    coeffs = np.asarray(coeffs)
    flipped = np.roll(coeffs[::-1, ::-1, ::-1], 1, axis=(0, 1, 2))
    scale = np.max(np.abs(coeffs))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(coeffs - np.conj(flipped))) / scale)


def restrict_modes(coeffs: np.ndarray, modes: int) -> np.ndarray:
    """Coefficients of the indices ``-modes/2 .. modes/2 - 1`` (FFT order)."""
    H = coeffs.shape[0]
    if modes > H:
        raise ValueError(f"cannot restrict {H} modes to {modes}")
    sel = mode_indices(modes) % H
    return coeffs[np.ix_(sel, sel, sel)]


def write_field_csv(path: str | Path, field: SpectralField, step: int = 0, time: float = 0.0) -> None:
    """Write ``(j, m, l, re, im)`` rows with a one-line ``#`` metadata header."""
    H = field.modes
    idx = np.arange(H) - H // 2
    jj, mm, ll = np.meshgrid(idx, idx, idx, indexing="ij")
    c = field.centered()
    with open(path, "w") as fh:
        fh.write(f"# L={float(field.box_len)!r} H={H} step={int(step)} time={float(time)!r}\n")
        fh.write("j,m,l,re,im\n")
        for j, m, l, v in zip(jj.ravel(), mm.ravel(), ll.ravel(), c.ravel()):
            fh.write(f"{j},{m},{l},{float(v.real)!r},{float(v.imag)!r}\n")


def read_field_csv(path: str | Path) -> tuple[SpectralField, dict]:
    """Inverse of :func:`write_field_csv`; returns the field and header metadata."""
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing metadata header")
        meta = dict(item.split("=", 1) for item in header[1:].split())
        data = np.loadtxt(fh, delimiter=",", skiprows=1, ndmin=2)
    L, H = float(meta["L"]), int(meta["H"])
    arr = np.zeros((H, H, H), dtype=np.complex128)
    ijk = data[:, :3].astype(int) + H // 2
    arr[ijk[:, 0], ijk[:, 1], ijk[:, 2]] = data[:, 3] + 1j * data[:, 4]
    meta = {"L": L, "H": H, "step": int(meta.get("step", 0)), "time": float(meta.get("time", 0.0))}
    return SpectralField.from_centered(arr, L), meta
