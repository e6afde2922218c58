"""One Euler-Maruyama step of the particle ensemble.

The drift has two parts.  The pair part is the direct sum of kernel
gradients over all other particles.  The field part is a midpoint quadrature
of ``-eps chi (grad K * c)`` on the box grid.  The quadrature nodes are
translated by a per-particle shift so that the kernel is only sampled at
cell-center offsets, never at its singularity.

:func:`field_drift` evaluates that quadrature literally for one point;
:class:`FieldDrift` computes the same sum for a whole ensemble.  Writing the
shifted field values as a Fourier series gives

    sum_n gradK((a + 1/2) h - n h) c(n h - Xbar)
        = Re sum_w alpha_w exp(i w (X - h/2)) D_a(w),

where ``a = floor(X / h)`` and ``D_a`` is the DFT of the kernel gradient
over the window of offsets seen from cell ``a``.  ``D_a`` depends only on
``beta`` and the grid, so it is cached per cell.
"""
from __future__ import annotations

import logging
import math

import numba as nb
import numpy as np

from .config import Discretization, PhysParams, mode_indices, step_generator
from .kernel import eval_kernel_grad
from .spectral import SpectralField, eval_field_shifted

__all__ = [
    "pairwise_drift",
    "compute_shift",
    "field_drift",
    "FieldDrift",
    "brownian_increments",
    "clamp_to_box",
    "particle_step",
]

logger = logging.getLogger(__name__)

_FOUR_PI = 4.0 * math.pi


@nb.njit(cache=True)
def _pair_increments(pos, beta, coef, r_min):
    n = pos.shape[0]
    inc = np.zeros((n, 3))
    skipped = 0
    for i in range(n):
        xi, yi, zi = pos[i, 0], pos[i, 1], pos[i, 2]
        ax = 0.0
        ay = 0.0
        az = 0.0
        for j in range(i + 1, n):
            dx = xi - pos[j, 0]
            dy = yi - pos[j, 1]
            dz = zi - pos[j, 2]
            r = math.sqrt(dx * dx + dy * dy + dz * dz)
            if r == 0.0 or r < r_min:
                skipped += 1
                continue
            br = beta * r
            g = coef * math.exp(-br) * (1.0 + br) / (_FOUR_PI * r * r * r)
            ax -= g * dx
            ay -= g * dy
            az -= g * dz
            inc[j, 0] += g * dx
            inc[j, 1] += g * dy
            inc[j, 2] += g * dz
        inc[i, 0] += ax
        inc[i, 1] += ay
        inc[i, 2] += az
    return inc, skipped


def pairwise_drift(
    positions: np.ndarray, phys: PhysParams, beta: float, dt: float, r_min: float = 0.0
) -> tuple[np.ndarray, int]:
    """Direct pair-interaction increments ``-(chi M0 dt / P) sum_q grad K(X_p - X_q)``.

    Each unordered pair is visited once and applied with opposite signs, so
    the increments sum to zero up to round-off.  Pairs closer than ``r_min``
    (or exactly coincident) are skipped.

    Returns
    -------
    increments : ndarray, shape (P, 3)
    skipped : int
        Number of skipped pairs.
    """
    pos = np.ascontiguousarray(positions, dtype=float)
    coef = phys.chi * phys.mass * dt / len(pos)
    inc, skipped = _pair_increments(pos, float(beta), float(coef), float(r_min))
    if skipped:
        logger.warning("skipped %d coincident particle pairs", skipped)
    return inc, int(skipped)


def compute_shift(x, disc: Discretization) -> np.ndarray:
    """Shift that moves ``x`` to the center of its grid cell.

    ``Xbar = h/2 + floor(x/h) h - x`` componentwise, ``h = L/H``.
    """
    h = disc.spacing
    x = np.asarray(x, dtype=float)
    return h / 2 + np.floor(x / h) * h - x


def _grid_axis(disc: Discretization) -> np.ndarray:
    H = disc.modes
    return (np.arange(H) - H // 2) * disc.spacing


def field_drift(x, field: SpectralField, phys: PhysParams, beta: float, disc: Discretization) -> np.ndarray:
    """Field part of the drift at one point, by direct shifted quadrature."""
    if phys.epsilon == 0:
        return np.zeros(3)
    x = np.asarray(x, dtype=float).reshape(3)
    xbar = compute_shift(x, disc)
    g = _grid_axis(disc)
    nodes = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1)
    grad = eval_kernel_grad((x + xbar) - nodes, beta)
    cvals = eval_field_shifted(field, xbar, disc)
    quad = np.einsum("ijkd,ijk->d", grad, cvals) * disc.spacing**3
    return -phys.epsilon * phys.chi * quad


@nb.njit(cache=True)
def _contract(u, slot, alpha, table, omega, nyq):
    n = u.shape[0]
    H = alpha.shape[0]
    out = np.zeros((n, 3))
    e0 = np.empty(H, dtype=np.complex128)
    e1 = np.empty(H, dtype=np.complex128)
    e2 = np.empty(H, dtype=np.complex128)
    for p in range(n):
        for k in range(H):
            p0 = omega[k] * u[p, 0]
            p1 = omega[k] * u[p, 1]
            p2 = omega[k] * u[p, 2]
            if k == nyq:
                e0[k] = math.cos(p0)
                e1[k] = math.cos(p1)
                e2[k] = math.cos(p2)
            else:
                e0[k] = complex(math.cos(p0), math.sin(p0))
                e1[k] = complex(math.cos(p1), math.sin(p1))
                e2[k] = complex(math.cos(p2), math.sin(p2))
        s = slot[p]
        acc0 = 0.0
        acc1 = 0.0
        acc2 = 0.0
        for i in range(H):
            for j in range(H):
                eij = e0[i] * e1[j]
                for k in range(H):
                    t = alpha[i, j, k] * eij * e2[k]
                    acc0 += (t * table[s, 0, i, j, k]).real
                    acc1 += (t * table[s, 1, i, j, k]).real
                    acc2 += (t * table[s, 2, i, j, k]).real
        out[p, 0] = acc0
        out[p, 1] = acc1
        out[p, 2] = acc2
    return out


class FieldDrift:
    """Batched field drift for one ``(beta, L, H)`` combination.

    The per-cell window transforms are cached; when the cache would exceed
    ``max_bytes`` it is cleared and rebuilt from the cells currently in use.
    """

    def __init__(self, beta: float, disc: Discretization, max_bytes: int = 512 * 2**20):
        H, h = disc.modes, disc.spacing
        self.beta = float(beta)
        self.modes = H
        self.spacing = h
        self.box_len = disc.box_len
        offsets = (np.arange(-H + 1, H + 1) + 0.5) * h
        pts = np.stack(np.meshgrid(offsets, offsets, offsets, indexing="ij"), axis=-1)
        self._grad = eval_kernel_grad(pts, self.beta)
        self._omega = 2 * np.pi / disc.box_len * mode_indices(H).astype(float)
        self._slot_bytes = 3 * H**3 * 16
        self._max_slots = max(1, int(max_bytes // self._slot_bytes))
        self._slots: dict[tuple[int, int, int], int] = {}
        self._table = np.empty((0, 3, H, H, H), dtype=np.complex128)

    def window_transform(self, cell) -> np.ndarray:
        """``D_a(w) = sum_{m in W_a} gradK((m + 1/2) h) exp(-i w m h)``, shape ``(3, H, H, H)``."""
        H = self.modes
        a = np.asarray(cell, dtype=np.int64)
        s = a + H // 2
        win = self._grad[s[0] : s[0] + H, s[1] : s[1] + H, s[2] : s[2] + H]
        start = (a - H // 2 + 1) % H
        win = np.roll(win, shift=tuple(int(v) for v in start), axis=(0, 1, 2))
        return np.moveaxis(np.fft.fftn(win, axes=(0, 1, 2)), -1, 0)

    def _ensure(self, cells: np.ndarray) -> np.ndarray:
        keys = [tuple(int(v) for v in c) for c in cells]
        missing = [k for k in keys if k not in self._slots]
        if len(self._slots) + len(missing) > self._max_slots:
            self._slots.clear()
            missing = keys
        if missing:
            need = len(self._slots) + len(missing)
            if need > self._table.shape[0]:
                cap = min(max(need, 2 * self._table.shape[0], 16), max(self._max_slots, need))
                grown = np.empty((cap,) + self._table.shape[1:], dtype=np.complex128)
                grown[: self._table.shape[0]] = self._table
                self._table = grown
            for key in missing:
                idx = len(self._slots)
                self._table[idx] = self.window_transform(key)
                self._slots[key] = idx
        return np.array([self._slots[k] for k in keys], dtype=np.int64)

    def quadrature(self, positions: np.ndarray, field: SpectralField) -> np.ndarray:
        """``sum_n gradK(...) c(...) h**3`` for every particle (no ``-eps chi`` factor)."""
        pos = np.asarray(positions, dtype=float)
        finite = np.all(np.isfinite(pos), axis=1)
        if not finite.all():
            # non-finite rows get a NaN drift so the divergence is reported upstream
            out = np.full(pos.shape, np.nan)
            if finite.any():
                out[finite] = self.quadrature(pos[finite], field)
            return out
        h = self.spacing
        cell = np.floor(pos / h).astype(np.int64)
        uniq, inverse = np.unique(cell, axis=0, return_inverse=True)
        slots = self._ensure(uniq)[inverse.reshape(-1)]
        u = np.ascontiguousarray(pos - h / 2)
        out = _contract(u, slots, np.ascontiguousarray(field.coeffs), self._table, self._omega, self.modes // 2)
        return out * h**3

    def __call__(self, positions: np.ndarray, field: SpectralField, phys: PhysParams) -> np.ndarray:
        if phys.epsilon == 0:
            return np.zeros((len(positions), 3))
        return -phys.epsilon * phys.chi * self.quadrature(positions, field)


def brownian_increments(seed: int, step: int, mu: float, dt: float, particles: int) -> np.ndarray:
    """``sqrt(2 mu dt) N`` for every particle, drawn from the step-``step`` stream."""
    if mu == 0:
        return np.zeros((particles, 3))
    rng = step_generator(seed, step)
    return math.sqrt(2.0 * mu * dt) * rng.standard_normal((particles, 3))


def clamp_to_box(positions: np.ndarray, box_len: float) -> np.ndarray:
    half = box_len / 2
    return np.clip(positions, -half, half)


def particle_step(
    positions: np.ndarray,
    field: SpectralField,
    phys: PhysParams,
    disc: Discretization,
    beta: float,
    step: int,
    drift_op: FieldDrift | None = None,
    r_min: float = 0.0,
) -> tuple[np.ndarray, int]:
    """Advance the ensemble by one step and clamp to the box.

    ``field`` is the lagged concentration the scheme prescribes for this step
    (see :mod:`sipf.driver`).  Returns the new positions and the number of
    skipped particle pairs.
    """
    pos = np.asarray(positions, dtype=float)
    pair, skipped = pairwise_drift(pos, phys, beta, disc.dt, r_min)
    if drift_op is None:
        drift_op = FieldDrift(beta, disc)
    fdrift = drift_op(pos, field, phys)
    noise = brownian_increments(disc.seed, step, phys.mu, disc.dt, len(pos))
    return clamp_to_box(pos + pair + fdrift + noise, disc.box_len), skipped
