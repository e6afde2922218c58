"""Full-history drift used as a small-scale test oracle.

With ``eps c_t = Lap c - k^2 c + rho`` and ``c(., 0) = 0``,

    c(x, t) = (1/eps) int_0^t exp(-k^2 (t-s)/eps) (G_{t-s} * rho(., s))(x) ds,

where ``G_tau`` is the heat kernel with diffusivity ``1/eps``.  The density
is the empirical measure of the stored positions, held constant on each time
step.  Cost grows as ``O(n P^2)`` per step, so this is only meant for a
handful of particles and steps.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.integrate import quad

from .config import PhysParams

__all__ = ["HistoryScaleError", "history_grad_c", "history_oracle_step", "MAX_PARTICLES", "MAX_STEPS"]

MAX_PARTICLES = 20
MAX_STEPS = 50


class HistoryScaleError(ValueError):
    """The oracle was asked for more particles or steps than it supports."""


def _segment_weight(r: float, tau_lo: float, tau_hi: float, eps: float, k: float) -> float:
    """``(1/eps) int exp(-k^2 tau/eps) (eps/(2 tau)) (4 pi tau/eps)^{-3/2} exp(-eps r^2/(4 tau)) dtau``.

    Multiplying by ``-(x - y)`` gives the segment's contribution to ``grad c``.
    """

    def integrand(tau: float) -> float:
        if tau <= 0.0:
            return 0.0
        return (
            math.exp(-k * k * tau / eps - eps * r * r / (4.0 * tau))
            / (2.0 * tau)
            * (4.0 * math.pi * tau / eps) ** -1.5
        )

    # the integrand peaks near tau = eps r^2 / 10
    peak = eps * r * r / 10.0
    pts = [p for p in (peak,) if tau_lo < p < tau_hi]
    val, _ = quad(integrand, tau_lo, tau_hi, points=pts or None, limit=200, epsabs=0.0, epsrel=1e-10)
    return val


def history_grad_c(x, history: Sequence[np.ndarray], phys: PhysParams, dt: float, exclude: int | None = None) -> np.ndarray:
    """``grad c(x, t_n)`` from the stored ensembles ``X_0 .. X_{n-1}``.

    ``history[j]`` is taken as the density on ``[t_j, t_{j+1})``.  Particle
    ``exclude`` (if given) is left out of every segment.
    """
    if phys.epsilon <= 0:
        raise ValueError("the history representation needs eps > 0")
    x = np.asarray(x, dtype=float)
    n = len(history)
    out = np.zeros(3)
    for j, frame in enumerate(history):
        frame = np.asarray(frame, dtype=float)
        weight = phys.mass / len(frame)
        tau_lo, tau_hi = (n - 1 - j) * dt, (n - j) * dt
        for q, y in enumerate(frame):
            if q == exclude:
                continue
            d = x - y
            r = float(np.linalg.norm(d))
            if r == 0.0:
                continue
            out -= weight * _segment_weight(r, tau_lo, tau_hi, phys.epsilon, phys.k) * d
    return out


def history_oracle_step(history: Sequence[np.ndarray], phys: PhysParams, dt: float) -> np.ndarray:
    """Drift increments ``chi dt grad c(X^p_{n-1}, t_n)`` for every particle.

    ``history`` holds ``X_0 .. X_{n-1}``; the own path of each particle is
    excluded, as in the interacting-particle form of the drift.
    """
    n = len(history)
    if n < 1:
        raise ValueError("history must hold at least one ensemble")
    current = np.asarray(history[-1], dtype=float)
    P = len(current)
    if P > MAX_PARTICLES or n > MAX_STEPS:
        raise HistoryScaleError(f"oracle limited to P <= {MAX_PARTICLES}, n <= {MAX_STEPS} (got P={P}, n={n})")
    return np.array([phys.chi * dt * history_grad_c(current[p], history, phys, dt, exclude=p) for p in range(P)])
