"""Screened-Coulomb (Yukawa) Green's function of ``Laplacian - beta**2`` in 3D.

    K(x)       = -exp(-beta r) / (4 pi r),            r = |x|
    grad K(x)  =  exp(-beta r) (1 + beta r) x / (4 pi r**3)
    F[K](w)    = -1 / (|w|**2 + beta**2)

The gradient points away from the origin; a particle pushed along
``-grad K(X_p - X_q)`` therefore moves toward ``X_q``.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

__all__ = [
    "SingularPointError",
    "eval_kernel",
    "eval_kernel_grad",
    "kernel_symbol",
    "grad_radial_factor",
]

_FOUR_PI = 4.0 * math.pi


class SingularPointError(ValueError):
    """The kernel was evaluated at the origin, where it is singular."""


def _radius(x: np.ndarray) -> np.ndarray:
    r = np.sqrt(np.sum(x * x, axis=-1))
    if np.any(r == 0.0):
        raise SingularPointError("kernel evaluated at |x| = 0")
    return r


def eval_kernel(x, beta: float):
    """Kernel value at ``x`` (shape ``(..., 3)``); returns a scalar or array of shape ``(...)``."""
    x = np.asarray(x, dtype=float)
    r = _radius(x)
    out = -np.exp(-beta * r) / (_FOUR_PI * r)
    return float(out) if out.ndim == 0 else out


def eval_kernel_grad(x, beta: float) -> np.ndarray:
    """Gradient of the kernel at ``x`` (shape ``(..., 3)``)."""
    x = np.asarray(x, dtype=float)
    r = _radius(x)
    return (np.exp(-beta * r) * (1.0 + beta * r) / (_FOUR_PI * r**3))[..., None] * x


def kernel_symbol(omega_sq, beta: float):
    """Fourier symbol ``-1 / (|omega|**2 + beta**2)``."""
    out = -1.0 / (np.asarray(omega_sq, dtype=float) + beta * beta)
    return float(out) if out.ndim == 0 else out


@nb.njit(cache=True, fastmath=False)
def grad_radial_factor(r: float, beta: float) -> float:
    """Scalar ``g(r)`` with ``grad K(x) = g(|x|) * x``; used by compiled loops."""
    return math.exp(-beta * r) * (1.0 + beta * r) / (_FOUR_PI * r * r * r)
