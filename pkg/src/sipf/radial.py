"""Radially symmetric finite-difference reference solver.

Solves

    rho_t   = r^-2 (r^2 (mu rho_r - chi rho c_r))_r
    eps c_t = r^-2 (r^2 c_r)_r - k^2 c + rho

on ``[0, r_max]`` with zero-flux (Neumann) ends, in conservative form on the
nodes ``r_i = i h``.  Node ``i`` owns the shell between its two neighbouring
half-nodes; at ``r = 0`` this reproduces the symmetry limit
``c_rr + 2 c_r / r -> 3 c_rr``.

Each step is semi-implicit backward Euler:

1. ``c`` is solved implicitly with the current ``rho`` as source;
2. ``rho`` is solved implicitly (diffusion and upwinded drift) with the
   drift velocity ``chi c_r`` taken from the new ``c``.

Both systems are tridiagonal M-matrices, so ``rho`` stays non-negative and
the shell-weighted mass ``4 pi sum V_i rho_i`` is conserved to round-off.

A run is flagged unstable when values become non-finite, when ``sup|c|``
exceeds ``1e6`` times its scale after the first ten steps, or when the cell
Peclet number ``chi |c_{i+1} - c_i| / mu`` exceeds 2.  Beyond that point
the aggregate is narrower than the mesh and a centered scheme would lose
its maximum principle.
"""
from __future__ import annotations

import csv
import math
from functools import cached_property
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

from .config import PhysParams

__all__ = [
    "RadialGrid",
    "RadialState",
    "FdmResult",
    "solve_tridiagonal",
    "assemble_c_system",
    "assemble_rho_system",
    "tridiagonal_residual",
    "fdm_step",
    "uniform_ball_state",
    "radial_mass",
    "fdm_run",
    "write_fdm_series_csv",
    "write_fdm_profile_csv",
    "PECLET_LIMIT",
    "GROWTH_LIMIT",
]

PECLET_LIMIT = 2.0
GROWTH_LIMIT = 1e6
_SCALE_STEPS = 10


@dataclass(frozen=True)
class RadialGrid:
    r_max: float = 20.0
    intervals: int = 200_000

    def __post_init__(self):
        if self.intervals < 10:
            raise ValueError("need at least 10 intervals")
        if not self.r_max > 0:
            raise ValueError("r_max must be positive")

    @property
    def h(self) -> float:
        return self.r_max / self.intervals

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.arange(self.intervals + 1) * self.h

    @cached_property
    def face_areas(self) -> np.ndarray:
        """``r_{i+1/2}**2`` for the ``N`` interior faces."""
        return ((np.arange(self.intervals) + 0.5) * self.h) ** 2

    @cached_property
    def volumes(self) -> np.ndarray:
        """Shell volumes divided by ``4 pi``: ``(r_+^3 - r_-^3) / 3``."""
        h = self.h
        lo = np.clip((np.arange(self.intervals + 1) - 0.5) * h, 0.0, None)
        hi = np.clip((np.arange(self.intervals + 1) + 0.5) * h, None, self.r_max)
        return (hi**3 - lo**3) / 3.0

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.intervals + 1, self.h)
        w[0] = w[-1] = self.h / 2
        return w


@dataclass
class RadialState:
    rho: np.ndarray
    c: np.ndarray
    time: float = 0.0


@dataclass
class FdmResult:
    times: np.ndarray
    sup_c: np.ndarray
    mass: np.ndarray
    final: RadialState
    stable: bool
    reason: str = ""
    sup_c_overall: float = 0.0
    steps: int = 0
    params: dict = field(default_factory=dict)


@nb.njit(cache=True)
def solve_tridiagonal(lower, diag, upper, rhs):
    """Thomas algorithm; ``lower[0]`` and ``upper[-1]`` are ignored."""
    n = diag.shape[0]
    cp = np.empty(n)
    dp = np.empty(n)
    cp[0] = upper[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        m = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / m if i < n - 1 else 0.0
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / m
    x = np.empty(n)
    x[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


def tridiagonal_residual(lower, diag, upper, rhs, x) -> float:
    """``|Ax - b|_inf / (|A|_inf |x|_inf + |b|_inf)``."""
    ax = diag * x
    ax[1:] += lower[1:] * x[:-1]
    ax[:-1] += upper[:-1] * x[1:]
    norm_a = np.max(np.abs(diag) + np.abs(lower) + np.abs(upper))
    denom = norm_a * np.max(np.abs(x)) + np.max(np.abs(rhs))
    return float(np.max(np.abs(ax - rhs)) / denom) if denom > 0 else 0.0


def _face_coupling(grid: RadialGrid) -> tuple[np.ndarray, np.ndarray]:
    """Per-node coupling to the right and left neighbours: ``A_face / (h V_i)``."""
    vol = grid.volumes
    area = grid.face_areas
    right = np.zeros(grid.intervals + 1)
    left = np.zeros(grid.intervals + 1)
    right[:-1] = area / (grid.h * vol[:-1])
    left[1:] = area / (grid.h * vol[1:])
    return left, right


def assemble_c_system(state: RadialState, phys: PhysParams, grid: RadialGrid, dt: float):
    left, right = _face_coupling(grid)
    rate = phys.epsilon / dt
    diag = rate + phys.k**2 + left + right
    return -left, diag, -right, rate * state.c + state.rho


def assemble_rho_system(state: RadialState, c_new: np.ndarray, phys: PhysParams, grid: RadialGrid, dt: float):
    h = grid.h
    vol = grid.volumes
    area = grid.face_areas
    v = phys.chi * np.diff(c_new) / h
    vp = np.maximum(v, 0.0)
    vm = np.minimum(v, 0.0)
    d = phys.mu / h
    n = grid.intervals + 1
    diag = vol / dt
    lower = np.zeros(n)
    upper = np.zeros(n)
    # face i+1/2 couples node i (left) and node i+1 (right)
    diag[:-1] += area * (d + vp)
    upper[:-1] = -area * (d - vm)
    diag[1:] += area * (d - vm)
    lower[1:] = -area * (d + vp)
    return lower, diag, upper, vol / dt * state.rho


@nb.njit(cache=True)
def _fused_step(rho, c, vol, area, h, mu, chi, rate, k2, dt):
    n = rho.shape[0]
    lo = np.zeros(n)
    di = np.empty(n)
    up = np.zeros(n)
    rhs = np.empty(n)
    for i in range(n):
        di[i] = rate + k2
        rhs[i] = rate * c[i] + rho[i]
    for f in range(n - 1):
        a = area[f] / h
        di[f] += a / vol[f]
        up[f] = -a / vol[f]
        di[f + 1] += a / vol[f + 1]
        lo[f + 1] = -a / vol[f + 1]
    c_new = solve_tridiagonal(lo, di, up, rhs)
    d = mu / h
    for i in range(n):
        di[i] = vol[i] / dt
        rhs[i] = vol[i] / dt * rho[i]
        lo[i] = 0.0
        up[i] = 0.0
    for f in range(n - 1):
        v = chi * (c_new[f + 1] - c_new[f]) / h
        vp = max(v, 0.0)
        vm = min(v, 0.0)
        di[f] += area[f] * (d + vp)
        up[f] = -area[f] * (d - vm)
        di[f + 1] += area[f] * (d - vm)
        lo[f + 1] = -area[f] * (d + vp)
    rho_new = solve_tridiagonal(lo, di, up, rhs)
    return rho_new, c_new


def fdm_step(state: RadialState, phys: PhysParams, grid: RadialGrid, dt: float) -> RadialState:
    """One semi-implicit backward-Euler step.

    Same systems as :func:`assemble_c_system` and :func:`assemble_rho_system`,
    assembled and solved in one compiled pass.
    """
    rho, c = _fused_step(
        np.asarray(state.rho, dtype=float),
        np.asarray(state.c, dtype=float),
        grid.volumes,
        grid.face_areas,
        grid.h,
        phys.mu,
        phys.chi,
        phys.epsilon / dt,
        phys.k**2,
        dt,
    )
    return RadialState(rho=rho, c=c, time=state.time + dt)


def uniform_ball_state(mass: float, radius: float, grid: RadialGrid) -> RadialState:
    """Uniform density on ``[0, radius]`` with ``4 pi sum V_i rho_i = mass`` exactly; ``c = 0``."""
    h = grid.h
    lo = np.clip((np.arange(grid.intervals + 1) - 0.5) * h, 0.0, None)
    hi = np.clip((np.arange(grid.intervals + 1) + 0.5) * h, None, grid.r_max)
    inside = (np.clip(hi, None, radius) ** 3 - np.clip(lo, None, radius) ** 3) / 3.0
    inside = np.clip(inside, 0.0, None)
    density = 3.0 * mass / (4.0 * math.pi * radius**3)
    rho = density * inside / grid.volumes
    rho *= mass / (4.0 * math.pi * np.sum(grid.volumes * rho))
    return RadialState(rho=rho, c=np.zeros(grid.intervals + 1))


def radial_mass(rho: np.ndarray, grid: RadialGrid, weights: str = "shell") -> float:
    """``4 pi int rho r^2 dr`` with shell volumes or trapezoid weights."""
    if weights == "shell":
        return float(4.0 * math.pi * np.sum(grid.volumes * rho))
    if weights == "trapezoid":
        return float(4.0 * math.pi * np.sum(grid.trapezoid_weights * rho * grid.nodes**2))
    raise ValueError(f"unknown weights {weights!r}")


def fdm_run(
    phys: PhysParams,
    mass: float,
    ic_radius: float,
    grid: RadialGrid,
    dt: float,
    horizon: float,
    peclet_limit: float | None = PECLET_LIMIT,
) -> FdmResult:
    """Run from a uniform ball to ``horizon`` or the first instability.

    Returns the ``sup_r |c|`` series, the shell mass series, the final state
    and the stability verdict.  ``sup_c_overall`` is ``sup_{t, r} |c|`` over the
    computed steps.
    """
    n_steps = int(round(horizon / dt))
    state = uniform_ball_state(mass, ic_radius, grid)
    times = [0.0]
    sup_c = [float(np.max(np.abs(state.c)))]
    masses = [radial_mass(state.rho, grid)]
    stable, reason = True, ""
    scale = None
    step = 0
    for step in range(1, n_steps + 1):
        state = fdm_step(state, phys, grid, dt)
        state.time = step * dt
        if not (np.all(np.isfinite(state.c)) and np.all(np.isfinite(state.rho))):
            stable, reason = False, f"non-finite values at step {step}"
            break
        s = float(np.max(np.abs(state.c)))
        times.append(state.time)
        sup_c.append(s)
        masses.append(radial_mass(state.rho, grid))
        if step == _SCALE_STEPS:
            scale = max(sup_c)
        if scale is not None and scale > 0 and s > GROWTH_LIMIT * scale:
            stable, reason = False, f"sup|c| grew beyond {GROWTH_LIMIT:g} x initial scale at step {step}"
            break
        if peclet_limit is not None:
            pe = phys.chi * float(np.max(np.abs(np.diff(state.c)))) / phys.mu
            if pe > peclet_limit:
                stable, reason = False, f"cell Peclet number {pe:.3g} > {peclet_limit:g} at step {step} (t={state.time:.6g})"
                break
    return FdmResult(
        times=np.asarray(times),
        sup_c=np.asarray(sup_c),
        mass=np.asarray(masses),
        final=state,
        stable=stable,
        reason=reason,
        sup_c_overall=float(np.max(sup_c)),
        steps=step,
        params={"mass": mass, "ic_radius": ic_radius, "r_max": grid.r_max, "intervals": grid.intervals, "dt": dt, "horizon": horizon},
    )


def write_fdm_series_csv(path: str | Path, result: FdmResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "sup_c", "mass"])
        for row in zip(result.times, result.sup_c, result.mass):
            w.writerow([repr(float(v)) for v in row])


def write_fdm_profile_csv(path: str | Path, result: FdmResult, grid: RadialGrid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "rho", "c"])
        for row in zip(grid.nodes, result.final.rho, result.final.c):
            w.writerow([repr(float(v)) for v in row])
