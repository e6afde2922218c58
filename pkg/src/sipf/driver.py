"""Time stepping of the coupled particle/field recursion.

Iteration ``n`` (``n = 1 .. n_T``) performs

    X_n = particle_step(X_{n-1}, c_{n-2})
    c_n = field_step(c_{n-1}, deposit(X_n))

with ``c_{-1} := c_0``.  Because ``c_{n-1}`` was itself built from
``c_{n-2}`` and ``rho_{n-1}``, the particles move with the gradient of
``c_{n-1}`` evaluated from exactly the data it was built from.
"""
from __future__ import annotations

import csv
import logging
import math
import time as _time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .config import Config, InitialCondition, sampling_generator
from .particles import FieldDrift, particle_step
from .spectral import (
    SpectralField,
    deposit_particles,
    field_max_abs,
    field_step,
    read_field_csv,
    total_concentration,
    write_field_csv,
)

__all__ = [
    "InitialCondition",
    "DiagnosticsSeries",
    "SimulationState",
    "RunResult",
    "StaggeringError",
    "sample_ball",
    "sample_initial",
    "initial_field",
    "run",
    "SnapshotWriter",
    "write_diagnostics_csv",
    "read_diagnostics_csv",
]

logger = logging.getLogger(__name__)

Callback = Callable[["SimulationState"], None]


class StaggeringError(RuntimeError):
    """The particle update was about to use a field of the wrong age."""


@dataclass
class DiagnosticsSeries:
    """Per-step diagnostics of one run, including the initial state at ``t = 0``."""

    time: list[float] = field(default_factory=list)
    c_inf: list[float] = field(default_factory=list)
    c0: list[float] = field(default_factory=list)
    variance: list[float] = field(default_factory=list)
    modes: int = 0
    particles: int = 0
    dt: float = 0.0
    seed: int = 0
    status: str = "completed"
    diverged_step: int | None = None

    def append(self, t: float, c_inf: float, c0: float, variance: float) -> None:
        if self.time and not t > self.time[-1]:
            raise ValueError(f"time stamps must increase strictly ({t} after {self.time[-1]})")
        self.time.append(float(t))
        self.c_inf.append(float(c_inf))
        self.c0.append(float(c0))
        self.variance.append(float(variance))

    @property
    def diverged(self) -> bool:
        return self.status != "completed"

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: np.asarray(getattr(self, k)) for k in ("time", "c_inf", "c0", "variance")}


@dataclass
class SimulationState:
    """Mutable state owned by :func:`run`; callbacks must treat it as read-only.

    Holds ``X_n`` together with ``c_n`` (``field``) and ``c_{n-1}``
    (``field_lag``), which is what the next particle update consumes.
    """

    step: int
    time: float
    positions: np.ndarray
    field: SpectralField
    field_lag: SpectralField
    field_step_index: int = 0
    lag_step_index: int = -1
    skipped_pairs: int = 0


@dataclass
class RunResult:
    series: DiagnosticsSeries
    state: SimulationState
    wall_time: dict[str, float] = field(default_factory=dict)

    @property
    def status(self) -> str:
        return self.series.status


def sample_ball(rng: np.random.Generator, n: int, center, radius: float) -> np.ndarray:
    """``n`` uniform samples in a ball (direction from a normal, radius ``U**(1/3)``)."""
    direction = rng.standard_normal((n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / 3.0)
    return np.asarray(center, dtype=float) + direction * r[:, None]


def initial_field(ic: InitialCondition, modes: int, box_len: float) -> SpectralField:
    if ic.c0 == "zero":
        return SpectralField.zeros(modes, box_len)
    field0, meta = read_field_csv(ic.c0)
    if meta["H"] != modes or not math.isclose(meta["L"], box_len):
        raise ValueError(f"c0 file {ic.c0} has H={meta['H']}, L={meta['L']}; run uses H={modes}, L={box_len}")
    return field0


def sample_initial(cfg: Config) -> tuple[np.ndarray, SpectralField]:
    """Draw the initial particle ensemble and set up ``c_0``.

    Clusters receive ``P // K`` particles each, the remainder going to the
    first clusters; with equal particle weights the mass split is equal up
    to that remainder.
    """
    ic, disc = cfg.init, cfg.disc
    centers = ic.resolved_centers()
    n_clusters = len(centers)
    if disc.particles < n_clusters:
        raise ValueError(f"{disc.particles} particles cannot populate {n_clusters} clusters")
    half = disc.box_len / 2
    for c in centers:
        if any(abs(x) + ic.radius > half for x in c):
            raise ValueError(f"ball at {c} with radius {ic.radius} leaves the box")
    rng = sampling_generator(disc.seed)
    base, extra = divmod(disc.particles, n_clusters)
    chunks = [sample_ball(rng, base + (i < extra), c, ic.radius) for i, c in enumerate(centers)]
    return np.concatenate(chunks), initial_field(ic, disc.modes, disc.box_len)


def _variance_trace(pos: np.ndarray) -> float:
    return float(np.sum(np.var(pos, axis=0)))


def run(
    cfg: Config,
    callbacks: Iterable[Callback] = (),
    *,
    initial: tuple[np.ndarray, SpectralField] | None = None,
    steps: int | None = None,
) -> RunResult:
    """Run the particle-field recursion for ``cfg.disc.n_steps`` steps.

    Parameters
    ----------
    cfg:
        Validated configuration.
    callbacks:
        Called with the state after every step (and once for step 0).
    initial:
        Optional ``(positions, c0)`` overriding :func:`sample_initial`.
    steps:
        Optional step count overriding the horizon.

    A non-finite position or coefficient stops the run with status
    ``"diverged"``; ``series.diverged_step`` records where.
    """
    phys, disc = cfg.phys, cfg.disc
    callbacks = list(callbacks)
    n_steps = disc.n_steps if steps is None else int(steps)
    beta = cfg.beta
    wall = {"init": 0.0, "particles": 0.0, "field": 0.0, "diagnostics": 0.0}

    t0 = _time.perf_counter()
    positions, c0 = sample_initial(cfg) if initial is None else initial
    positions = np.array(positions, dtype=float)
    drift_op = FieldDrift(beta, disc)
    state = SimulationState(step=0, time=0.0, positions=positions, field=c0, field_lag=c0)
    series = DiagnosticsSeries(modes=disc.modes, particles=len(positions), dt=disc.dt, seed=disc.seed)
    wall["init"] += _time.perf_counter() - t0

    def record() -> None:
        ts = _time.perf_counter()
        series.append(state.time, field_max_abs(state.field), total_concentration(state.field), _variance_trace(state.positions))
        for cb in callbacks:
            cb(state)
        wall["diagnostics"] += _time.perf_counter() - ts

    record()
    for n in range(1, n_steps + 1):
        # the particle update at step n must see c_{n-2}
        if state.lag_step_index != n - 2 and not (n == 1 and state.lag_step_index == -1):
            raise StaggeringError(f"step {n} would use c_{state.lag_step_index}")
        ts = _time.perf_counter()
        new_pos, skipped = particle_step(state.positions, state.field_lag, phys, disc, beta, n, drift_op, cfg.r_min)
        wall["particles"] += _time.perf_counter() - ts

        ts = _time.perf_counter()
        new_field = field_step(state.field, deposit_particles(new_pos, phys.mass, disc), phys, disc)
        wall["field"] += _time.perf_counter() - ts

        state.field_lag, state.lag_step_index = state.field, state.field_step_index
        state.field, state.field_step_index = new_field, n
        state.positions = new_pos
        state.step, state.time = n, n * disc.dt
        state.skipped_pairs += skipped

        if not (np.all(np.isfinite(new_pos)) and np.all(np.isfinite(new_field.coeffs))):
            series.status = "diverged"
            series.diverged_step = n
            logger.warning("numerical divergence at step %d (t=%g)", n, state.time)
            break
        record()
    return RunResult(series=series, state=state, wall_time=wall)


class SnapshotWriter:
    """Callback writing particle and/or field snapshots every ``every`` steps."""

    def __init__(self, out_dir: str | Path, every: int = 100, particles: bool = True, field: bool = True):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.every = max(1, int(every))
        self.particles = particles
        self.field = field
        self.written: list[Path] = []

    def __call__(self, state: SimulationState) -> None:
        if state.step % self.every:
            return
        if self.particles:
            path = self.out_dir / f"particles_{state.step:07d}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["step", "time", "particle_id", "x", "y", "z"])
                for i, (x, y, z) in enumerate(state.positions):
                    w.writerow([state.step, repr(state.time), i, repr(float(x)), repr(float(y)), repr(float(z))])
            self.written.append(path)
        if self.field:
            path = self.out_dir / f"field_{state.step:07d}.csv"
            write_field_csv(path, state.field, state.step, state.time)
            self.written.append(path)


def write_diagnostics_csv(path: str | Path, series: DiagnosticsSeries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "c_inf", "c0", "variance"])
        for row in zip(series.time, series.c_inf, series.c0, series.variance):
            w.writerow([repr(float(v)) for v in row])


def read_diagnostics_csv(path: str | Path) -> DiagnosticsSeries:
    series = DiagnosticsSeries()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            series.append(float(row["time"]), float(row["c_inf"]), float(row["c0"]), float(row["variance"]))
    return series


def read_particle_snapshots(paths: Sequence[str | Path]) -> tuple[np.ndarray, list[np.ndarray]]:
    """Load particle snapshot CSVs; returns times and a list of ``(P, 3)`` arrays."""
    times, frames = [], []
    for p in paths:
        data = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
        times.append(data[0, 1])
        frames.append(data[:, 3:6])
    return np.asarray(times), frames
