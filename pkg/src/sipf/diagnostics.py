"""Blow-up detection, error metrics, convergence studies and mass scans.

Everything here consumes :class:`~sipf.driver.DiagnosticsSeries` or
:class:`~sipf.spectral.SpectralField` objects; member runs of scans and
studies go through :func:`map_tasks`, which runs them sequentially or in a
process pool and always returns results in input order.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import Config, PhysParams, omega_squared
from .driver import DiagnosticsSeries, RunResult, run
from .radial import RadialGrid, fdm_run
from .spectral import SpectralField, restrict_modes

__all__ = [
    "UndefinedRatioError",
    "NoBracketError",
    "DivergedRunError",
    "map_tasks",
    "resolve_jobs",
    "RatioResult",
    "ratio_series",
    "ratio_diagnostic",
    "BlowupVerdict",
    "classify_blowup",
    "delta_limit_ratio",
    "calibrated_threshold",
    "ScalingResult",
    "scaling_fits",
    "cinf_vs_H_scan",
    "c0_ground_truth",
    "c0_error",
    "field_l2_error",
    "ConvergenceResult",
    "loglog_slope",
    "convergence_study",
    "MassBracket",
    "critical_mass_scan",
    "SipfBlowup",
    "FdmInstability",
    "VarianceFit",
    "variance_fit",
    "write_ratio_csv",
    "write_study_report",
]

logger = logging.getLogger(__name__)

_RATIO_FLOOR = 1e-12


class UndefinedRatioError(ZeroDivisionError):
    """The coarse-resolution ``||c||_inf`` vanished at some step."""


class NoBracketError(ValueError):
    """A mass scan did not observe both behaviours."""


class DivergedRunError(RuntimeError):
    """A study member diverged, so its error is meaningless."""


# ---------------------------------------------------------------- dispatch


def resolve_jobs(jobs: int | None) -> int:
    """Worker count: ``jobs`` capped by ``SIPF_THREADS`` and the CPU count."""
    cap = os.environ.get("SIPF_THREADS")
    n = int(jobs) if jobs else 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, min(n, os.cpu_count() or 1))


def map_tasks(fn: Callable, items: Sequence, jobs: int | None = 1) -> list:
    """``[fn(x) for x in items]``, optionally in a process pool (order kept)."""
    items = list(items)
    n = resolve_jobs(jobs)
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))


def _run_series(cfg: Config) -> DiagnosticsSeries:
    return run(cfg).series


def _run_full(cfg: Config) -> RunResult:
    return run(cfg)


def _with_disc(cfg: Config, **changes) -> Config:
    return dataclasses.replace(cfg, disc=dataclasses.replace(cfg.disc, **changes))


def _with_mass(cfg: Config, mass: float) -> Config:
    return dataclasses.replace(cfg, phys=dataclasses.replace(cfg.phys, mass=float(mass)))


# ---------------------------------------------------------------- ratio


@dataclass
class RatioResult:
    times: np.ndarray
    ratio: np.ndarray
    hi: DiagnosticsSeries
    lo: DiagnosticsSeries

    @property
    def diverged(self) -> bool:
        return self.hi.diverged or self.lo.diverged


def ratio_series(hi: DiagnosticsSeries, lo: DiagnosticsSeries, n_steps: int | None = None, dt: float | None = None):
    """Pointwise ``c_inf(hi) / c_inf(lo)`` for steps ``1 .. n_steps``.

    The initial datum (step 0) is excluded.  Once either run has diverged
    the ratio is ``+inf`` up to ``n_steps``.

    Raises
    ------
    UndefinedRatioError
        If the denominator drops below ``1e-12`` at a step where both runs are
        alive.
    """
    dt = dt if dt is not None else (hi.dt or lo.dt)
    a = np.asarray(hi.c_inf[1:], dtype=float)
    b = np.asarray(lo.c_inf[1:], dtype=float)
    alive = min(len(a), len(b))
    if n_steps is None:
        n_steps = max(len(a), len(b)) + (1 if (hi.diverged or lo.diverged) else 0)
    ratio = np.full(n_steps, np.inf)
    small = np.abs(b[:alive]) < _RATIO_FLOOR
    if np.any(small):
        step = int(np.argmax(small)) + 1
        raise UndefinedRatioError(f"coarse-resolution max |c| is below {_RATIO_FLOOR:g} at step {step}")
    ratio[:alive] = a[:alive] / b[:alive]
    if not (hi.diverged or lo.diverged):
        ratio = ratio[:alive]
    times = dt * np.arange(1, len(ratio) + 1)
    return times, ratio


def ratio_diagnostic(cfg: Config, H_hi: int, H_lo: int, jobs: int | None = 1) -> RatioResult:
    """Run two twins differing only in ``H`` and return their ``||c||_inf`` ratio.

    Both twins share the seed, so they draw the same initial ensemble and the
    same Brownian increments.
    """
    if H_hi < H_lo:
        raise ValueError("H_hi must not be smaller than H_lo")
    cfg_hi = _with_disc(cfg, modes=int(H_hi))
    if H_hi == H_lo:
        hi = _run_series(cfg_hi)
        lo = hi
    else:
        hi, lo = map_tasks(_run_series, [cfg_hi, _with_disc(cfg, modes=int(H_lo))], jobs)
    times, ratio = ratio_series(hi, lo, n_steps=cfg.disc.n_steps, dt=cfg.disc.dt)
    return RatioResult(times=times, ratio=ratio, hi=hi, lo=lo)


@dataclass(frozen=True)
class BlowupVerdict:
    blowup: bool
    onset: float | None = None


def classify_blowup(times, ratio, threshold: float = 1.5, sustain: int = 10) -> BlowupVerdict:
    """Blow-up iff ``ratio > threshold`` for ``sustain`` consecutive steps.

    A non-finite ratio (a diverged run) is a blow-up at its first occurrence
    regardless of ``sustain``.  The onset is the first time of the qualifying
    stretch.
    """
    times = np.asarray(times, dtype=float)
    ratio = np.asarray(ratio, dtype=float)
    bad = ~np.isfinite(ratio)
    first_bad = int(np.argmax(bad)) if bad.any() else len(ratio)
    run_len = 0
    for i in range(first_bad):
        if ratio[i] > threshold:
            run_len += 1
            if run_len >= sustain:
                return BlowupVerdict(True, float(times[i - sustain + 1]))
        else:
            run_len = 0
    if bad.any():
        start = first_bad - run_len
        return BlowupVerdict(True, float(times[start]))
    return BlowupVerdict(False, None)


def _point_peak(H: int, box_len: float, k: float) -> float:
    return float(np.sum(1.0 / (box_len**3 * (omega_squared(H, box_len) + k * k))))


def delta_limit_ratio(phys: PhysParams, box_len: float, H_hi: int, H_lo: int) -> float:
    """Resolution ratio of a fully collapsed (point) aggregate.

    A point mass at a grid node has the steady spectral peak
    ``M0 sum_w 1 / (L^3 (|w|^2 + k^2))``; the ratio of that peak between two
    mode counts is the largest value the diagnostic can approach.
    """
    return _point_peak(H_hi, box_len, phys.k) / _point_peak(H_lo, box_len, phys.k)


def calibrated_threshold(phys: PhysParams, box_len: float, H_hi: int, H_lo: int, fraction: float = 0.5) -> float:
    """``1 + fraction (R_delta - 1)``: a fixed share of the way from a smooth field to a point mass."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    return 1.0 + fraction * (delta_limit_ratio(phys, box_len, H_hi, H_lo) - 1.0)


# ---------------------------------------------------------------- scaling


@dataclass
class ScalingResult:
    modes: np.ndarray
    cinf: np.ndarray
    r2_log: float
    r2_lin: float
    slope_lin: float
    slope_log: float

    @property
    def preferred(self) -> str:
        return "linear" if self.r2_lin > self.r2_log else "log"


def _r2(x, y) -> tuple[float, float]:
    a, b = np.polyfit(x, y, 1)
    resid = y - (a * x + b)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return (1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0), float(a)


def scaling_fits(modes, cinf) -> ScalingResult:
    """R^2 of ``a ln H + b`` and ``a H + b`` fits to ``sup_t ||c||_inf``."""
    H = np.asarray(modes, dtype=float)
    y = np.asarray(cinf, dtype=float)
    if len(H) < 3:
        raise ValueError("need at least three values of H")
    r2_log, s_log = _r2(np.log(H), y)
    r2_lin, s_lin = _r2(H, y)
    return ScalingResult(H, y, r2_log, r2_lin, s_lin, s_log)


def cinf_vs_H_scan(cfg: Config, modes: Sequence[int], jobs: int | None = 1) -> ScalingResult:
    """``sup_t ||c||_inf`` for each ``H`` and the log/linear fit qualities."""
    series = map_tasks(_run_series, [_with_disc(cfg, modes=int(H)) for H in modes], jobs)
    for s in series:
        if s.diverged:
            raise DivergedRunError(f"run with H={s.modes} diverged at step {s.diverged_step}")
    return scaling_fits(modes, [max(s.c_inf) for s in series])


# ---------------------------------------------------------------- errors


def c0_ground_truth(t, phys: PhysParams, c0_initial: float = 0.0) -> np.ndarray:
    """``(c0(0) - M0/k^2) exp(-k^2 t / eps) + M0/k^2``."""
    t = np.asarray(t, dtype=float)
    steady = phys.mass / phys.k**2
    if phys.epsilon == 0:
        return np.where(t > 0, steady, c0_initial)
    return (c0_initial - steady) * np.exp(-(phys.k**2) * t / phys.epsilon) + steady


def c0_error(series, phys: PhysParams, c0_initial: float = 0.0, reduce: str = "rms") -> float:
    """Relative error of the total concentration against its exact law.

    ``reduce="rms"`` gives ``sqrt((1/T) int_0^T rel(t)^2 dt)`` with the
    trapezoid rule; ``reduce="final"`` gives ``rel(T)``.  Where the ground
    truth and the series are both zero the relative error is taken as 0.

    ``series`` is a :class:`DiagnosticsSeries` or a ``(times, c0)`` pair.
    """
    if isinstance(series, DiagnosticsSeries):
        t, c = np.asarray(series.time), np.asarray(series.c0)
    else:
        t, c = (np.asarray(v, dtype=float) for v in series)
    truth = c0_ground_truth(t, phys, c0_initial)
    diff = np.abs(c - truth)
    zero = truth == 0
    if np.any(zero & (diff > 0)):
        raise ValueError("ground truth vanishes where the series does not")
    rel = np.divide(diff, np.abs(truth), out=np.zeros_like(diff), where=~zero)
    if reduce == "final":
        return float(rel[-1])
    if reduce != "rms":
        raise ValueError(f"unknown reduction {reduce!r}")
    span = t[-1] - t[0]
    if span <= 0:
        return float(rel[-1])
    return float(math.sqrt(np.trapezoid(rel**2, t) / span))


def field_l2_error(a: SpectralField, b: SpectralField) -> float:
    """``||a - b||_2 / ||b||_2`` over the modes both fields share (Parseval)."""
    if not math.isclose(a.box_len, b.box_len):
        raise ValueError("fields live on different boxes")
    m = min(a.modes, b.modes)
    ca = restrict_modes(a.coeffs, m)
    cb = restrict_modes(b.coeffs, m)
    nb = float(np.sqrt(np.sum(np.abs(cb) ** 2)))
    if nb == 0:
        raise ZeroDivisionError("reference field is zero")
    return float(np.sqrt(np.sum(np.abs(ca - cb) ** 2)) / nb)


# ---------------------------------------------------------------- convergence


@dataclass
class ConvergenceResult:
    axis: str
    values: np.ndarray
    l2_errors: np.ndarray
    c0_errors: np.ndarray
    slope_l2: float
    slope_c0: float
    reference: float


def loglog_slope(x, y) -> float:
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


_AXIS_FIELD = {"dt": "dt", "P": "particles", "H": "modes"}


def convergence_study(
    axis: str,
    values: Sequence[float],
    reference: Config,
    jobs: int | None = 1,
    c0_reduce: str = "rms",
) -> ConvergenceResult:
    """Errors of coarser runs against a finer reference along one axis.

    The error of each member is the relative L2 error of its final field
    against the reference final field; the c0 error is measured against the
    exact law.  Slopes are least-squares fits in log-log.
    """
    if axis not in _AXIS_FIELD:
        raise ValueError(f"axis must be one of {sorted(_AXIS_FIELD)}")
    key = _AXIS_FIELD[axis]
    ref_val = getattr(reference.disc, key)
    cast = float if axis == "dt" else int
    vals = [cast(v) for v in values]
    finer = (lambda v: v > ref_val) if axis == "dt" else (lambda v: v < ref_val)
    if not all(finer(v) for v in vals):
        raise ValueError(f"reference {axis}={ref_val} must be finer than every tested value")
    cfgs = [reference] + [_with_disc(reference, **{key: v}) for v in vals]
    results = map_tasks(_run_full, cfgs, jobs)
    for cfg, res in zip(cfgs, results):
        if res.series.diverged:
            raise DivergedRunError(f"{axis}={getattr(cfg.disc, key)} diverged at step {res.series.diverged_step}")
    ref_field = results[0].state.field
    l2 = np.array([field_l2_error(r.state.field, ref_field) for r in results[1:]])
    c0 = np.array([c0_error(r.series, reference.phys, reduce=c0_reduce) for r in results[1:]])
    return ConvergenceResult(
        axis=axis,
        values=np.asarray(vals, dtype=float),
        l2_errors=l2,
        c0_errors=c0,
        slope_l2=loglog_slope(vals, l2),
        slope_c0=loglog_slope(vals, c0) if np.all(c0 > 0) else float("nan"),
        reference=float(ref_val),
    )


# ---------------------------------------------------------------- mass scans


@dataclass
class MassBracket:
    lower: float
    upper: float
    evidence: dict = field(default_factory=dict)
    scanned: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("bracket needs lower < upper")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def overlaps(self, other: "MassBracket", tol: float = 0.0) -> bool:
        return self.lower - tol <= other.upper and other.lower - tol <= self.upper


def _verdict(outcome) -> bool:
    return bool(outcome.blowup) if hasattr(outcome, "blowup") else bool(outcome)


def critical_mass_scan(
    predicate: Callable[[float], object],
    masses: Sequence[float] | None = None,
    bracket: tuple[float, float] | None = None,
    mode: str = "grid",
    width: float = 0.2,
    jobs: int | None = 1,
) -> MassBracket:
    """Locate the transition mass of a blow-up predicate.

    ``predicate(mass)`` returns a bool or an object with a ``blowup``
    attribute.  Blow-up is assumed monotone in the mass.  Grid mode evaluates
    every mass and returns the first (no blow-up, blow-up) neighbours;
    bisection mode starts from ``bracket`` and halves it until it is no wider
    than ``width``.
    """
    evidence: dict[float, object] = {}
    if mode == "grid":
        if masses is None or len(masses) < 2:
            raise ValueError("grid mode needs at least two masses")
        grid = sorted(float(m) for m in masses)
        for m, out in zip(grid, map_tasks(predicate, grid, jobs)):
            evidence[m] = out
        flags = [_verdict(evidence[m]) for m in grid]
        if all(flags) or not any(flags):
            raise NoBracketError(f"blow-up {'everywhere' if all(flags) else 'nowhere'} on {grid}")
        i = flags.index(True)
        if i == 0:
            raise NoBracketError(f"smallest mass {grid[0]} already blows up")
        if any(not f for f in flags[i:]):
            logger.warning("blow-up is not monotone in the mass on %s", grid)
        ends = {grid[i - 1]: evidence[grid[i - 1]], grid[i]: evidence[grid[i]]}
        return MassBracket(grid[i - 1], grid[i], ends, dict(evidence))
    if mode != "bisection":
        raise ValueError(f"unknown mode {mode!r}")
    if bracket is None:
        raise ValueError("bisection mode needs a starting bracket")
    lo, hi = (float(v) for v in bracket)
    for m, out in zip((lo, hi), map_tasks(predicate, [lo, hi], jobs)):
        evidence[m] = out
    if _verdict(evidence[lo]) or not _verdict(evidence[hi]):
        raise NoBracketError(f"({lo}, {hi}) does not straddle the transition")
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        evidence[mid] = predicate(mid)
        if _verdict(evidence[mid]):
            hi = mid
        else:
            lo = mid
    return MassBracket(lo, hi, {lo: evidence[lo], hi: evidence[hi]}, dict(evidence))


@dataclass
class SipfBlowup:
    """Picklable predicate: ratio-diagnostic blow-up of ``template`` at a given mass."""

    template: Config
    H_hi: int
    H_lo: int
    threshold: float = 1.5
    sustain: int = 10

    def __call__(self, mass: float) -> BlowupVerdict:
        res = ratio_diagnostic(_with_mass(self.template, mass), self.H_hi, self.H_lo)
        return classify_blowup(res.times, res.ratio, self.threshold, self.sustain)


@dataclass
class FdmInstability:
    """Picklable predicate: the radial solver is flagged unstable at a given mass."""

    phys: PhysParams
    grid: RadialGrid
    dt: float
    horizon: float
    ic_radius: float = 1.0

    def __call__(self, mass: float) -> BlowupVerdict:
        res = fdm_run(self.phys, mass, self.ic_radius, self.grid, self.dt, self.horizon)
        return BlowupVerdict(not res.stable, None if res.stable else float(res.times[-1]))


# ---------------------------------------------------------------- variance


@dataclass(frozen=True)
class VarianceFit:
    slope: float
    intercept: float
    r2: float


def variance_fit(times, variance, status: str = "completed") -> VarianceFit:
    """Least-squares line through the total particle variance."""
    if status != "completed":
        raise DivergedRunError("variance fit needs a completed run")
    t = np.asarray(times, dtype=float)
    v = np.asarray(variance, dtype=float)
    if len(t) < 10:
        raise ValueError("need at least 10 snapshots")
    slope, intercept = np.polyfit(t, v, 1)
    resid = v - (slope * t + intercept)
    ss_tot = float(np.sum((v - v.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return VarianceFit(float(slope), float(intercept), r2)


# ---------------------------------------------------------------- reports


def write_ratio_csv(path: str | Path, times, ratio) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "ratio"])
        for t, r in zip(times, ratio):
            w.writerow([repr(float(t)), repr(float(r))])


def write_study_report(path: str | Path, header: Sequence[str], rows: Sequence[Sequence], summary: dict) -> Path:
    """Write the table as CSV and the fitted numbers next to it as JSON.

    Returns the path of the summary file.
    """
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(header))
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    out = path.with_name(path.stem + "_summary.json")
    out.write_text(json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n")
    return out
