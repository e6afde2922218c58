"""Shared domain types, configuration validation and the RNG contract.

Configuration files are flat ``key = value`` text with ``#`` comments::

    phys.mu = 1.0
    phys.chi = 1.0
    phys.epsilon = 0.0001
    phys.k = 0.1
    phys.mass = 20.0
    disc.box_len = 8.0
    disc.modes = 24
    ...
    init.shape = ball
    init.centers = 0,0,0
    init.radius = 1.0
    init.c0 = zero

Random numbers come from counter-based Philox streams.  The key is the
root seed plus a purpose tag; the counter's high word is the step index.
Step ``n`` draws one ``(P, 3)`` block in particle order, so the values seen
by particle ``p`` at step ``n`` depend only on ``(seed, n, p, P)`` and not
on how the work is scheduled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

__all__ = [
    "ConfigError",
    "PhysParams",
    "Discretization",
    "KernelScale",
    "InitialCondition",
    "Config",
    "TETRAHEDRON_CENTERS",
    "validate_config",
    "config_problems",
    "mode_indices",
    "mode_frequencies",
    "omega_squared",
    "step_generator",
    "sampling_generator",
    "parse_config",
    "dump_config",
    "load_config",
    "save_config",
    "with_overrides",
]

_STREAM_BROWNIAN = 0
_STREAM_SAMPLING = 1
_SEED_MASK = (1 << 64) - 1

TETRAHEDRON_CENTERS: tuple[tuple[float, float, float], ...] = (
    (1.0, 0.0, 0.0),
    (-0.5, math.sqrt(3.0) / 2.0, 0.0),
    (-0.5, -math.sqrt(3.0) / 2.0, 0.0),
    (0.0, 0.0, math.sqrt(2.0)),
)


class ConfigError(ValueError):
    """Raised when a configuration violates one or more invariants."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration: " + "; ".join(self.problems))


@dataclass(frozen=True)
class PhysParams:
    """Physical parameters of the Keller-Segel system."""

    mu: float = 1.0
    chi: float = 1.0
    epsilon: float = 1e-4
    k: float = 0.1
    mass: float = 20.0


@dataclass(frozen=True)
class Discretization:
    """Numerical resolution: box length, modes per dimension, particles, time grid."""

    box_len: float = 8.0
    modes: int = 24
    particles: int = 10_000
    dt: float = 1e-4
    horizon: float = 0.1
    seed: int = 0

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def spacing(self) -> float:
        """Quadrature grid spacing ``L / H``."""
        return self.box_len / self.modes


@dataclass(frozen=True)
class KernelScale:
    """Screening rate of the one-step Green's function, ``beta**2 = k**2 + eps/dt``."""

    beta: float

    @classmethod
    def from_params(cls, phys: PhysParams, dt: float) -> "KernelScale":
        return cls(math.sqrt(phys.k**2 + phys.epsilon / dt))

    @property
    def beta_sq(self) -> float:
        return self.beta * self.beta


@dataclass(frozen=True)
class InitialCondition:
    """Initial density (uniform balls) and initial chemical field.

    ``shape`` is ``"ball"`` (one center), ``"multi-ball"`` (any number of
    centers, equal mass split) or ``"tetrahedron"`` (the four regular
    tetrahedron vertices, centers taken from :data:`TETRAHEDRON_CENTERS`).
    ``c0`` is ``"zero"`` or a path to a field snapshot CSV.
    """

    shape: str = "ball"
    centers: tuple[tuple[float, float, float], ...] = ((0.0, 0.0, 0.0),)
    radius: float = 1.0
    c0: str = "zero"

    def resolved_centers(self) -> tuple[tuple[float, float, float], ...]:
        if self.shape == "tetrahedron":
            return TETRAHEDRON_CENTERS
        return self.centers


@dataclass(frozen=True)
class Config:
    """A validated run configuration."""

    phys: PhysParams = field(default_factory=PhysParams)
    disc: Discretization = field(default_factory=Discretization)
    init: InitialCondition = field(default_factory=InitialCondition)
    r_min: float = 0.0

    @property
    def kernel(self) -> KernelScale:
        return KernelScale.from_params(self.phys, self.disc.dt)

    @property
    def beta(self) -> float:
        return self.kernel.beta


def config_problems(
    phys: PhysParams, disc: Discretization, init: InitialCondition | None = None, r_min: float = 0.0
) -> list[str]:
    """List every violated invariant (empty when the inputs are valid)."""
    problems = []
    for name in ("mu", "chi", "k", "mass"):
        value = getattr(phys, name)
        if not (np.isfinite(value) and value > 0):
            extra = " (stability of the field update requires k > 0)" if name == "k" else ""
            problems.append(f"phys.{name} must be > 0, got {value}{extra}")
    if not (np.isfinite(phys.epsilon) and phys.epsilon >= 0):
        problems.append(f"phys.epsilon must be >= 0, got {phys.epsilon}")
    if not (np.isfinite(disc.box_len) and disc.box_len > 0):
        problems.append(f"disc.box_len must be > 0, got {disc.box_len}")
    if not (np.isfinite(disc.dt) and disc.dt > 0):
        problems.append(f"disc.dt must be > 0, got {disc.dt}")
    if not (np.isfinite(disc.horizon) and disc.horizon > 0):
        problems.append(f"disc.horizon must be > 0, got {disc.horizon}")
    if int(disc.modes) != disc.modes or disc.modes < 2 or disc.modes % 2:
        problems.append(f"disc.modes must be an even positive integer, got {disc.modes}")
    if int(disc.particles) != disc.particles or disc.particles < 1:
        problems.append(f"disc.particles must be >= 1, got {disc.particles}")
    if not 0 <= int(disc.seed) <= _SEED_MASK:
        problems.append(f"disc.seed must fit in 64 bits, got {disc.seed}")
    if disc.dt > 0 and disc.horizon > 0:
        ratio = disc.horizon / disc.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(ratio, 1.0) or round(ratio) < 1:
            problems.append(f"disc.horizon / disc.dt must be a positive integer, got {ratio}")
    if not (np.isfinite(r_min) and r_min >= 0):
        problems.append(f"r_min must be >= 0, got {r_min}")
    if init is not None:
        problems.extend(_init_problems(init, disc))
    return problems


def _init_problems(init: InitialCondition, disc: Discretization) -> list[str]:
    problems = []
    if init.shape not in ("ball", "multi-ball", "tetrahedron"):
        problems.append(f"init.shape must be ball, multi-ball or tetrahedron, got {init.shape!r}")
        return problems
    centers = init.resolved_centers()
    if init.shape == "ball" and len(centers) != 1:
        problems.append("init.shape = ball needs exactly one center")
    if not init.radius > 0:
        problems.append(f"init.radius must be > 0, got {init.radius}")
    half = disc.box_len / 2
    for c in centers:
        if len(c) != 3:
            problems.append(f"init center {c} is not a 3-vector")
        elif any(abs(x) + init.radius > half for x in c):
            problems.append(f"ball at {c} with radius {init.radius} leaves the box [-{half}, {half}]^3")
    if int(disc.particles) < len(centers):
        problems.append(f"{disc.particles} particles cannot populate {len(centers)} clusters")
    return problems


def validate_config(
    phys: PhysParams,
    disc: Discretization,
    init: InitialCondition | None = None,
    r_min: float = 0.0,
) -> Config:
    """Check all invariants and return a :class:`Config`.

    Raises
    ------
    ConfigError
        Carrying the full list of violated invariants.
    """
    problems = config_problems(phys, disc, init, r_min)
    if problems:
        raise ConfigError(problems)
    disc = replace(disc, modes=int(disc.modes), particles=int(disc.particles), seed=int(disc.seed))
    return Config(phys=phys, disc=disc, init=init or InitialCondition(), r_min=float(r_min))


def mode_indices(modes: int) -> np.ndarray:
    """Integer mode indices in FFT storage order: ``0..H/2-1, -H/2..-1``."""
    return np.fft.fftfreq(modes, d=1.0 / modes).round().astype(np.int64)


def mode_frequencies(disc: Discretization) -> np.ndarray:
    """Angular frequencies ``2*pi/L * (j, m, l)`` on the mode cube.

    Returns an array of shape ``(H, H, H, 3)`` in FFT storage order, so
    entry ``[a, b, c]`` belongs to indices ``mode_indices(H)[[a, b, c]]``.
    """
    w = 2 * np.pi / disc.box_len * mode_indices(disc.modes).astype(float)
    wx, wy, wz = np.meshgrid(w, w, w, indexing="ij")
    return np.stack([wx, wy, wz], axis=-1)


def omega_squared(modes: int, box_len: float) -> np.ndarray:
    """``|omega|**2`` on the mode cube in FFT storage order."""
    w2 = (2 * np.pi / box_len * mode_indices(modes)) ** 2
    return w2[:, None, None] + w2[None, :, None] + w2[None, None, :]


def step_generator(seed: int, step: int) -> np.random.Generator:
    """Generator for the Brownian increments of time step ``step``."""
    bitgen = np.random.Philox(key=[int(seed) & _SEED_MASK, _STREAM_BROWNIAN], counter=[0, 0, int(step), 0])
    return np.random.Generator(bitgen)


def sampling_generator(seed: int) -> np.random.Generator:
    """Generator for initial-condition sampling (disjoint from all step streams)."""
    bitgen = np.random.Philox(key=[int(seed) & _SEED_MASK, _STREAM_SAMPLING])
    return np.random.Generator(bitgen)


# ---------------------------------------------------------------------------
# text format

_PHYS_KEYS = tuple(f.name for f in fields(PhysParams))
_DISC_KEYS = tuple(f.name for f in fields(Discretization))
_INT_KEYS = {"modes", "particles", "seed"}


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: Config) -> str:
    """Serialize a config to the flat key-value text format."""
    lines = []
    for name in _PHYS_KEYS:
        lines.append(f"phys.{name} = {_fmt(float(getattr(cfg.phys, name)))}")
    for name in _DISC_KEYS:
        value = getattr(cfg.disc, name)
        value = int(value) if name in _INT_KEYS else float(value)
        lines.append(f"disc.{name} = {_fmt(value)}")
    lines.append(f"init.shape = {cfg.init.shape}")
    centers = ";".join(",".join(_fmt(float(x)) for x in c) for c in cfg.init.centers)
    lines.append(f"init.centers = {centers}")
    lines.append(f"init.radius = {_fmt(float(cfg.init.radius))}")
    lines.append(f"init.c0 = {cfg.init.c0}")
    lines.append(f"kernel.r_min = {_fmt(float(cfg.r_min))}")
    return "\n".join(lines) + "\n"


def _parse_pairs(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError([f"line {lineno}: expected 'key = value', got {raw!r}"])
        key, value = (part.strip() for part in line.split("=", 1))
        pairs[key] = value
    return pairs


def _build(pairs: dict[str, str]) -> tuple[PhysParams, Discretization, InitialCondition, float]:
    problems = []
    phys_kw: dict[str, Any] = {}
    disc_kw: dict[str, Any] = {}
    init_kw: dict[str, Any] = {}
    r_min = 0.0
    for key, value in pairs.items():
        section, _, name = key.partition(".")
        try:
            if section == "phys" and name in _PHYS_KEYS:
                phys_kw[name] = float(value)
            elif section == "disc" and name in _DISC_KEYS:
                if name in _INT_KEYS:
                    number = float(value)
                    if number != int(number):
                        raise ValueError(f"not an integer: {value}")
                    disc_kw[name] = int(number)
                else:
                    disc_kw[name] = float(value)
            elif key == "init.shape":
                init_kw["shape"] = value
            elif key == "init.centers":
                init_kw["centers"] = tuple(
                    tuple(float(x) for x in chunk.split(",")) for chunk in value.split(";") if chunk.strip()
                )
            elif key == "init.radius":
                init_kw["radius"] = float(value)
            elif key == "init.c0":
                init_kw["c0"] = value
            elif key == "kernel.r_min":
                r_min = float(value)
            else:
                problems.append(f"unknown key {key!r}")
        except ValueError as exc:
            problems.append(f"{key}: {exc}")
    if problems:
        raise ConfigError(problems)
    return PhysParams(**phys_kw), Discretization(**disc_kw), InitialCondition(**init_kw), r_min


def parse_config(text: str) -> Config:
    """Parse and validate the flat key-value text format."""
    phys, disc, init, r_min = _build(_parse_pairs(text))
    return validate_config(phys, disc, init, r_min)


def load_config(path: str | Path) -> Config:
    return parse_config(Path(path).read_text())


def save_config(cfg: Config, path: str | Path) -> None:
    Path(path).write_text(dump_config(cfg))


def with_overrides(cfg: Config, overrides: dict[str, Any]) -> Config:
    """Return a re-validated copy with dotted-key overrides applied."""
    pairs = _parse_pairs(dump_config(cfg))
    for key, value in overrides.items():
        if key == "init.centers" and not isinstance(value, str):
            value = ";".join(",".join(_fmt(float(x)) for x in c) for c in value)
        pairs[key] = _fmt(value)
    return parse_config("\n".join(f"{k} = {v}" for k, v in pairs.items()))
