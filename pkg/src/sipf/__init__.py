"""Stochastic interacting particle-field method for 3D fully parabolic Keller-Segel."""
from __future__ import annotations

from .config import (
    Config,
    ConfigError,
    Discretization,
    InitialCondition,
    KernelScale,
    PhysParams,
    load_config,
    validate_config,
)
from .driver import DiagnosticsSeries, RunResult, run, sample_initial
from .spectral import SpectralField

__version__ = "0.1.0"

__all__ = [
    "Config",
    "ConfigError",
    "Discretization",
    "InitialCondition",
    "KernelScale",
    "PhysParams",
    "SpectralField",
    "DiagnosticsSeries",
    "RunResult",
    "load_config",
    "validate_config",
    "run",
    "sample_initial",
    "__version__",
]
