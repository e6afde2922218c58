"""Optional PNG figures; needs matplotlib (``pip install artifact[plots]``)."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .spectral import SpectralField, eval_field_refined

__all__ = [
    "plot_c_slice",
    "plot_particles",
    "plot_series",
    "plot_ratio",
    "plot_xy",
]


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_c_slice(field: SpectralField, path: str | Path, refine: int = 4, title: str = "") -> Path:
    """Colour map of ``c`` on the plane ``z = 0``."""
    plt = _pyplot()
    vals = eval_field_refined(field, refine)
    n = vals.shape[0]
    L = field.box_len
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(vals[:, :, n // 2].T, origin="lower", extent=(-L / 2, L / 2 - L / n, -L / 2, L / 2 - L / n), cmap="viridis")
    fig.colorbar(im, ax=ax, label="c")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(title or "c at z = 0")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_particles(positions: np.ndarray, path: str | Path, box_len: float, title: str = "") -> Path:
    """Scatter projections of the ensemble onto the three coordinate planes."""
    plt = _pyplot()
    pos = np.asarray(positions)
    half = box_len / 2
    fig, axes = plt.subplots(1, 3, figsize=(12, 4))
    for ax, (i, j), lab in zip(axes, ((0, 1), (0, 2), (1, 2)), ("xy", "xz", "yz")):
        ax.scatter(pos[:, i], pos[:, j], s=1, alpha=0.5)
        ax.set_xlim(-half, half)
        ax.set_ylim(-half, half)
        ax.set_aspect("equal")
        ax.set_xlabel(lab[0])
        ax.set_ylabel(lab[1])
    fig.suptitle(title or f"{len(pos)} particles")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_series(series, path: str | Path) -> Path:
    """``||c||_inf`` and ``int c`` against time."""
    plt = _pyplot()
    fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
    a.plot(series.time, series.c_inf)
    a.set_xlabel("t")
    a.set_ylabel("max |c|")
    b.plot(series.time, series.c0)
    b.set_xlabel("t")
    b.set_ylabel("int c dx")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_ratio(times, ratio, path: str | Path, threshold: float | None = None) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(times, np.where(np.isfinite(ratio), ratio, np.nan))
    if threshold is not None:
        ax.axhline(threshold, color="k", ls="--", lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("max |c| ratio")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_xy(x: Sequence[float], ys: dict[str, Sequence[float]], path: str | Path, xlabel: str, ylabel: str, loglog: bool = False) -> Path:
    """Generic line plot used for convergence, scaling and scan reports."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, y in ys.items():
        ax.plot(x, y, "o-", label=label)
    if loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
