"""Figure rendering for the CLI report paths.

Every command that writes a CSV can render a companion PNG next to it; the
helpers here keep a consistent, file-only (Agg) matplotlib setup.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update({
    "figure.figsize": (6.4, 4.2),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 9,
    "savefig.dpi": 150,
})


def save(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def error_curve_figure(series: dict, path: str, ylabel: str = "log10 relative error") -> str:
    """One line per variant: epoch index vs log10 relative squared error."""
    fig, ax = plt.subplots()
    for label, values in series.items():
        values = np.asarray(values, dtype=float)
        ax.plot(np.arange(values.size), values, label=label, lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    ax.legend()
    return save(fig, path)


def loglog_curve_figure(gammas, curves: dict, path: str, ylabel: str) -> str:
    fig, ax = plt.subplots()
    for label, values in curves.items():
        vals = np.asarray(values, dtype=float)
        mask = vals > 0
        ax.loglog(np.asarray(gammas)[mask], vals[mask], "o-", label=label)
    ax.set_xlabel("step size")
    ax.set_ylabel(ylabel)
    ax.legend()
    return save(fig, path)


def histogram_grid_figure(samples: dict, path: str, xlabel: str) -> str:
    """One histogram per (label -> values) entry, shared x scale."""
    n = len(samples)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.0), squeeze=False)
    for ax, (label, values) in zip(axes[0], samples.items()):
        ax.hist(np.asarray(values, dtype=float), bins=40)
        ax.set_title(label, fontsize=9)
        ax.set_xlabel(xlabel)
    return save(fig, path)


def timing_bar_figure(rows: list, path: str) -> str:
    """rows: (method, seconds) pairs."""
    fig, ax = plt.subplots()
    names = [r[0] for r in rows]
    secs = [r[1] for r in rows]
    ax.bar(names, secs)
    ax.set_ylabel("seconds")
    return save(fig, path)
