"""Report figures, rendered off-screen."""

from __future__ import annotations

from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _finish(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_traces(traces, path: str, title: str = "", marks: Optional[Sequence[float]] = None,
                log: bool = True) -> str:
    """|rho_hat(t, k)| for the positive modes."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for tr in traces:
        if tr.k <= 0 or tr.values.size == 0 or not np.any(tr.values):
            continue
        ax.plot(tr.times, np.abs(tr.values), lw=1.0, label=f"k={tr.k}")
    for t in marks or ():
        ax.axvline(t, color="0.6", lw=0.8, ls="--")
    if log:
        ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("|rho_hat(t,k)|")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8, ncol=2)
    return _finish(fig, path)


def plot_series(times, series: Dict[str, np.ndarray], path: str, ylabel: str = "",
                title: str = "", log: bool = False) -> str:
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, vals in series.items():
        ax.plot(times, vals, lw=1.0, label=name)
    if log:
        ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_nyquist(curve: np.ndarray, path: str, title: str = "") -> str:
    """Image of the real xi-axis under the dispersion function."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(curve.real, curve.imag, lw=1.0)
    ax.plot([0], [0], "k+", ms=10)
    ax.set_xlabel("Re D")
    ax.set_ylabel("Im D")
    ax.set_aspect("equal", adjustable="datalim")
    if title:
        ax.set_title(title)
    return _finish(fig, path)


def plot_peaks(per_mode, epsilon: float, path: str) -> str:
    """log amplitude against (eps t_peak)^(1/3) with the fitted line."""
    fig, ax = plt.subplots(figsize=(5, 4))
    if per_mode:
        x = np.cbrt(epsilon * np.array([p[1] for p in per_mode]))
        y = np.log([p[2] for p in per_mode])
        ax.plot(x, y, "o")
        for (k, _, _), xi, yi in zip(per_mode, x, y):
            ax.annotate(f"k={k}", (xi, yi), fontsize=8)
        if len(per_mode) >= 2:
            c, b = np.polyfit(x, y, 1)
            xx = np.linspace(x.min(), x.max(), 50)
            ax.plot(xx, c * xx + b, "-", lw=1.0)
    ax.set_xlabel("(eps t_peak)^(1/3)")
    ax.set_ylabel("log amplitude")
    return _finish(fig, path)
