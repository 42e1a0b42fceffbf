"""Figures for closed-loop runs, rendered to files with the Agg canvas.

Figures are built on ``matplotlib.figure.Figure`` directly so no global
pyplot state or interactive backend is touched.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

__all__ = ["plot_states", "plot_error_norms", "plot_inputs", "render_all"]

STYLE = {"linewidth": 1.2}


def _figure(nrows: int = 1, height: float = 3.0):
    fig = Figure(figsize=(6.4, height * nrows), constrained_layout=True)
    FigureCanvasAgg(fig)
    axes = fig.subplots(nrows, 1, sharex=True, squeeze=False)[:, 0]
    return fig, axes


def _mark_T(ax, T):
    if T is not None:
        ax.axvline(T, color="0.3", linestyle="--", linewidth=0.9, label="T")


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, metadata={"Software": None})
    return path


def plot_states(runs: Sequence[dict], T: float | None, path) -> Path:
    """One panel per state component, one line per run.

    ``runs`` are column dicts as returned by ``read_trajectory_csv`` with
    an added ``"tag"`` key.
    """
    n = sum(1 for k in runs[0] if k.startswith("x") and k[1:].isdigit())
    fig, axes = _figure(n, 2.4)
    for i, ax in enumerate(axes):
        for run in runs:
            ax.plot(run["t"], run[f"x{i + 1}"], label=run["tag"], **STYLE)
        _mark_T(ax, T)
        ax.set_ylabel(f"$x_{i + 1}$")
    axes[0].legend(fontsize="small", ncol=3)
    axes[-1].set_xlabel("t [s]")
    return _save(fig, path)


def plot_error_norms(runs: Sequence[dict], T: float | None, path) -> Path:
    """``||e(t)||`` on a log axis."""
    fig, (ax,) = _figure(1)
    floor = np.finfo(float).tiny
    for run in runs:
        ax.semilogy(run["t"], np.maximum(run["e_norm"], floor), label=run["tag"], **STYLE)
    _mark_T(ax, T)
    ax.set_xlabel("t [s]")
    ax.set_ylabel(r"$\|e\|$")
    ax.legend(fontsize="small", ncol=3)
    return _save(fig, path)


def plot_inputs(runs: Sequence[dict], T: float | None, path) -> Path:
    fig, (ax,) = _figure(1)
    for run in runs:
        ax.plot(run["t"], run["u"], label=run["tag"], **STYLE)
    _mark_T(ax, T)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("u")
    ax.legend(fontsize="small", ncol=3)
    return _save(fig, path)


def render_all(runs: Sequence[dict], T: float | None, out_dir) -> list[Path]:
    """Write ``states.png``, ``error_norm.png`` and ``inputs.png`` into ``out_dir``."""
    out = Path(out_dir)
    runs = [r for r in runs if len(r["t"])]
    if not runs:
        return []
    return [
        plot_states(runs, T, out / "states.png"),
        plot_error_norms(runs, T, out / "error_norm.png"),
        plot_inputs(runs, T, out / "inputs.png"),
    ]
