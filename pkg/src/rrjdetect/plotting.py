"""Report figures.

Figures are drawn on the Agg canvas through the object-oriented API (no
pyplot state) and saved as PNG without a timestamp, so repeated runs give
identical files.
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

__all__ = ["plot_roc", "plot_statistic_histograms", "plot_pareto", "plot_strategy", "plot_stationary"]

_META = {"Software": None}


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=110, metadata=_META)
    return path


def plot_roc(curves: Mapping[str, tuple[Sequence[float], Sequence[float]]], path, title: str = "ROC") -> Path:
    """``curves`` maps a label to ``(FAR, MDR)`` sequences."""
    fig = Figure(figsize=(4.8, 4.2))
    ax = fig.add_subplot()
    for label, (far, mdr) in curves.items():
        ax.plot(far, mdr, drawstyle="steps-post" if len(far) > 250 else "default", label=label)
    ax.plot([0, 1], [1, 0], color="0.7", lw=0.8, ls="--")
    ax.set(xlim=(0, 1), ylim=(0, 1), xlabel="false-alarm rate", ylabel="missed-detection rate", title=title)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_statistic_histograms(z0, z1, path, threshold: float | None = None) -> Path:
    z0 = np.asarray(z0, dtype=float)
    z1 = np.asarray(z1, dtype=float)
    fig = Figure(figsize=(5.2, 3.6))
    ax = fig.add_subplot()
    finite = np.concatenate([z0[np.isfinite(z0)], z1[np.isfinite(z1)]])
    if finite.size:
        bins = np.linspace(finite.min(), finite.max(), 60) if np.ptp(finite) > 0 else 10
        for z, label in ((z0, "H0 (compliant)"), (z1, "H1 (jammer)")):
            zf = z[np.isfinite(z)]
            if zf.size:
                ax.hist(zf, bins=bins, alpha=0.55, density=True, label=label)
    if threshold is not None and np.isfinite(threshold):
        ax.axvline(threshold, color="k", lw=1, label="EER threshold")
    n_inf = int(np.sum(~np.isfinite(z0)) + np.sum(~np.isfinite(z1)))
    ax.set(xlabel="Z", ylabel="density", title=f"test statistic ({n_inf} infinite values)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_pareto(rows: Sequence[Mapping], path) -> Path:
    """``rows`` carry ``eta``, ``eer``, ``model`` and ``on_frontier``."""
    fig = Figure(figsize=(5.2, 4.0))
    ax = fig.add_subplot()
    models = sorted({r["model"] for r in rows})
    for model in models:
        pts = [r for r in rows if r["model"] == model]
        eta = np.array([r["eta"] for r in pts])
        eer = np.array([r["eer"] for r in pts])
        on = np.array([r["on_frontier"] for r in pts], dtype=bool)
        sc = ax.scatter(eta, eer, s=10, alpha=0.5, label=f"{model}")
        order = np.argsort(eta[on])
        ax.plot(eta[on][order], eer[on][order], color=sc.get_facecolor()[0], lw=1.5)
    ax.set(xlabel="jamming efficiency", ylabel="equal error rate", title="Pareto frontier")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_strategy(rows: Sequence[Mapping], path) -> Path:
    feasible = [r for r in rows if r.get("feasible", True)]
    fig = Figure(figsize=(5.2, 3.6))
    ax = fig.add_subplot()
    if feasible:
        tau = [r["tau_eta"] for r in feasible]
        ax.plot(tau, [r["p_R"] for r in feasible], marker="o", ms=3, label="p_R*")
        ax.plot(tau, [r["p_J"] for r in feasible], marker="s", ms=3, label="p_J*")
        ax2 = ax.twinx()
        ax2.plot(tau, [r["rate"] for r in feasible], color="0.4", ls=":", label="I*")
        ax2.set_ylabel("rate function I*")
    ax.set(xlabel="efficiency threshold", ylabel="probability", ylim=(-0.02, 1.02), title="optimal jammer")
    ax.legend(loc="center left", fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_stationary(labels: Sequence[str], pi0, pi1, path) -> Path:
    x = np.arange(len(labels))
    fig = Figure(figsize=(max(5.0, 0.14 * len(labels) + 2), 3.6))
    ax = fig.add_subplot()
    ax.bar(x - 0.2, pi0, width=0.4, label="compliant")
    ax.bar(x + 0.2, pi1, width=0.4, label="jammer")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=90, fontsize=6 if len(labels) > 16 else 8)
    ax.set(ylabel="stationary probability", title="stationary distributions")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
