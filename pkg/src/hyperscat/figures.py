"""Matplotlib figure rendering for the report path (SVG files, reproducible)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update({
    "figure.figsize": (5.2, 3.4),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "hyperscat",
})

_SVG_META = {"Date": None}


def save_svg(fig, path):
    fig.savefig(path, format="svg", metadata=_SVG_META, bbox_inches="tight")
    plt.close(fig)
    return str(path)


def plot_xi(samples, path):
    """xi_q(lambda) curves, one per bracket order."""
    fig, ax = plt.subplots()
    for s in samples:
        ax.plot(s.lam, s.values, marker=".", lw=1.0, label=f"q = {s.q}")
    ax.set_xlabel(r"$\lambda$")
    ax.set_ylabel(r"$\xi_q(\lambda)$")
    ax.set_xscale("log")
    ax.legend(frameon=False)
    return save_svg(fig, path)


def plot_heat_fit(series_list, fits, oracles, path):
    """t-scaled heat series against their fitted leading coefficients."""
    fig, ax = plt.subplots()
    for s, f, a0o in zip(series_list, fits, oracles):
        n = s.metric.n
        scale = s.t ** (n / 2.0)
        ax.plot(s.t, scale * s.values, marker="o", ms=3, lw=1.0,
                label=f"q = {s.q}")
        ax.axhline(f.a0, color=ax.lines[-1].get_color(), ls="--", lw=0.8)
        ax.axhline(a0o, color=ax.lines[-1].get_color(), ls=":", lw=0.8)
    ax.set_xscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel(r"$t^{n/2}\,\mathrm{tr}[e^{-tP_\varepsilon}]_q$")
    ax.legend(frameon=False)
    return save_svg(fig, path)


def plot_flow_ratios(report, path):
    """Bar chart of the empirical normalized estimate ratios."""
    fig, ax = plt.subplots()
    names = list(report.stats.keys())
    vals = [report.stats[k].sup_ratio for k in names]
    ax.barh(np.arange(len(names)), vals, height=0.6)
    ax.set_yticks(np.arange(len(names)), names)
    ax.set_xlabel("empirical sup ratio")
    return save_svg(fig, path)


def plot_propagation(curve, path):
    fig, ax = plt.subplots()
    ax.plot(curve.times, curve.integrand, lw=1.0, label="integrand")
    ax.plot(curve.times, curve.cumulative, lw=1.0, label="D(T)")
    ax.axhline(curve.plateau, ls="--", lw=0.8, color="k")
    ax.set_xlabel("T")
    ax.legend(frameon=False)
    return save_svg(fig, path)
