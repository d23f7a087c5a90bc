"""Report figures rendered next to the CSV/JSONL outputs of an experiment."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["save_figure", "plot_paths", "plot_filter", "plot_residuals", "plot_comparison",
           "plot_grid_density", "plot_projection", "plot_girsanov", "plot_assumptions"]

_STYLE = {
    "figure.figsize": (6.4, 4.0),
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 120,
}


def save_figure(fig, file) -> Path:
    """Write a PNG without time-dependent metadata and close the figure."""
    file = Path(file)
    fig.tight_layout()
    fig.savefig(file, format="png", metadata={"Software": None})
    plt.close(fig)
    return file


def _fig(nrows=1, ncols=1, **kw):
    with plt.rc_context(_STYLE):
        return plt.subplots(nrows, ncols, **kw)


def plot_paths(t, x, y, file, title="sample paths"):
    fig, (a0, a1) = _fig(2, 1, sharex=True)
    for k in range(x.shape[1]):
        a0.plot(t, x[:, k], lw=0.8, label=f"x{k + 1}")
    for k in range(y.shape[1]):
        a1.plot(t, y[:, k], lw=0.8, label=f"y{k + 1}")
    a0.set_ylabel("signal")
    a1.set_ylabel("observation")
    a1.set_xlabel("t")
    a0.set_title(title)
    a0.legend(fontsize=7)
    return save_figure(fig, file)


def plot_filter(t, P, names, ess, n_particles, file):
    fig, (a0, a1) = _fig(2, 1, sharex=True)
    for j, nm in enumerate(names):
        a0.plot(t, P[:, j], lw=0.8, label=nm)
    a0.set_ylabel("P_t(phi)")
    a0.legend(fontsize=6, ncol=2)
    a1.plot(t, ess / n_particles, lw=0.8, color="k")
    a1.set_ylabel("ESS / M")
    a1.set_xlabel("t")
    a1.set_ylim(0, 1.05)
    return save_figure(fig, file)


def plot_residuals(t, R, names, file, title):
    fig, ax = _fig()
    for j, nm in enumerate(names):
        ax.plot(t, R[:, j], lw=0.7, label=nm)
    ax.set_xlabel("t")
    ax.set_ylabel("R_t")
    ax.set_title(title)
    ax.legend(fontsize=6, ncol=2)
    return save_figure(fig, file)


def plot_comparison(t, oracle_mean, filter_mean, oracle_var, filter_var, file, oracle_label="oracle"):
    fig, (a0, a1) = _fig(2, 1, sharex=True)
    a0.plot(t, oracle_mean, color="k", lw=1.0, label=oracle_label)
    a0.plot(t, filter_mean, color="C1", lw=0.8, ls="--", label="particle filter")
    a0.set_ylabel("posterior mean")
    a0.legend(fontsize=7)
    a1.plot(t, oracle_var, color="k", lw=1.0)
    a1.plot(t, filter_var, color="C1", lw=0.8, ls="--")
    a1.set_ylabel("posterior variance")
    a1.set_xlabel("t")
    return save_figure(fig, file)


def plot_grid_density(mesh, density, particles, weights, file):
    fig, ax = _fig()
    ax.plot(mesh, density, color="k", lw=1.0, label="grid density")
    edges = np.linspace(mesh[0], mesh[-1], 81)
    # mass per bin divided by bin width gives the unnormalized density
    ax.hist(particles, bins=edges, weights=weights / len(weights) / (edges[1] - edges[0]), color="C1",
            alpha=0.5, label="particles")
    ax.set_xlabel("x")
    ax.set_ylabel("unnormalized density")
    ax.legend(fontsize=7)
    return save_figure(fig, file)


def plot_projection(reports, file):
    fig, ax = _fig()
    pos = 0
    ticks, labels = [], []
    for rep in reports:
        for b in rep["bins"]:
            ax.errorbar(pos, b["discrepancy"], yerr=3 * b["se"], fmt="o", ms=3,
                        color="C0" if b["passed"] else "C3")
            pos += 1
        ticks.append(pos - len(rep["bins"]) / 2 - 0.5)
        labels.append(rep["fixture"])
        pos += 1
    ax.axhline(0.0, color="k", lw=0.6)
    ax.set_xticks(ticks)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("bin discrepancy (+-3 SE)")
    return save_figure(fig, file)


def plot_girsanov(means, ses, file):
    fig, ax = _fig()
    r = np.arange(len(means))
    ax.errorbar(r, means, yerr=3 * np.asarray(ses), fmt="o")
    ax.axhline(1.0, color="k", lw=0.6)
    ax.set_xlabel("replica")
    ax.set_ylabel("mean gamma_T (+-3 SE)")
    return save_figure(fig, file)


def plot_assumptions(names, ratios, file):
    fig, ax = _fig()
    ax.bar(np.arange(len(names)), ratios, color="C0")
    ax.axhline(1.0, color="C3", lw=0.8)
    ax.set_xticks(np.arange(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel("max lhs / rhs")
    return save_figure(fig, file)
