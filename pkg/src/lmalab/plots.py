"""Figure rendering for the CLI report path.

Figures are diagnostics written next to the CSV artifacts; the CSV files
remain the data contract.  Everything renders through the Agg backend so
runs are headless-safe.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .geometry import EXTERIOR  # noqa: E402


def field_figure(field, path, title, overlay_points=None):
    """Heatmap of a 2D field (profile plot in 1D), masked to the domain."""
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    g = field.grid
    if g.ndim == 1:
        x = g.axes()[0]
        sel = g.mask != EXTERIOR
        ax.plot(x[sel], field.values[sel], lw=1.5)
        ax.set_xlabel("x")
    else:
        x, y = g.axes()
        vals = np.ma.masked_where(g.mask == EXTERIOR, field.values)
        pc = ax.pcolormesh(x, y, vals.T, shading="nearest", cmap="viridis")
        fig.colorbar(pc, ax=ax, shrink=0.85)
        if overlay_points is not None and len(overlay_points):
            ax.plot(overlay_points[:, 0], overlay_points[:, 1], "r.", ms=2)
        ax.set_aspect("equal")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def loglog_fit_figure(x, y, slope, intercept, path, title, xlabel, ylabel):
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    ax.loglog(x, y, "o", ms=5, label="measured")
    xs = np.array([min(x), max(x)])
    ax.loglog(xs, np.exp(intercept) * xs**slope, "-",
              label=f"slope {slope:.3f}")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def delta_figure(ks, deltas, profile, path, title):
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    ax.semilogy(ks, np.maximum(deltas, 1e-18), "o-", label="measured defect")
    if profile is not None and len(profile):
        ax.semilogy(ks, np.maximum(profile, 1e-18), "s--", label="fitted recursion profile")
    ax.set_xlabel("step k")
    ax.set_ylabel("delta_k")
    ax.set_xticks(list(ks))
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def quotients_figure(quotients, path, title):
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    ax.plot(np.arange(1, len(quotients) + 1), quotients, "o-")
    ax.set_xlabel("draw")
    ax.set_ylabel("sup/inf")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
