"""Figure rendering for the CLI report paths.

Every delimited artifact the CLI writes gets a matplotlib rendering next
to it: per-layer skip-rate heatmaps, training loss curves, and the
penalty-ratio sweep. All figures go straight to files (Agg backend).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .backbone import KINDS
from .lazy import RunStats, skip_rate_table

__all__ = ["render_heatmap", "render_loss_curve", "render_sweep"]


def render_heatmap(stats: RunStats, path):
    """Two panels (attention, feedforward): layers x steps skip rates."""
    fig, axes = plt.subplots(1, len(KINDS), figsize=(10, 3.2), constrained_layout=True)
    for ax, kind in zip(np.atleast_1d(axes), KINDS):
        table = skip_rate_table(stats, kind)
        im = ax.imshow(table, aspect="auto", vmin=0.0, vmax=1.0, cmap="viridis",
                       interpolation="nearest")
        ax.set_title(f"{kind} skip rate")
        ax.set_xlabel("sampling step")
        ax.set_ylabel("layer")
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_loss_curve(trace, path):
    """Total / penalty / distillation loss against training step."""
    steps = [row["step"] for row in trace]
    fig, ax = plt.subplots(figsize=(7, 4), constrained_layout=True)
    ax.plot(steps, [row["total_loss"] for row in trace], label="total", lw=1.5)
    ax.plot(steps, [row["distill_loss"] for row in trace], label="distill", lw=1.0)
    ax.plot(steps, [row["lazy_loss"] for row in trace], label="lazy", lw=1.0)
    ax.set_xlabel("training step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_sweep(rows, path):
    """Laziness per module kind and drift against the penalty ratio."""
    rhos = [row["rho"] for row in rows]
    fig, ax = plt.subplots(figsize=(7, 4), constrained_layout=True)
    ax.plot(rhos, [row["gamma_attn"] for row in rows], "o-", label="attn skip ratio")
    ax.plot(rhos, [row["gamma_feed"] for row in rows], "s-", label="feed skip ratio")
    ax.set_xscale("symlog", linthresh=1e-8)
    ax.set_xlabel("penalty ratio")
    ax.set_ylabel("skip ratio")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    twin = ax.twinx()
    twin.plot(rhos, [row["consistency_error"] for row in rows], "^--", color="gray",
              label="drift vs dense")
    twin.set_ylabel("drift vs dense")
    handles, labels = ax.get_legend_handles_labels()
    h2, l2 = twin.get_legend_handles_labels()
    ax.legend(handles + h2, labels + l2, loc="upper left")
    fig.savefig(path, dpi=150)
    plt.close(fig)
