"""Matplotlib figure rendering for batch artifacts.

Figures are rendered straight to files next to the delimited output; there
is no interactive display path.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def render_exploration_curves(episodes: list, path: str) -> None:
    """One exploration-rate-vs-time line per episode."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for ep in episodes:
        curve = np.asarray(ep["curve"])
        ax.plot(curve[:, 0], curve[:, 1], lw=1.0, label=f"seed {ep['seed']}")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("exploration rate")
    ax.set_ylim(0, 1.02)
    ax.axhline(0.95, color="gray", ls="--", lw=0.8)
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_tracked_band(progress: np.ndarray, mean: np.ndarray, std: np.ndarray,
                        path: str, label: str = "") -> None:
    """Mean tracked-feature count with a one-sigma band over progress."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(progress, mean, color="C0", label=label or "mean tracked count")
    ax.fill_between(progress, mean - std, mean + std, color="C0", alpha=0.25)
    ax.set_xlabel("normalized exploration progress")
    ax.set_ylabel("tracked features per frame")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_heatmap(hist: np.ndarray, path: str, title: str = "") -> None:
    """Image-plane histogram of tracked feature locations."""
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(hist, origin="upper", cmap="viridis", aspect="auto")
    fig.colorbar(im, ax=ax, label="normalized density")
    ax.set_xlabel("image x bin")
    ax.set_ylabel("image y bin")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_mode_comparison(rows: list, thresholds: list, path: str) -> None:
    """Grouped bars of success rate per mode and drift threshold."""
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / max(len(thresholds), 1)
    x = np.arange(len(rows))
    for k, th in enumerate(thresholds):
        vals = [r[f"success@{th:g}"] for r in rows]
        ax.bar(x + k * width, vals, width, label=f"drift < {th:g} m")
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels([r["mode"] for r in rows], fontsize=8)
    ax.set_ylabel("success rate")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
