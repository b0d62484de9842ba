"""Report figures rendered straight to files (Agg backend, no display)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..trainer import moving_average  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_stats(stats, path):
    """Box size histograms (defect vs background), aspect ratios, classes per box."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
        edges = np.asarray(stats["size_bins"], dtype=float)
        centers = 0.5 * (edges[:-1] + edges[1:])
        width = np.diff(edges)
        axes[0].bar(centers, stats["size_hist_defect"], width=width, alpha=0.7, label="defect")
        axes[0].bar(centers, stats["size_hist_background"], width=width, alpha=0.7, label="background")
        axes[0].set_xlabel("box size (sqrt of area, px)")
        axes[0].set_ylabel("boxes")
        axes[0].legend(frameon=False)
        a_edges = np.asarray(stats["aspect_bins"], dtype=float)
        axes[1].bar(np.arange(len(stats["aspect_hist"])), stats["aspect_hist"], color="0.4")
        axes[1].set_xticks(np.arange(len(stats["aspect_hist"])))
        axes[1].set_xticklabels([f"{v:.2g}" for v in a_edges[:-1]], rotation=45)
        axes[1].set_xlabel("aspect ratio w/h (bin start)")
        k = stats["classes_per_box_hist"]
        axes[2].bar(np.arange(1, len(k) + 1), k, color="0.4")
        axes[2].set_xlabel("classes per box")
        return _save(fig, path)


def plot_rewards(records, path, window=20, title="search"):
    """Reward per sampled architecture with a moving average; epsilon on a twin axis when present."""
    rewards = np.array([r["reward"] for r in records], dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7, 3.4))
        x = np.arange(len(rewards))
        ax.plot(x, rewards, ".", ms=3, color="0.55", label="reward")
        if len(rewards):
            ax.plot(x, moving_average(rewards, min(window, len(rewards))), color="C0", label=f"mean of last {window}")
        ax.set_xlabel("architecture")
        ax.set_ylabel("reward")
        ax.set_title(title)
        if records and "epsilon" in records[0]:
            tw = ax.twinx()
            tw.step(x, [r["epsilon"] for r in records], where="post", color="C3", lw=1)
            tw.set_ylabel("epsilon", color="C3")
            tw.set_ylim(0, 1.05)
            tw.grid(False)
        ax.legend(frameon=False, loc="lower right")
        return _save(fig, path)


def plot_history(epochs, path, title=""):
    """Train / val / test multi-target accuracy and learning rate per epoch."""
    ep = [e["epoch"] for e in epochs]
    with plt.rc_context(STYLE):
        fig, (ax, lx) = plt.subplots(2, 1, figsize=(6, 4.5), sharex=True, height_ratios=(3, 1))
        for key, label in (("train_acc", "train"), ("val_acc", "val"), ("test_acc", "test")):
            vals = [e.get(key) for e in epochs]
            if any(v is not None for v in vals):
                ax.plot(ep, [np.nan if v is None else v for v in vals], marker="o", ms=3, label=label)
        ax.set_ylabel("multi-target accuracy")
        ax.set_title(title)
        ax.legend(frameon=False)
        lx.semilogy(ep, [e["lr"] for e in epochs], color="0.3")
        lx.set_ylabel("lr")
        lx.set_xlabel("epoch")
        return _save(fig, path)


def plot_grid(cells, path, title="grid"):
    """Heatmap of best validation accuracy over (lr range, batch size)."""
    batches = sorted({c.batch_size for c in cells})
    ranges = []
    for c in cells:
        if (c.eta_max, c.eta_min) not in ranges:
            ranges.append((c.eta_max, c.eta_min))
    grid = np.full((len(ranges), len(batches)), np.nan)
    for c in cells:
        grid[ranges.index((c.eta_max, c.eta_min)), batches.index(c.batch_size)] = c.best_val
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.2 * len(batches) + 2.5, 0.6 * len(ranges) + 1.8))
        im = ax.imshow(grid, vmin=0, vmax=1, cmap="viridis")
        ax.grid(False)
        ax.set_xticks(range(len(batches)))
        ax.set_xticklabels(batches)
        ax.set_yticks(range(len(ranges)))
        ax.set_yticklabels([f"[{hi:.0e}, {lo:.0e}]" for hi, lo in ranges])
        ax.set_xlabel("batch size")
        for i in range(len(ranges)):
            for j in range(len(batches)):
                if np.isfinite(grid[i, j]):
                    ax.text(j, i, f"{grid[i, j]:.2f}", ha="center", va="center", color="w", fontsize=8)
        fig.colorbar(im, ax=ax, label="best val accuracy")
        ax.set_title(title)
        return _save(fig, path)
