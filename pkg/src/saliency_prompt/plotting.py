"""Report figures. Uses the non-interactive Agg backend."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}

TERMS = ("cls", "dice", "ce", "ker")


def plot_loss_curve(records, path, smooth: int = 10) -> None:
    """Total and per-term loss against step, with a running mean overlay."""
    steps = np.array([r["step"] for r in records])
    with plt.rc_context(RC):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(8, 3))
        total = np.array([r["total"] for r in records])
        ax0.plot(steps, total, color="0.7", lw=0.8, label="per step")
        if len(total) >= smooth:
            k = np.ones(smooth) / smooth
            ax0.plot(steps[smooth - 1:], np.convolve(total, k, mode="valid"), color="k", lw=1.2,
                     label=f"mean of {smooth}")
        ax0.set_xlabel("step")
        ax0.set_ylabel("total loss")
        ax0.legend(frameon=False)
        for t in TERMS:
            ax1.plot(steps, [r[t] for r in records], lw=0.9, label=t)
        ax1.set_xlabel("step")
        ax1.set_yscale("log")
        ax1.legend(frameon=False, ncol=2)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_kernel_heatmaps(heatmap: np.ndarray, path, max_kernels: int = 100) -> None:
    """Grid of per-kernel average activation maps, shared [0, 1] colour scale."""
    n = min(heatmap.shape[0], max_kernels)
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(rows, cols, figsize=(cols * 0.9, rows * 0.9), squeeze=False)
        for k, ax in enumerate(axes.flat):
            ax.axis("off")
            if k < n:
                ax.imshow(heatmap[k], vmin=0.0, vmax=1.0, cmap="viridis", interpolation="nearest")
        fig.subplots_adjust(wspace=0.05, hspace=0.05, left=0.01, right=0.99, top=0.99, bottom=0.01)
        fig.savefig(path)
        plt.close(fig)
