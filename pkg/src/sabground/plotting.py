"""Figures written next to the tab-separated reports."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _style(ax):
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    ax.tick_params(labelsize=9)


def plot_training(history, evals, path):
    """Loss and batch mIoU per logged step, with held-in evaluations overlaid."""
    fig, (ax_loss, ax_iou) = plt.subplots(1, 2, figsize=(9, 3.2))
    steps = [r["step"] for r in history]
    ax_loss.plot(steps, [r["loss"] for r in history], lw=1.2, color="0.2")
    ax_loss.set_xlabel("step")
    ax_loss.set_ylabel("combined loss")
    ax_iou.plot(steps, [r["miou"] for r in history], lw=1.0, color="0.6", label="batch")
    if evals:
        es, ev = zip(*evals)
        ax_iou.plot(es, ev, "o-", ms=3, lw=1.2, color="C0", label="held-in slice")
    ax_iou.set_ylim(0, 1)
    ax_iou.set_xlabel("step")
    ax_iou.set_ylabel("mIoU")
    ax_iou.legend(frameon=False, fontsize=8)
    for ax in (ax_loss, ax_iou):
        _style(ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_ladder(rungs, title, path):
    """Mean mIoU per rung with one-std error bars and per-seed points."""
    fig, ax = plt.subplots(figsize=(1.3 * len(rungs) + 2, 3.4))
    x = np.arange(len(rungs))
    means = [r.mean for r in rungs]
    stds = [r.std for r in rungs]
    ax.bar(x, means, yerr=stds, color="0.75", edgecolor="0.3", capsize=4, width=0.6)
    for i, r in enumerate(rungs):
        ax.scatter(np.full(len(r.scores), i) + np.linspace(-0.12, 0.12, len(r.scores)), r.scores, s=10, color="C0", zorder=3)
    ax.set_xticks(x)
    ax.set_xticklabels([r.label for r in rungs], rotation=20, ha="right")
    ax.set_ylim(0, 1)
    ax.set_ylabel("mIoU")
    ax.set_title(title, fontsize=10)
    _style(ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_channel_montage(maps, mask, gate, path, cols=8):
    """Per-channel feature maps with the gate weight in each title, plus the predicted mask."""
    n = len(maps) + 1
    rows = int(np.ceil(n / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(1.4 * cols, 1.5 * rows))
    axes = np.atleast_1d(axes).ravel()
    for i, ax in enumerate(axes):
        ax.axis("off")
        if i < len(maps):
            ax.imshow(maps[i], cmap="gray", vmin=0, vmax=1)
            if gate is not None and i < len(gate):
                ax.set_title(f"{i}: {gate[i]:.2f}", fontsize=7)
        elif i == len(maps):
            ax.imshow(mask, cmap="gray", vmin=0, vmax=1)
            ax.set_title("mask", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
