"""Figure rendering for the report paths (loss curves, CMC, ablation)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_loss_curves(history: list[dict], path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    losses = [b for e in history for b in e["batch_losses"]]
    ax.plot(losses, lw=0.8, alpha=0.6, label="batch loss")
    per_epoch = [e["mean_loss"] for e in history]
    steps = [len(e["batch_losses"]) for e in history]
    centers = np.cumsum(steps) - np.asarray(steps) / 2
    ax.plot(centers, per_epoch, "o-", color="crimson", label="epoch mean")
    ax.set_xlabel("training step")
    ax.set_ylabel("total loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_cmc(cmc: np.ndarray, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    ranks = np.arange(1, len(cmc) + 1)
    ax.plot(ranks, cmc, "o-")
    ax.set_xlabel("rank")
    ax.set_ylabel("matching rate")
    ax.set_ylim(0, 1.02)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_ablation(rows: list[dict], path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    names = [r["variant"] for r in rows]
    x = np.arange(len(names))
    ax.bar(x - 0.2, [r["rank1"] for r in rows], width=0.4, label="rank-1")
    ax.bar(x + 0.2, [r["map"] for r in rows], width=0.4, label="mAP")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("median over seeds")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
