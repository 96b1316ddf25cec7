"""Matplotlib renderings of a synthetic run, written next to the CSV/JSON
outputs.  Figures are a convenience view of the exported data; the CSVs stay
the canonical record."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_curves_figure(report, path) -> None:
    epochs = [row["epoch"] for row in report.epochs]
    if not epochs:
        return
    loss = [row["train_loss"] for row in report.epochs]
    mapr = [row["map_at_r"] for row in report.epochs]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.plot(epochs, loss, color="tab:red")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax2.plot(epochs, mapr, color="tab:blue")
    ax2.axvline(report.best_epoch, color="gray", ls="--", lw=0.8)
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("MAP@R (eval)")
    fig.suptitle(f"pooling={report.config['pooling']} "
                 f"zsr={report.config['zsr_enabled']} seed={report.seed}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_geometry_figure(report, path) -> None:
    """Embedding scatter with token overlay; 2-D runs only."""
    if report.config["token_dim"] != 2:
        return
    emb = np.asarray(report.final["embeddings"])
    labs = np.asarray(report.final["embedding_labels"])
    tokens = np.asarray(report.final["tokens"])
    n_classes = report.config["n_classes"]
    tpc = report.config["tokens_per_class"]
    shared_base = n_classes * tpc

    fig, ax = plt.subplots(figsize=(5, 5))
    cmap = plt.get_cmap("tab20")
    for c in range(n_classes):
        pts = emb[labs == c]
        ax.scatter(pts[:, 0], pts[:, 1], s=8, color=cmap(c % 20), alpha=0.7,
                   label=None)
        tok = tokens[c * tpc:(c + 1) * tpc]
        ax.scatter(tok[:, 0], tok[:, 1], s=40, color=cmap(c % 20), marker="x")
    shared = tokens[shared_base:]
    ax.scatter(shared[:, 0], shared[:, 1], s=70, color="black", marker="*",
               label="shared tokens")
    ax.legend(loc="upper right", fontsize=7)
    ax.set_title(f"pooled embeddings ({report.config['pooling']})")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
