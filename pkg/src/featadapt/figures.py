"""Render run-report curves to PNG files next to the delimited output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

# Stripping the metadata keeps PNG output byte-identical across reruns.
_SAVE_KW = {"dpi": 120, "metadata": {"Software": None}}


def render_adapt_curves(records: list[dict], path) -> None:
    """Two panels: loss terms per epoch, and accuracy diagnostics if present."""
    epochs = [r["epoch"] for r in records]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.4))

    ax_loss.plot(epochs, [r["mean_dis"] for r in records], marker="o", label="dis")
    ax_loss.plot(epochs, [r["mean_div"] for r in records], marker="s", label="div")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss term (epoch mean)")
    ax_loss.legend()
    ax_loss.grid(alpha=0.3)

    has_acc = "target_accuracy" in records[0]
    if has_acc:
        ax_acc.plot(epochs, [r["target_accuracy"] for r in records], marker="o", label="target acc")
        ax_acc.plot(epochs, [r["pseudo_label_accuracy"] for r in records], marker="s", label="pseudo-label acc")
        ax_acc.set_ylim(0.0, 1.0)
        ax_acc.legend()
    else:
        ax_acc.text(0.5, 0.5, "no labeled target:\nno accuracy curves", ha="center", va="center")
        ax_acc.set_xticks([])
        ax_acc.set_yticks([])
    ax_acc.set_xlabel("epoch")
    ax_acc.grid(alpha=0.3)

    fig.tight_layout()
    fig.savefig(Path(path), **_SAVE_KW)
    plt.close(fig)


def render_source_curves(records: list[dict], path) -> None:
    """Training loss and validation accuracy over source fine-tuning."""
    epochs = [r["epoch"] for r in records]
    fig, ax_loss = plt.subplots(figsize=(5.5, 3.4))
    ax_loss.plot(epochs, [r["mean_loss"] for r in records], color="tab:blue", label="train loss")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss", color="tab:blue")
    ax_acc = ax_loss.twinx()
    ax_acc.plot(epochs, [r["val_accuracy"] for r in records], color="tab:orange", label="val acc")
    ax_acc.set_ylabel("validation accuracy", color="tab:orange")
    ax_acc.set_ylim(0.0, 1.0)
    fig.tight_layout()
    fig.savefig(Path(path), **_SAVE_KW)
    plt.close(fig)
