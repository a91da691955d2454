"""Figures written next to the CSV reports."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_loss_history(history: Sequence, path, title: str = "training loss") -> Path:
    """Per-epoch L_IR, L_UP and total loss on a log axis, with the lr on a twin axis."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        epochs = [r.epoch for r in history]
        ax.plot(epochs, [r.total for r in history], label="total", color="k", lw=1.4)
        ax.plot(epochs, [r.l_ir for r in history], label="L_IR", color="C0", lw=1.0, ls="--")
        ax.plot(epochs, [r.l_up for r in history], label="L_UP", color="C1", lw=1.0, ls=":")
        if history and min(r.total for r in history) > 0:
            ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean absolute error")
        ax.set_title(title)
        lr_ax = ax.twinx()
        lr_ax.step(epochs, [r.lr for r in history], where="post", color="C2", lw=0.8, alpha=0.6)
        lr_ax.set_ylabel("learning rate", color="C2")
        lr_ax.set_yscale("log")
        ax.legend(loc="upper right", frameon=False)
        return _save(fig, path)


def plot_step_losses(losses: Sequence[float], path, baseline: float | None = None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        ax.semilogy(range(1, len(losses) + 1), losses, color="k", lw=1.0)
        if baseline is not None:
            ax.axhline(baseline, color="C3", ls="--", lw=0.8, label="bicubic")
            ax.legend(frameon=False)
        ax.set_xlabel("Adam step")
        ax.set_ylabel("loss")
        return _save(fig, path)


def plot_metric_report(reports: Sequence, path) -> Path:
    """Per-frame PSNR (top) and SSIM (bottom), one line per sequence."""
    with plt.rc_context(STYLE):
        fig, (top, bottom) = plt.subplots(2, 1, figsize=(5.0, 4.2), sharex=True)
        for i, rep in enumerate(reports):
            xs = range(len(rep.psnr))
            top.plot(xs, rep.psnr, marker="o", ms=3, lw=1, color=f"C{i % 10}", label=rep.sequence)
            bottom.plot(xs, rep.ssim, marker="o", ms=3, lw=1, color=f"C{i % 10}")
        top.set_ylabel("PSNR-Y (dB)")
        bottom.set_ylabel("SSIM-Y")
        bottom.set_xlabel("frame")
        if len(reports) <= 8:
            top.legend(frameon=False, ncol=2)
        return _save(fig, path)
