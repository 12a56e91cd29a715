"""Figure rendering for the report-style CLI outputs.

Every plot function takes the same rows its CSV twin is written from and
renders a PNG next to it, using the Agg backend so the CLI works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_training(metrics: list[tuple], path: str | Path) -> None:
    """Loss terms and learning rate over epochs."""
    rows = np.asarray(metrics, dtype=float)
    fig, (ax, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    epochs = rows[:, 0]
    for col, label in ((1, "L_k"), (2, "L_F"), (3, "L_A"), (4, "total")):
        ax.plot(epochs, rows[:, col], label=label)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    ax2.plot(epochs, rows[:, 5])
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("learning rate")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_ga_bench(rows: list[tuple], path: str | Path) -> None:
    """Wall time of the one-call vs |G|-call averaging, per group."""
    labels = [f"{r[0]} (|G|={r[1]})" for r in rows]
    eff = [r[3] for r in rows]
    naive = [r[4] for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(max(5, 1.0 * len(rows)), 3.8))
    ax.bar(x - 0.2, eff, width=0.4, label="single-call")
    ax.bar(x + 0.2, naive, width=0.4, label="per-element")
    ax.set_yscale("log")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("seconds / evaluation")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_steps_sweep(rows: list[tuple], path: str | Path) -> None:
    """Match rate and RMSE as a function of integration steps."""
    rows = sorted(rows)
    steps = [r[0] for r in rows]
    mr = [r[1] for r in rows]
    rmse = [r[2] for r in rows]
    fig, (ax, ax2) = plt.subplots(2, 1, figsize=(5, 5), sharex=True)
    ax.plot(steps, mr, marker="o")
    ax.set_ylabel("match rate (%)")
    ax2.plot(steps, rmse, marker="o", color="tab:orange")
    ax2.set_xscale("log")
    ax2.set_xlabel("integration steps")
    ax2.set_ylabel("RMSE (frac.)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_ablation(rows: list[tuple], path: str | Path) -> None:
    """Held-out match rate per ablation cell; one dot per seed, bar = mean."""
    names = []
    for r in rows:
        if r[0] not in names:
            names.append(r[0])
    fig, ax = plt.subplots(figsize=(5, 3.8))
    for i, name in enumerate(names):
        vals = [r[4] for r in rows if r[0] == name]
        ax.bar(i, float(np.mean(vals)), width=0.6, alpha=0.6)
        ax.plot([i] * len(vals), vals, "k.", markersize=8)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("match rate (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
