"""Figures written next to the CSV reports (PNG, headless backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

LOSS_KEYS = ("pred", "length", "adv", "total")


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_loss_curves(metrics, path):
    """One panel per loss component against the training step."""
    steps = np.array([row["step"] for row in metrics])
    keys = [k for k in LOSS_KEYS if any(row[k] != 0.0 for row in metrics)] or ["total"]
    fig, axes = plt.subplots(len(keys), 1, figsize=(6, 2.2 * len(keys)), sharex=True,
                             squeeze=False)
    for ax, key in zip(axes[:, 0], keys):
        ax.plot(steps, [row[key] for row in metrics], lw=0.8)
        ax.set_ylabel(key)
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel("step")
    return _save(fig, path)


def plot_length_histogram(z_totals, path, text=""):
    """Histogram of predicted utterance lengths across latent draws."""
    fig, ax = plt.subplots(figsize=(5, 3))
    z_totals = np.asarray(z_totals, dtype=np.float64)
    ax.hist(z_totals, bins=min(32, max(1, np.unique(z_totals).size)), color="0.4")
    ax.set_xlabel("predicted length (aligner steps)")
    ax.set_ylabel("draws")
    if text:
        ax.set_title(f"text {text!r}, {len(z_totals)} draws")
    return _save(fig, path)


def plot_duration_scatter(true_steps, predicted_steps, path):
    """Predicted against true per-token durations, with the identity line."""
    fig, ax = plt.subplots(figsize=(4, 4))
    true_steps = np.asarray(true_steps, dtype=np.float64)
    ax.scatter(true_steps, predicted_steps, s=6, alpha=0.4)
    hi = float(max(true_steps.max(initial=1.0), np.max(predicted_steps, initial=1.0)))
    ax.plot([0, hi], [0, hi], "k--", lw=0.8)
    ax.set_xlabel("true duration (steps)")
    ax.set_ylabel("predicted duration (steps)")
    return _save(fig, path)


def plot_token_positions(ends, path, symbols=None):
    """Token end positions for each latent draw, one row per draw."""
    ends = np.asarray(ends, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6, 3))
    for n in range(ends.shape[1]):
        ax.plot(ends[:, n], np.arange(ends.shape[0]), ".", ms=2,
                label=None if symbols is None else symbols[n])
    ax.set_xlabel("token end (aligner steps)")
    ax.set_ylabel("latent draw")
    return _save(fig, path)
