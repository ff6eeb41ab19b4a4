"""Duration accuracy and latent-driven length variation of a trained model."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .task import make_batch, random_symbols
from .text import preprocess_tokens

EVAL_SEED = 10_007
DEFAULT_TEXT = "aeiokl.jaeio"


@dataclass
class DurationReport:
    token_rows: list = field(default_factory=list)
    predicted_totals: np.ndarray = None
    true_totals: np.ndarray = None
    z_totals: np.ndarray = None
    z_positions: np.ndarray = None
    text: str = ""

    @property
    def relative_errors(self):
        return np.array([r["relative_error"] for r in self.token_rows])

    @property
    def median_relative_error(self):
        return float(np.median(self.relative_errors))

    @property
    def length_correlation(self):
        return float(np.corrcoef(self.predicted_totals, self.true_totals)[0, 1])

    @property
    def distinct_z_totals(self):
        return int(np.unique(self.z_totals).size)

    def summary(self):
        return {
            "utterances": len(self.true_totals),
            "tokens": len(self.token_rows),
            "median_relative_error": self.median_relative_error,
            "length_correlation": self.length_correlation,
            "z_draws": len(self.z_totals),
            "distinct_z_totals": self.distinct_z_totals,
            "z_total_min": float(self.z_totals.min()),
            "z_total_max": float(self.z_totals.max()),
        }


@torch.no_grad()
def predict_token_lengths(model, ids, lengths, noise):
    aligner = model.aligner
    dtype = aligner.embed.weight.dtype
    out = aligner(torch.as_tensor(ids), torch.as_tensor(lengths),
                  torch.as_tensor(noise, dtype=dtype), out_length=1)
    return (out.token_lengths.double().numpy(), out.token_ends.double().numpy(),
            out.predicted_total_length.double().numpy())


def eval_durations(model, task, num_utterances=64, z_draws=128, text=DEFAULT_TEXT,
                   seed=EVAL_SEED):
    """Compare predicted token lengths against the nominal durations.

    Held-out utterances come from a generator seeded independently of training.
    The latent sweep aligns ``text`` under ``z_draws`` different latents.
    """
    rng = np.random.default_rng(seed)
    latent_dim = model.aligner.cfg.latent_dim
    batch = make_batch(task, rng, num_utterances, stochastic=False,
                       symbol_lists=[random_symbols(task, rng) for _ in range(num_utterances)])
    noise = rng.standard_normal((num_utterances, latent_dim))
    lengths, _, totals = predict_token_lengths(model, batch.ids, batch.lengths, noise)
    vocab = task.vocab
    report = DurationReport(text=text)
    for u, truth in enumerate(batch.truths):
        for n, true_steps in enumerate(truth.durations):
            pred = float(lengths[u, n])
            report.token_rows.append({
                "utterance": u, "position": n,
                "symbol": vocab.symbols[int(batch.ids[u, n])],
                "true_steps": int(true_steps), "predicted_steps": pred,
                "relative_error": abs(pred - true_steps) / true_steps,
            })
    report.predicted_totals = totals
    report.true_totals = batch.total_steps

    seq = preprocess_tokens(text, vocab)
    ids = np.repeat(seq.ids[None], z_draws, axis=0)
    true_lengths = np.full(z_draws, seq.true_length)
    z = rng.standard_normal((z_draws, latent_dim))
    _, ends, z_totals = predict_token_lengths(model, ids, true_lengths, z)
    report.z_totals = z_totals
    report.z_positions = ends[:, :seq.true_length]
    return report


def write_duration_report(report, out_dir):
    """Write ``durations.csv``, ``utterance_lengths.csv``, ``z_lengths.csv`` and ``summary.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "durations.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["utterance", "position", "symbol",
                                                "true_steps", "predicted_steps",
                                                "relative_error"])
        writer.writeheader()
        writer.writerows(report.token_rows)
    with open(out_dir / "utterance_lengths.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["utterance", "true_steps", "predicted_steps"])
        for u, (t, p) in enumerate(zip(report.true_totals, report.predicted_totals)):
            writer.writerow([u, int(t), repr(float(p))])
    with open(out_dir / "z_lengths.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["draw", "total_steps"])
        for i, t in enumerate(report.z_totals):
            writer.writerow([i, repr(float(t))])
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for k, v in report.summary().items():
            writer.writerow([k, v])
    return out_dir
