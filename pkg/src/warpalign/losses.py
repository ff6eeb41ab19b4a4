"""Generator and discriminator losses.

The numpy functions return ``(value, gradient)`` pairs so that each can be
checked against finite differences on its own. The ``*_torch`` variants are
the same formulas written for autograd and are what the trainer uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import DomainError, ShapeError
from .softdtw import DtwConfig, soft_dtw_torch


@dataclass(frozen=True)
class LossWeights:
    lambda_pred: float = 1.0
    lambda_length: float = 0.1

    def __post_init__(self):
        if self.lambda_pred < 0 or self.lambda_length < 0:
            raise DomainError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    adv: float
    pred: float
    length: float
    total: float


def _pair(S_gen, S_gt):
    S_gen = np.asarray(S_gen, dtype=np.float64)
    S_gt = np.asarray(S_gt, dtype=np.float64)
    if S_gen.shape != S_gt.shape or S_gen.ndim != 2:
        raise ShapeError(f"expected equal [T, F] shapes, got {S_gen.shape} and {S_gt.shape}")
    return S_gen, S_gt


def l1_spectrogram_loss(S_gen, S_gt):
    """Frame-aligned L1 loss, summed over frames and averaged over bins.

    Only the bin count normalises the sum, so longer windows give larger losses.
    Returns ``(value, d value / d S_gen)``.
    """
    S_gen, S_gt = _pair(S_gen, S_gt)
    n_bins = S_gen.shape[1]
    diff = S_gen - S_gt
    return float(np.abs(diff).sum() / n_bins), np.sign(diff) / n_bins


def length_loss(lengths, target):
    """Half squared error between the summed token lengths and ``target``.

    ``lengths`` may be a scalar total or the per-token lengths; the gradient has
    the same shape and equals ``sum(lengths) - target`` everywhere.
    """
    if target < 0:
        raise DomainError("target length must be >= 0")
    lengths = np.asarray(lengths, dtype=np.float64)
    gap = float(lengths.sum()) - target
    return 0.5 * gap * gap, np.full_like(lengths, gap)


def hinge_discriminator_loss(d_real, d_fake):
    """Hinge loss for a discriminator; ensembles are averaged."""
    d_real = np.atleast_1d(np.asarray(d_real, dtype=np.float64))
    d_fake = np.atleast_1d(np.asarray(d_fake, dtype=np.float64))
    if not (np.all(np.isfinite(d_real)) and np.all(np.isfinite(d_fake))):
        raise DomainError("discriminator scores must be finite")
    per = np.maximum(0.0, 1.0 - d_real) + np.maximum(0.0, 1.0 + d_fake)
    return float(per.mean())


def adv_generator_loss(d_fake_scores):
    """Negative mean discriminator score on generated samples, with its gradient."""
    scores = np.asarray(d_fake_scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise DomainError("adversarial loss needs at least one score")
    return float(-scores.mean()), np.full_like(scores, -1.0 / scores.size)


def total_generator_loss(adv, pred, length, weights=LossWeights()):
    total = adv + weights.lambda_pred * pred + weights.lambda_length * length
    return LossBreakdown(adv=adv, pred=pred, length=length, total=total)


def l1_spectrogram_loss_torch(S_gen, S_gt):
    """Per-example L1 loss for ``[B, T, F]`` tensors."""
    return (S_gen - S_gt).abs().sum(dim=(-2, -1)) / S_gen.shape[-1]


def length_loss_torch(predicted_total, target):
    return 0.5 * (target - predicted_total) ** 2


def prediction_loss_torch(S_gen, S_gt, mode="dtw", dtw=DtwConfig()):
    """Per-example prediction loss, either frame-aligned L1 or soft-DTW."""
    if mode == "l1":
        return l1_spectrogram_loss_torch(S_gen, S_gt)
    if mode == "dtw":
        return soft_dtw_torch(S_gen, S_gt, dtw)
    raise DomainError(f"unknown prediction loss mode {mode!r}")


def hinge_discriminator_loss_torch(d_real, d_fake):
    return (torch.relu(1.0 - d_real) + torch.relu(1.0 + d_fake)).mean()


def adv_generator_loss_torch(d_fake):
    return -d_fake.mean()
