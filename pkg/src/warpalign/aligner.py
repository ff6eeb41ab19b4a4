"""Monotonic interpolation aligner.

Tokens are embedded and passed through a stack of masked dilated convolutions
whose normalisation layers are modulated by the latent and speaker vectors. A
small head predicts a non-negative length per token; cumulative sums of the
lengths give token end and centre positions, and each output step takes a
softmax-weighted mix of token features based on its squared distance to the
centres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .errors import ConfigError, DomainError

MASKED_LOGIT = 1e9
TRAIN_TOKENS = 400
SAMPLE_TOKENS = 600
TRAIN_STEPS = 400
SAMPLE_STEPS = 6000


@dataclass
class TokenSequence:
    """Token ids padded to a fixed length, with the true (unpadded) length."""

    ids: np.ndarray
    true_length: int
    vocab_size: int

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.vocab_size < 1:
            raise DomainError("vocab_size must be positive")
        if not 0 <= self.true_length <= self.ids.shape[0]:
            raise DomainError(
                f"true_length {self.true_length} exceeds padded length {self.ids.shape[0]}")
        bad = np.flatnonzero((self.ids < 0) | (self.ids >= self.vocab_size))
        if bad.size:
            i = int(bad[0])
            raise DomainError(f"token id {self.ids[i]} at position {i} is outside "
                              f"[0, {self.vocab_size})")

    @property
    def padded_length(self):
        return self.ids.shape[0]

    def mask(self):
        return (np.arange(self.padded_length) < self.true_length).astype(np.int64)

    def is_silence_padded(self, silence_id):
        return (self.true_length >= 2 and self.ids[0] == silence_id
                and self.ids[self.true_length - 1] == silence_id)


@dataclass
class Conditioning:
    """Latent noise and speaker embedding, 128 dimensions each by default."""

    latent: np.ndarray
    speaker_embedding: np.ndarray

    def __post_init__(self):
        self.latent = np.asarray(self.latent, dtype=np.float64)
        self.speaker_embedding = np.asarray(self.speaker_embedding, dtype=np.float64)
        for name in ("latent", "speaker_embedding"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DomainError(f"{name} must be finite")

    @classmethod
    def sample(cls, rng, speaker_embedding, latent_dim=128):
        return cls(rng.standard_normal(latent_dim), speaker_embedding)

    def as_tensor(self, dtype=torch.float32):
        return torch.as_tensor(np.concatenate([self.speaker_embedding, self.latent]),
                               dtype=dtype)


@dataclass
class AlignerOutput:
    features: torch.Tensor
    token_lengths: torch.Tensor
    token_ends: torch.Tensor
    token_centres: torch.Tensor
    weights: torch.Tensor
    predicted_total_length: torch.Tensor
    mask: torch.Tensor
    unaligned_features: torch.Tensor | None = None
    degenerate: bool = False


@dataclass(frozen=True)
class AlignerConfig:
    vocab_size: int
    channels: int = 256
    num_blocks: int = 10
    dilations: tuple = ((1, 2), (4, 8), (16, 32))
    kernel_size: int = 3
    latent_dim: int = 128
    speaker_dim: int = 128
    num_speakers: int = 1
    sigma2: float = 10.0
    norm: str = "affine"
    cond_gain: float = 0.1
    length_unit: float = 1.0
    length_bias: float = 0.0

    def __post_init__(self):
        if self.norm not in ("affine", "batch"):
            raise ConfigError(f"norm must be 'affine' or 'batch', got {self.norm!r}")
        if self.sigma2 <= 0:
            raise ConfigError("sigma2 must be positive")
        if self.length_unit <= 0:
            raise ConfigError("length_unit must be positive")

    @classmethod
    def toy(cls, vocab_size, **overrides):
        return cls(vocab_size=vocab_size, **{"channels": 64, "num_blocks": 2, **overrides})

    @property
    def cond_dim(self):
        return self.latent_dim + self.speaker_dim

    @property
    def receptive_field(self):
        span = sum(a + b for a, b in self.dilations) * (self.kernel_size - 1)
        return 1 + self.num_blocks * span


def init_orthogonal(module, gain=1.0):
    for m in module.modules():
        if isinstance(m, (nn.Conv1d, nn.ConvTranspose1d, nn.Linear)):
            nn.init.orthogonal_(m.weight, gain=gain)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.orthogonal_(m.weight)


class ConditionalNorm(nn.Module):
    """Per-channel standardisation with a scale and shift predicted from ``cond``.

    ``affine`` mode standardises each example over its own valid positions.
    ``batch`` mode uses statistics pooled over the batch while training and
    running averages otherwise.
    """

    def __init__(self, channels, cond_dim, mode="affine", eps=1e-5, momentum=0.1):
        super().__init__()
        self.mode = mode
        self.eps = eps
        self.momentum = momentum
        self.gain = nn.Linear(cond_dim, channels)
        self.shift = nn.Linear(cond_dim, channels)
        if mode == "batch":
            self.register_buffer("running_mean", torch.zeros(channels))
            self.register_buffer("running_var", torch.ones(channels))
            self.register_buffer("num_batches", torch.zeros((), dtype=torch.long))

    def _stats(self, x, mask):
        if self.mode == "affine":
            count = mask.sum(-1, keepdim=True).clamp_min(1.0)
            mean = (x * mask).sum(-1, keepdim=True) / count
            var = (((x - mean) * mask) ** 2).sum(-1, keepdim=True) / count
            return mean, var
        if not self.training:
            return self.running_mean[None, :, None], self.running_var[None, :, None]
        count = mask.sum().clamp_min(1.0)
        mean = (x * mask).sum((0, 2)) / count
        var = (((x - mean[None, :, None]) * mask) ** 2).sum((0, 2)) / count
        with torch.no_grad():
            if self.momentum is None:
                self.num_batches += 1
                rate = 1.0 / float(self.num_batches)
            else:
                rate = self.momentum
            self.running_mean.lerp_(mean.detach().to(self.running_mean.dtype), rate)
            self.running_var.lerp_(var.detach().to(self.running_var.dtype), rate)
        return mean[None, :, None], var[None, :, None]

    def forward(self, x, mask, cond):
        mean, var = self._stats(x, mask)
        x_hat = (x - mean) / torch.sqrt(var + self.eps)
        return x_hat * (1.0 + self.gain(cond)[..., None]) + self.shift(cond)[..., None]


class MaskedConv1d(nn.Conv1d):
    """Same-length dilated convolution that zeroes padded inputs first."""

    def __init__(self, in_channels, out_channels, kernel_size=3, dilation=1):
        super().__init__(in_channels, out_channels, kernel_size, dilation=dilation,
                         padding=dilation * (kernel_size - 1) // 2)

    def forward(self, x, mask):
        return super().forward(x * mask)


class ResidualBlock(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        c = cfg.channels
        self.norms = nn.ModuleList()
        self.convs = nn.ModuleList()
        for a, b in cfg.dilations:
            for d in (a, b):
                self.norms.append(ConditionalNorm(c, cfg.cond_dim, cfg.norm))
                self.convs.append(MaskedConv1d(c, c, cfg.kernel_size, d))

    def forward(self, x, mask, cond):
        for k in range(0, len(self.convs), 2):
            inputs = x
            x = self.convs[k](F.relu(self.norms[k](x, mask, cond)), mask)
            x = self.convs[k + 1](F.relu(self.norms[k + 1](x, mask, cond)), mask)
            x = x + inputs
        return x


class LengthHead(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        c = cfg.channels
        self.norm1 = ConditionalNorm(c, cfg.cond_dim, cfg.norm)
        self.proj1 = nn.Conv1d(c, c, 1)
        self.norm2 = ConditionalNorm(c, cfg.cond_dim, cfg.norm)
        self.proj2 = nn.Conv1d(c, 1, 1)
        self.unit = cfg.length_unit

    def preactivation(self, x, mask, cond):
        x = self.proj1(F.relu(self.norm1(x, mask, cond)))
        return self.proj2(F.relu(self.norm2(x, mask, cond)))[:, 0]

    def forward(self, x, mask, cond):
        return self.unit * F.relu(self.preactivation(x, mask, cond))


def sequence_mask(lengths, max_length):
    return torch.arange(max_length, device=lengths.device)[None, :] < lengths[:, None]


def positions_from_lengths(token_lengths, true_lengths):
    """Token end and centre positions from per-token lengths.

    Args:
        token_lengths: ``[B, N]`` non-negative lengths.
        true_lengths: ``[B]`` number of valid tokens per row.

    Returns:
        ``(ends, centres, total)`` where ``total`` is the last valid end.
    """
    ends = torch.cumsum(token_lengths, dim=-1)
    centres = ends - token_lengths / 2.0
    last = (true_lengths - 1).clamp_min(0).long()
    total = ends.gather(-1, last[:, None])[:, 0]
    total = torch.where(true_lengths > 0, total, torch.zeros_like(total))
    return ends, centres, total


def interpolation_weights(centres, mask, out_offset, out_length, sigma2=10.0):
    """Gaussian-kernel softmax weights ``[B, S, N]`` for grid steps ``t + offset``."""
    offset = torch.as_tensor(out_offset, device=centres.device)
    if offset.ndim == 0:
        offset = offset.expand(centres.shape[0])
    positions = (torch.arange(out_length, device=centres.device)[None, :]
                 + offset[:, None]).to(centres.dtype)
    diff = centres[:, None, :] - positions[:, :, None]
    logits = -(diff ** 2) / sigma2
    logits = logits - MASKED_LOGIT * (1.0 - mask[:, None, :].to(centres.dtype))
    return torch.softmax(logits, dim=-1)


def interpolate(features, centres, mask, out_offset, out_length, sigma2=10.0):
    """Aligned features ``[B, S, D]`` and the weights that produced them."""
    weights = interpolation_weights(centres, mask, out_offset, out_length, sigma2)
    return torch.einsum("bsn,bnd->bsd", weights, features), weights


class Aligner(nn.Module):
    """Token sequence plus conditioning to an audio-rate feature grid."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.channels)
        self.speakers = nn.Embedding(cfg.num_speakers, cfg.speaker_dim)
        self.blocks = nn.ModuleList(ResidualBlock(cfg) for _ in range(cfg.num_blocks))
        self.length_head = LengthHead(cfg)
        init_orthogonal(self)
        nn.init.constant_(self.length_head.proj2.bias, cfg.length_bias)
        for m in self.modules():
            if isinstance(m, ConditionalNorm):
                nn.init.orthogonal_(m.gain.weight, gain=cfg.cond_gain)
                nn.init.orthogonal_(m.shift.weight, gain=cfg.cond_gain)

    def condition(self, noise, speaker_ids=None):
        if speaker_ids is None:
            speaker_ids = torch.zeros(noise.shape[0], dtype=torch.long, device=noise.device)
        return torch.cat([self.speakers(speaker_ids), noise], dim=-1)

    def encode(self, ids, mask, cond):
        """Unaligned token features ``[B, N, C]``."""
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.cfg.vocab_size):
            raise DomainError(f"token ids must lie in [0, {self.cfg.vocab_size})")
        m = mask[:, None, :].to(self.embed.weight.dtype)
        x = self.embed(ids).transpose(1, 2)
        for block in self.blocks:
            x = block(x, m, cond)
        return x.transpose(1, 2)

    def predict_lengths(self, features, mask, cond):
        m = mask[:, None, :].to(features.dtype)
        return self.length_head(features.transpose(1, 2), m, cond) * m[:, 0]

    def forward(self, ids, true_lengths, noise, speaker_ids=None, out_offset=0,
                out_length=None):
        """Align a padded batch.

        Args:
            ids: ``[B, N]`` token ids.
            true_lengths: ``[B]`` valid token counts.
            noise: ``[B, latent_dim]`` latent vectors.
            out_offset: first output step (scalar or ``[B]``); 0 at inference.
            out_length: number of output steps; when ``None`` the grid covers the
                longest predicted utterance (at least one step).
        """
        mask = sequence_mask(true_lengths, ids.shape[1])
        cond = self.condition(noise, speaker_ids)
        features = self.encode(ids, mask, cond)
        lengths = self.predict_lengths(features, mask, cond)
        ends, centres, total = positions_from_lengths(lengths, true_lengths)
        degenerate = bool((total <= 0).any())
        if out_length is None:
            out_length = max(1, math.ceil(float(total.detach().max())))
        aligned, weights = interpolate(features, centres, mask, out_offset, out_length,
                                       self.cfg.sigma2)
        return AlignerOutput(features=aligned, token_lengths=lengths, token_ends=ends,
                             token_centres=centres, weights=weights,
                             predicted_total_length=total, mask=mask,
                             unaligned_features=features, degenerate=degenerate)


def align(seq, cond, model, window=None):
    """Align one :class:`TokenSequence` under fixed :class:`Conditioning`.

    ``window`` is ``(offset, length)`` in output steps; ``None`` produces the
    full utterance from offset 0.
    """
    dtype = model.embed.weight.dtype
    ids = torch.as_tensor(seq.ids)[None]
    lengths = torch.tensor([seq.true_length])
    noise = torch.as_tensor(cond.latent, dtype=dtype)[None]
    offset, length = (0, None) if window is None else window
    cond_vec = torch.cat([torch.as_tensor(cond.speaker_embedding, dtype=dtype)[None], noise], -1)
    mask = sequence_mask(lengths, ids.shape[1])
    features = model.encode(ids, mask, cond_vec)
    token_lengths = model.predict_lengths(features, mask, cond_vec)
    ends, centres, total = positions_from_lengths(token_lengths, lengths)
    degenerate = bool(total[0] <= 0)
    if length is None:
        length = max(1, math.ceil(float(total[0].detach())))
    aligned, weights = interpolate(features, centres, mask, offset, length, model.cfg.sigma2)
    return AlignerOutput(features=aligned, token_lengths=token_lengths, token_ends=ends,
                         token_centres=centres, weights=weights,
                         predicted_total_length=total, mask=mask,
                         unaligned_features=features, degenerate=degenerate)


@torch.no_grad()
def recompute_standing_statistics(model, batches):
    """Replace batch-norm running statistics by their average over ``batches``.

    ``batches`` yields keyword dicts for ``model.forward``. Only meaningful in
    ``batch`` normalisation mode; otherwise a no-op.
    """
    norms = [m for m in model.modules() if isinstance(m, ConditionalNorm) and m.mode == "batch"]
    if not norms:
        return 0
    saved = [m.momentum for m in norms]
    for m in norms:
        m.running_mean.zero_()
        m.running_var.zero_()
        m.num_batches.zero_()
        m.momentum = None
    was_training = model.training
    model.train()
    n = 0
    for kwargs in batches:
        model(**kwargs)
        n += 1
    for m, momentum in zip(norms, saved):
        m.momentum = momentum
    model.train(was_training)
    return n


__all__ = [
    "TokenSequence", "Conditioning", "AlignerOutput", "AlignerConfig", "Aligner",
    "ConditionalNorm", "MaskedConv1d", "positions_from_lengths", "interpolate",
    "interpolation_weights", "sequence_mask", "align", "init_orthogonal",
    "recompute_standing_statistics",
]
