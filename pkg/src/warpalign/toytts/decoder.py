"""Upsampling decoder from aligned features to mu-law audio."""

from __future__ import annotations

import math

import torch
from torch import nn

from ..aligner import Aligner, AlignerConfig, init_orthogonal
from ..errors import ConfigError


class ToyDecoder(nn.Module):
    """Stacked non-overlapping transposed convolutions, one per upsampling factor.

    Each aligned step is expanded independently into ``prod(factors)`` samples,
    so decoding a window gives exactly the same samples as slicing a full
    decode. The output passes through ``tanh`` into [-1, 1].
    """

    def __init__(self, in_channels, factors=(4, 5, 6), channels=(64, 32, 16),
                 upsample=None):
        super().__init__()
        if len(channels) != len(factors):
            raise ConfigError("need one channel width per upsampling stage")
        if upsample is not None and math.prod(factors) != upsample:
            raise ConfigError(f"factors {factors} do not multiply to {upsample}")
        self.factors = tuple(factors)
        layers = []
        c_in = in_channels
        for f, c in zip(factors, channels):
            layers += [nn.ConvTranspose1d(c_in, c, kernel_size=f, stride=f),
                       nn.LeakyReLU(0.2),
                       nn.Conv1d(c, c, 1),
                       nn.LeakyReLU(0.2)]
            c_in = c
        layers.append(nn.Conv1d(c_in, 1, 1))
        self.net = nn.Sequential(*layers)
        init_orthogonal(self)

    @property
    def upsample(self):
        return math.prod(self.factors)

    def forward(self, features):
        """``[B, S, D]`` aligned features to ``[B, S * upsample]`` samples."""
        return torch.tanh(self.net(features.transpose(1, 2))[:, 0])


def _factorizations(n, stages, smallest=2):
    if stages == 1:
        if n >= smallest:
            yield (n,)
        return
    for d in range(smallest, int(round(n ** (1.0 / stages))) + 1):
        if n % d == 0:
            for rest in _factorizations(n // d, stages - 1, d):
                yield (d, *rest)


def stage_factors(upsample, stages=3):
    """Split ``upsample`` into ``stages`` factors, each at least 2, as evenly as possible."""
    options = list(_factorizations(upsample, stages))
    if not options:
        raise ConfigError(f"cannot factor {upsample} into {stages} stages of at least 2")
    return min(options, key=lambda f: (f[-1] / f[0], f))


class ToyGenerator(nn.Module):
    """Aligner followed by the upsampling decoder."""

    def __init__(self, aligner_cfg, upsample=120, decoder_channels=(64, 32, 16)):
        super().__init__()
        self.aligner = Aligner(aligner_cfg)
        self.decoder = ToyDecoder(aligner_cfg.channels, stage_factors(upsample),
                                  decoder_channels, upsample)

    @classmethod
    def for_task(cls, task, norm="affine", **aligner_overrides):
        cfg = AlignerConfig.toy(len(task.vocab), norm=norm, **aligner_overrides)
        return cls(cfg, upsample=task.hop)

    def forward(self, ids, lengths, noise, out_offset=0, out_length=None):
        out = self.aligner(ids, lengths, noise, out_offset=out_offset, out_length=out_length)
        return self.decoder(out.features), out
