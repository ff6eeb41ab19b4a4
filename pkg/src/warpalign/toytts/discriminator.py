"""Small random-window scorers for exercising the adversarial losses."""

from __future__ import annotations

import torch
from torch import nn

from ..aligner import init_orthogonal
from ..audio import RWD_SIZES


def scaled_rwd_sizes(sample_rate, reference_rate=24000):
    return tuple(max(8, s * sample_rate // reference_rate) for s in RWD_SIZES)


class WindowScorer(nn.Module):
    """Strided convolutions and global average pooling to one scalar per window."""

    def __init__(self, channels=16, layers=3):
        super().__init__()
        blocks = []
        c_in = 1
        for _ in range(layers):
            blocks += [nn.Conv1d(c_in, channels, 9, stride=4, padding=4), nn.LeakyReLU(0.2)]
            c_in = channels
        self.net = nn.Sequential(*blocks)
        self.out = nn.Linear(channels, 1)
        init_orthogonal(self)

    def forward(self, x):
        return self.out(self.net(x[:, None]).mean(-1))[:, 0]


class RandomWindowEnsemble(nn.Module):
    """One scorer per window size; each scores a random sub-window."""

    def __init__(self, sizes):
        super().__init__()
        self.sizes = tuple(sizes)
        self.scorers = nn.ModuleList(WindowScorer() for _ in self.sizes)

    def forward(self, waveforms, starts):
        """Scores ``[num_sizes, B]`` for windows starting at ``starts[k]``."""
        scores = []
        for scorer, size, start in zip(self.scorers, self.sizes, starts):
            scores.append(scorer(waveforms[:, start:start + size]))
        return torch.stack(scores)

    def draw_starts(self, length, rng):
        return [int(rng.integers(0, length - s + 1)) for s in self.sizes]

