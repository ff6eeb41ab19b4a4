"""Synthetic tone language with known token durations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..audio import MelParams, mu_law_encode
from ..errors import ConfigError
from .text import TOY_SYMBOLS, Vocabulary


def toy_mel_params():
    return MelParams(frame_length=256, frame_step=128, num_bins=20, sample_rate=4800.0,
                     lower_edge=40.0, upper_edge=2000.0)


@dataclass(frozen=True)
class ToyTask:
    """Token ``k`` is a ``200 + 100 k`` Hz tone lasting ``0.10 + 0.02 k`` seconds."""

    symbols: tuple = TOY_SYMBOLS
    sample_rate: int = 4800
    aligner_rate: int = 40
    base_frequency: float = 200.0
    frequency_step: float = 100.0
    base_duration: float = 0.10
    duration_step: float = 0.02
    silence_duration: float = 0.05
    amplitude: float = 0.5
    min_tokens: int = 3
    max_tokens: int = 8
    window_seconds: float = 0.5
    max_jitter: int = 12
    mel: MelParams = field(default_factory=toy_mel_params)

    def __post_init__(self):
        if self.sample_rate % self.aligner_rate:
            raise ConfigError("sample_rate must be a multiple of aligner_rate")
        top = self.frequency(len(self.symbols) - 1)
        if top >= self.sample_rate / 2:
            raise ConfigError(f"tone at {top} Hz is above Nyquist")

    @property
    def vocab(self):
        return Vocabulary(self.symbols)

    @property
    def num_tokens(self):
        return len(self.symbols)

    @property
    def hop(self):
        """Audio samples per aligner step."""
        return self.sample_rate // self.aligner_rate

    @property
    def window_steps(self):
        return round(self.window_seconds * self.aligner_rate)

    @property
    def max_sequence_length(self):
        return self.max_tokens + 2

    def frequency(self, k):
        return self.base_frequency + self.frequency_step * k

    def nominal_steps(self, token_id):
        """Duration of a vocabulary id in aligner steps (silence is id 0)."""
        seconds = (self.silence_duration if token_id == 0
                   else self.base_duration + self.duration_step * (token_id - 1))
        return max(1, round(seconds * self.aligner_rate))


@dataclass
class GroundTruth:
    waveform: np.ndarray
    durations: np.ndarray
    total_steps: int


def random_symbols(task, rng):
    n = int(rng.integers(task.min_tokens, task.max_tokens + 1))
    return [task.symbols[k] for k in rng.integers(0, task.num_tokens, size=n)]


def synthesize_ground_truth(token_ids, task, rng=None, stochastic=False):
    """Render tone segments for ``token_ids`` and return the mu-law waveform.

    With ``stochastic`` each token's duration is scaled by an independent
    factor in [0.9, 1.1] before rounding to whole aligner steps.
    """
    durations = np.array([task.nominal_steps(int(t)) for t in token_ids], dtype=np.int64)
    if stochastic:
        rng = rng if rng is not None else np.random.default_rng()
        scale = rng.uniform(0.9, 1.1, size=len(durations))
        durations = np.maximum(1, np.round(durations * scale)).astype(np.int64)
    pieces = []
    for t, d in zip(token_ids, durations):
        n = int(d) * task.hop
        if int(t) == 0:
            pieces.append(np.zeros(n))
        else:
            time = np.arange(n) / task.sample_rate
            pieces.append(task.amplitude * np.sin(2 * np.pi * task.frequency(int(t) - 1) * time))
    linear = np.concatenate(pieces) if pieces else np.zeros(0)
    return GroundTruth(waveform=mu_law_encode(linear), durations=durations,
                       total_steps=int(durations.sum()))


@dataclass
class Batch:
    ids: np.ndarray
    lengths: np.ndarray
    truths: list

    @property
    def total_steps(self):
        return np.array([g.total_steps for g in self.truths], dtype=np.float64)


def make_batch(task, rng, batch_size, stochastic=False, symbol_lists=None):
    """Random utterances, silence padded and stacked to a common length."""
    vocab = task.vocab
    if symbol_lists is None:
        symbol_lists = [random_symbols(task, rng) for _ in range(batch_size)]
    seqs = [[0] + [vocab.id_of(s) for s in syms] + [0] for syms in symbol_lists]
    width = max(len(s) for s in seqs)
    ids = np.zeros((len(seqs), width), dtype=np.int64)
    for b, s in enumerate(seqs):
        ids[b, :len(s)] = s
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    truths = [synthesize_ground_truth(s, task, rng, stochastic) for s in seqs]
    return Batch(ids=ids, lengths=lengths, truths=truths)
