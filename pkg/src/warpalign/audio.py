"""Audio preprocessing: mu-law companding, jitter, windowing and log-mel spectrograms.

Every function here is pure given its inputs and an explicit
``numpy.random.Generator``. The mel pipeline is written with torch so that it
can sit inside a training graph; numpy inputs are evaluated in float64 and
returned as numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DomainError, EmptySpectrogramError, RangeError

MU = 255.0
DEFAULT_SAMPLE_RATE = 24000
TRAINING_WINDOW = 48000
MAX_JITTER = 60
RWD_SIZES = (240, 480, 960, 1920, 3600)
LOG_SCALE = 10000.0


@dataclass
class Waveform:
    """Mono audio. ``mu_law`` tells whether ``samples`` are companded."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    mu_law: bool = True

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DomainError("waveform must be one-dimensional (mono)")
        if self.sample_rate <= 0:
            raise DomainError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise DomainError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class MelParams:
    frame_length: int = 2048
    frame_step: int = 1024
    num_bins: int = 80
    sample_rate: float = 24000.0
    lower_edge: float = 80.0
    upper_edge: float = 7600.0
    pad_end: bool = True

    @property
    def fft_length(self):
        return 1 << (self.frame_length - 1).bit_length()

    @property
    def num_spectrogram_bins(self):
        return self.fft_length // 2 + 1

    def num_frames(self, num_samples):
        if self.pad_end:
            return -(-num_samples // self.frame_step)
        return 1 + (num_samples - self.frame_length) // self.frame_step


@dataclass
class MelSpectrogram:
    """A T x F grid of log-compressed mel magnitudes."""

    values: np.ndarray
    params: MelParams = field(default_factory=MelParams)

    @property
    def num_frames(self):
        return self.values.shape[0]

    @property
    def num_bins(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class WindowSpec:
    offset: int
    length: int = TRAINING_WINDOW


def _check_unit_range(x, what):
    bad = np.flatnonzero(~(np.abs(x) <= 1.0))
    if bad.size:
        i = int(bad[0])
        raise DomainError(f"{what} sample {i} = {x.flat[i]!r} lies outside [-1, 1]")


def mu_law_encode(x, mu=MU):
    """Compand linear samples in [-1, 1] into the mu-law domain."""
    x = np.asarray(x, dtype=np.float64)
    _check_unit_range(x, "linear")
    return np.sign(x) * np.log1p(mu * np.abs(x)) / np.log1p(mu)


def mu_law_decode(t, mu=MU):
    """Invert :func:`mu_law_encode`."""
    t = np.asarray(t, dtype=np.float64)
    _check_unit_range(t, "mu-law")
    return np.sign(t) / mu * ((1.0 + mu) ** np.abs(t) - 1.0)


def _mu_law_decode_torch(t, mu=MU):
    return torch.sign(t) / mu * ((1.0 + mu) ** torch.abs(t) - 1.0)


def apply_jitter(w, max_jitter=MAX_JITTER, rng=None, shift=None):
    """Randomly shift each waveform by up to ``max_jitter`` samples.

    The input is zero-padded by ``max_jitter`` on both sides and cropped back to
    its original length, so ``out[i] == w[i - shift]`` (zero where that index
    falls outside the input). Each row of a batch draws its own shift unless
    ``shift`` is given explicitly.

    Args:
        w: waveform(s), shape ``[n]`` or ``[batch, n]``; numpy or torch.
        max_jitter: maximum absolute shift in samples.
        rng: ``numpy.random.Generator`` used to draw shifts.
        shift: optional fixed shift (int or one per row) in
            ``[-max_jitter, max_jitter]``.
    """
    if max_jitter < 0:
        raise DomainError("max_jitter must be >= 0")
    is_torch = isinstance(w, torch.Tensor)
    squeeze = w.ndim == 1
    batch = w[None] if squeeze else w
    n_rows, n = batch.shape
    if max_jitter == 0:
        return w
    if shift is None:
        rng = rng if rng is not None else np.random.default_rng()
        starts = rng.integers(0, 2 * max_jitter + 1, size=n_rows)
    else:
        shifts = np.broadcast_to(np.asarray(shift, dtype=np.int64), (n_rows,))
        if np.any(np.abs(shifts) > max_jitter):
            raise DomainError(f"shift must lie within +-{max_jitter}")
        starts = max_jitter - shifts
    if is_torch:
        padded = F.pad(batch, (max_jitter, max_jitter))
        out = torch.stack([padded[r, s:s + n] for r, s in enumerate(starts)])
    else:
        padded = np.pad(np.asarray(batch), ((0, 0), (max_jitter, max_jitter)))
        out = np.stack([padded[r, s:s + n] for r, s in enumerate(starts)])
    return out[0] if squeeze else out


def post_pad(w, length):
    """Append silence so that ``w`` holds at least ``length`` samples."""
    w = np.asarray(w)
    short = length - w.shape[-1]
    if short <= 0:
        return w
    pad = [(0, 0)] * (w.ndim - 1) + [(0, short)]
    return np.pad(w, pad)


def extract_window(w, spec):
    """Return samples ``[offset, offset + length)`` after silence post-padding."""
    w = post_pad(w, spec.length)
    n = w.shape[-1]
    if spec.offset < 0 or spec.length < 1 or spec.offset + spec.length > n:
        raise RangeError(
            f"window [{spec.offset}, {spec.offset + spec.length}) does not fit "
            f"a source of {n} samples")
    return w[..., spec.offset:spec.offset + spec.length]


def sample_window_offset(source_length, window_length, rng):
    """Uniform offset for a training window over a (post-padded) source."""
    return int(rng.integers(0, max(source_length, window_length) - window_length + 1))


def sample_rwd_windows(w, sizes=RWD_SIZES, rng=None):
    """Draw one uniformly placed sub-window per size for the random-window scorers.

    Returns:
        list of ``(start, sub_window)`` pairs, in the order of ``sizes``.
    """
    rng = rng if rng is not None else np.random.default_rng()
    n = w.shape[-1]
    out = []
    for size in sizes:
        if size > n:
            raise RangeError(f"window of {n} samples is shorter than sub-window {size}")
        start = int(rng.integers(0, n - size + 1))
        out.append((start, w[..., start:start + size]))
    return out


def hertz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def linear_to_mel_weight_matrix(num_mel_bins=80, num_spectrogram_bins=1025,
                                sample_rate=24000.0, lower_edge=80.0,
                                upper_edge=7600.0):
    """Triangular mel filterbank, shape ``[num_spectrogram_bins, num_mel_bins]``.

    Triangles are spaced uniformly on the mel scale between the edges and are
    not area-normalised (each peaks at 1). The DC bin always gets zero weight.
    """
    if not 0.0 <= lower_edge < upper_edge <= sample_rate / 2.0:
        raise DomainError("mel edges must satisfy 0 <= lower < upper <= nyquist")
    linear = np.linspace(0.0, sample_rate / 2.0, num_spectrogram_bins)[1:]
    bins_mel = hertz_to_mel(linear)[:, None]
    edges = np.linspace(hertz_to_mel(lower_edge), hertz_to_mel(upper_edge),
                        num_mel_bins + 2)
    lower, centre, upper = edges[:-2], edges[1:-1], edges[2:]
    lower_slopes = (bins_mel - lower) / (centre - lower)
    upper_slopes = (upper - bins_mel) / (upper - centre)
    weights = np.maximum(0.0, np.minimum(lower_slopes, upper_slopes))
    return np.pad(weights, ((1, 0), (0, 0)))


def hann_window(n):
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _frame(x, frame_length, frame_step, pad_end):
    n = x.shape[-1]
    if pad_end:
        num_frames = -(-n // frame_step)
        pad = max(0, (num_frames - 1) * frame_step + frame_length - n)
        x = F.pad(x, (0, pad))
    return x.unfold(-1, frame_length, frame_step)


def stft_magnitude(x, params):
    window = torch.as_tensor(hann_window(params.frame_length), dtype=x.dtype)
    frames = _frame(x, params.frame_length, params.frame_step, params.pad_end)
    return torch.abs(torch.fft.rfft(frames * window, n=params.fft_length))


def mel_spectrogram(waveforms, invert_mu_law=True, jitter=False,
                    params=MelParams(), rng=None, mu=MU, max_jitter=MAX_JITTER):
    """Log-mel spectrogram ``log(1 + 10000 * mel(|STFT|))``.

    Args:
        waveforms: shape ``[n]`` or ``[batch, n]``; numpy or torch. Torch
            inputs keep their dtype and stay differentiable.
        invert_mu_law: decode mu-law samples before the STFT.
        jitter: randomly shift the waveform first. Meant only for ground truth
            inside the prediction loss.
        params: framing and filterbank parameters.

    Returns:
        ``[num_frames, num_bins]`` (or batched) grid; same array type as input.
    """
    as_numpy = not isinstance(waveforms, torch.Tensor)
    x = torch.as_tensor(np.asarray(waveforms, dtype=np.float64)) if as_numpy else waveforms
    if x.shape[-1] < params.frame_step or (
            not params.pad_end and x.shape[-1] < params.frame_length):
        raise EmptySpectrogramError(
            f"{x.shape[-1]} samples is fewer than one hop of {params.frame_step}")
    if jitter:
        x = apply_jitter(x, max_jitter, rng)
    if invert_mu_law:
        x = _mu_law_decode_torch(x, mu)
    magnitude = stft_magnitude(x, params)
    mel_matrix = torch.as_tensor(
        linear_to_mel_weight_matrix(params.num_bins, params.num_spectrogram_bins,
                                    params.sample_rate, params.lower_edge,
                                    params.upper_edge),
        dtype=x.dtype)
    out = torch.log1p(LOG_SCALE * (magnitude @ mel_matrix))
    return out.detach().numpy() if as_numpy else out


def melspec(waveform, params=None, jitter=False, rng=None):
    """Wrap :func:`mel_spectrogram` for a :class:`Waveform`."""
    params = params or MelParams(sample_rate=float(waveform.sample_rate))
    values = mel_spectrogram(waveform.samples, invert_mu_law=waveform.mu_law,
                             jitter=jitter, params=params, rng=rng)
    return MelSpectrogram(values=values, params=params)


def expected_frames(num_samples, frame_step):
    return math.ceil(num_samples / frame_step)
