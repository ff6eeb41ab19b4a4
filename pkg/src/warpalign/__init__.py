"""Differentiable alignment and spectrogram losses for end-to-end speech synthesis."""

from .audio import MelParams, Waveform, mel_spectrogram, mu_law_decode, mu_law_encode
from .errors import WarpAlignError
from .softdtw import DtwConfig, hard_dtw, soft_dtw

__version__ = "0.1.0"

__all__ = ["MelParams", "Waveform", "mel_spectrogram", "mu_law_encode", "mu_law_decode",
           "DtwConfig", "soft_dtw", "hard_dtw", "WarpAlignError", "__version__"]
