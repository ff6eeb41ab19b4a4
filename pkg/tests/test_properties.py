"""Randomised property checks over generated inputs."""

import math

import numpy as np
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from warpalign.aligner import interpolation_weights, positions_from_lengths
from warpalign.audio import mu_law_decode, mu_law_encode
from warpalign.losses import l1_spectrogram_loss
from warpalign.softdtw import DtwConfig, count_paths, hard_dtw, soft_dtw, soft_minimum

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


@st.composite
def spectrogram_pairs(draw, max_frames=6):
    t = draw(st.integers(1, max_frames))
    f = draw(st.integers(1, 3))
    a = draw(arrays(np.float64, (t, f), elements=finite))
    b = draw(arrays(np.float64, (t, f), elements=finite))
    return a, b


@settings(max_examples=60, deadline=None)
@given(spectrogram_pairs(), st.floats(0.01, 2.0), st.floats(0.0, 2.0))
def test_sandwich_bound(pair, tau, w):
    a, b = pair
    cfg = DtwConfig(warp_penalty=w, temperature=tau)
    soft = soft_dtw(a, b, cfg).value
    hard = hard_dtw(a, b, cfg).value
    assert soft <= hard + 1e-9
    assert hard <= soft + tau * math.log(count_paths(len(a))) + 1e-9


@settings(max_examples=60, deadline=None)
@given(spectrogram_pairs(), st.floats(0.0, 2.0))
def test_path_length_and_l1_bound(pair, w):
    a, b = pair
    result = hard_dtw(a, b, DtwConfig(warp_penalty=w))
    assert len(a) <= result.path_length <= 2 * len(a) - 1
    assert result.value <= l1_spectrogram_loss(a, b)[0] + 1e-12


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=finite), st.floats(0.001, 10.0))
def test_soft_minimum_bounds(values, tau):
    s = soft_minimum(values, tau)
    assert values.min() - tau * math.log(values.size) - 1e-9 <= s <= values.min() + 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 50), elements=st.floats(-1, 1)))
def test_mu_law_roundtrip(x):
    assert np.max(np.abs(mu_law_decode(mu_law_encode(x)) - x)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 10), elements=st.floats(0, 20)),
       st.integers(0, 30), st.integers(1, 25))
def test_aligner_weights(lengths, offset, steps):
    n = lengths.size
    padded = np.concatenate([lengths, [3.0, 4.0]])
    mask = torch.tensor([[1] * n + [0, 0]])
    ends, centres, total = positions_from_lengths(torch.tensor(padded)[None], torch.tensor([n]))
    assert torch.all(ends[0, 1:n] >= ends[0, :n - 1])
    assert torch.all((centres[0, :n] >= ends[0, :n] - torch.tensor(lengths))
                     & (centres[0, :n] <= ends[0, :n]))
    assert float(total) == float(ends[0, n - 1])
    w = interpolation_weights(centres, mask, offset, steps)
    assert torch.all(torch.abs(w.sum(-1) - 1) <= 1e-6)
    assert float(w[..., n:].max()) <= 1e-30
