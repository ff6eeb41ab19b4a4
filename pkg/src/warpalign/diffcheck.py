"""Finite-difference verification of every analytic gradient in the package.

An op is a :class:`DifferentiableOp`: ``forward(inputs)`` returns an output
array and whatever state its ``backward(inputs, state, cotangent)`` needs to
produce one gradient per input. Checks contract the output with a random
cotangent and compare the analytic gradient of that scalar against central
differences, coordinate by coordinate, in double precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np
import torch

from . import aligner as al
from . import losses
from .audio import mel_spectrogram
from .errors import EvaluationError
from .softdtw import DtwConfig, soft_dtw_batch
from .toytts.decoder import ToyDecoder
from .toytts.task import toy_mel_params

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
MAX_EXCLUDED_FRACTION = 0.05
DEFAULT_SEEDS = (0, 1, 2)


@dataclass
class DifferentiableOp:
    name: str
    forward: Callable[[list], tuple[np.ndarray, Any]]
    backward: Callable[[list, Any, np.ndarray], list]
    make_inputs: Callable[[np.random.Generator], list]

    def value(self, inputs):
        out, _ = self.forward(inputs)
        return np.asarray(out, dtype=np.float64)


@dataclass
class FdReport:
    name: str
    seed: int
    max_abs_error: float
    max_rel_error: float
    worst_coordinate: tuple
    step: float
    excluded: int
    checked: int
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def excluded_pct(self):
        total = self.excluded + self.checked
        return 100.0 * self.excluded / total if total else 0.0

    @property
    def passed(self):
        return (self.max_rel_error <= self.tolerance
                and self.excluded_pct <= 100.0 * MAX_EXCLUDED_FRACTION)

    def line(self):
        return (f"{self.name},{self.seed},{self.max_rel_error:.3e},"
                f"{self.excluded_pct:.2f},{'pass' if self.passed else 'FAIL'}")


def relative_error(fd, analytic):
    return np.abs(fd - analytic) / np.maximum(1.0, np.abs(fd))


def finite_difference_gradient(fn, x, step=DEFAULT_STEP, kink_tol=None):
    """Central-difference gradient of scalar ``fn`` at ``x``.

    Returns ``(gradient, kinks)``. ``kinks`` flags coordinates where the
    one-sided forward and backward differences disagree by more than
    ``kink_tol`` (relative), i.e. where ``fn`` is not differentiable at the
    scale of ``step``; their central estimate is not trustworthy.
    """
    x = np.array(x, dtype=np.float64)
    kink_tol = 10 * DEFAULT_TOLERANCE if kink_tol is None else kink_tol
    f0 = float(fn(x))
    if not np.isfinite(f0):
        raise EvaluationError("forward value is not finite")
    grad = np.zeros_like(x)
    kinks = np.zeros(x.shape, dtype=bool)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    k = kinks.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = float(fn(x))
        flat[i] = old - step
        fm = float(fn(x))
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"forward value is not finite near coordinate {i}")
        g[i] = (fp - fm) / (2 * step)
        one_sided_gap = abs((fp - f0) - (f0 - fm)) / step
        k[i] = one_sided_gap > kink_tol * max(1.0, abs(g[i]))
    return grad, kinks


def check_op(op, seed, step=DEFAULT_STEP, tolerance=DEFAULT_TOLERANCE):
    rng = np.random.default_rng(seed)
    inputs = [np.array(a, dtype=np.float64) for a in op.make_inputs(rng)]
    out, state = op.forward(inputs)
    cotangent = rng.standard_normal(np.shape(out))
    analytic = op.backward(inputs, state, cotangent)
    worst = (0.0, 0.0, ())
    excluded = checked = 0
    for idx, x in enumerate(inputs):
        def probe(v, idx=idx):
            args = list(inputs)
            args[idx] = v
            return float(np.sum(op.value(args) * cotangent))

        fd, kinks = finite_difference_gradient(probe, x, step)
        an = np.asarray(analytic[idx], dtype=np.float64).reshape(fd.shape)
        rel = np.where(kinks, 0.0, relative_error(fd, an))
        ab = np.where(kinks, 0.0, np.abs(fd - an))
        excluded += int(kinks.sum())
        checked += int((~kinks).sum())
        if rel.size and rel.max() >= worst[0]:
            pos = np.unravel_index(int(rel.argmax()), rel.shape)
            worst = (float(rel.max()), max(worst[1], float(ab.max())), (idx, *map(int, pos)))
        elif ab.size:
            worst = (worst[0], max(worst[1], float(ab.max())), worst[2])
    return FdReport(name=op.name, seed=seed, max_abs_error=worst[1], max_rel_error=worst[0],
                    worst_coordinate=worst[2], step=step, excluded=excluded,
                    checked=checked, tolerance=tolerance)


def check_all(registry=None, seeds=DEFAULT_SEEDS, tolerance=DEFAULT_TOLERANCE,
              step=DEFAULT_STEP):
    """One :class:`FdReport` per op per seed."""
    registry = default_registry() if registry is None else registry
    return [check_op(op, seed, step, tolerance) for op in registry for seed in seeds]


def torch_op(name, fn, make_inputs):
    """Wrap a torch function of float64 tensors; its backward is autograd's."""

    def forward(inputs):
        ts = [torch.tensor(a, dtype=torch.float64, requires_grad=True) for a in inputs]
        out = fn(*ts)
        return out.detach().numpy(), (ts, out)

    def backward(inputs, state, cotangent):
        ts, out = state
        grads = torch.autograd.grad(out, ts, torch.as_tensor(cotangent), retain_graph=True,
                                    allow_unused=True)
        return [np.zeros(t.shape) if g is None else g.numpy() for g, t in zip(grads, ts)]

    return DifferentiableOp(name, forward, backward, make_inputs)


def scaled_backward(op, factor):
    """A copy of ``op`` whose backward is multiplied by ``factor`` (fault injection)."""

    def backward(inputs, state, cotangent):
        return [factor * g for g in op.backward(inputs, state, cotangent)]

    return DifferentiableOp(op.name + f"*{factor}", op.forward, backward, op.make_inputs)


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def _mel_op():
    params = toy_mel_params()

    def make(rng):
        return [rng.uniform(-0.9, 0.9, size=320)]

    return torch_op("mel_spectrogram", lambda w: mel_spectrogram(w, params=params), make)


def _interpolate_op():
    def make(rng):
        return [rng.standard_normal((1, 5, 3)), np.sort(rng.uniform(0, 12, size=(1, 5)))]

    def fn(features, centres):
        mask = torch.tensor([[1, 1, 1, 1, 0]])
        return al.interpolate(features, centres, mask, 1, 10)[0]

    return torch_op("interpolate", fn, make)


def _positions_op():
    def make(rng):
        return [rng.standard_normal((1, 4, 3)), rng.uniform(0.5, 4.0, size=(1, 4))]

    def fn(features, lengths):
        _, centres, total = al.positions_from_lengths(lengths, torch.tensor([4]))
        mask = torch.ones(1, 4, dtype=torch.long)
        aligned, _ = al.interpolate(features, centres, mask, 0, 9)
        return torch.cat([aligned.reshape(-1), total])

    return torch_op("positions_from_lengths", fn, make)


def _length_head_op():
    torch.manual_seed(0)
    cfg = al.AlignerConfig(vocab_size=4, channels=6, num_blocks=1, latent_dim=3,
                           speaker_dim=2, dilations=((1, 2),))
    head = al.LengthHead(cfg).double()
    al.init_orthogonal(head)
    mask = torch.tensor([[[1.0, 1.0, 1.0, 1.0, 1.0, 0.0]]], dtype=torch.float64)

    def make(rng):
        while True:
            x = rng.standard_normal((1, 6, 6))
            cond = rng.standard_normal((1, 5))
            with torch.no_grad():
                pre = head.preactivation(torch.tensor(x), mask, torch.tensor(cond))
            if torch.all(pre[0, :5].abs() > 10 * DEFAULT_STEP):
                return [x, cond]

    def fn(x, cond):
        return head(x, mask, cond)[:, :5]

    return torch_op("predict_lengths", fn, make)


def _soft_dtw_op():
    cfg = DtwConfig()

    def make(rng):
        return [rng.standard_normal((4, 3)), rng.standard_normal((4, 3))]

    def forward(inputs):
        values, grad_gen, grad_gt = soft_dtw_batch(inputs[0], inputs[1], cfg, with_gt=True)
        return values[0], (grad_gen[0], grad_gt[0])

    def backward(inputs, state, cotangent):
        return [cotangent * state[0], cotangent * state[1]]

    return DifferentiableOp("soft_dtw", forward, backward, make)


def _l1_op():
    def make(rng):
        return [_away_from_zero(rng, (4, 3)), np.zeros((4, 3))]

    def forward(inputs):
        value, grad = losses.l1_spectrogram_loss(inputs[0], inputs[1])
        return np.asarray(value), grad

    def backward(inputs, state, cotangent):
        return [cotangent * state, -cotangent * state]

    return DifferentiableOp("l1_spectrogram_loss", forward, backward, make)


def _length_loss_op():
    def make(rng):
        return [rng.uniform(0, 5, size=6)]

    def forward(inputs):
        value, grad = losses.length_loss(inputs[0], 20.0)
        return np.asarray(value), grad

    def backward(inputs, state, cotangent):
        return [cotangent * state]

    return DifferentiableOp("length_loss", forward, backward, make)


def _decoder_op():
    torch.manual_seed(0)
    decoder = ToyDecoder(4, factors=(2, 3), channels=(5, 4)).double()

    def make(rng):
        return [rng.standard_normal((1, 3, 4))]

    return torch_op("toy_decoder", decoder, make)


def default_registry():
    return [_mel_op(), _interpolate_op(), _positions_op(), _length_head_op(),
            _soft_dtw_op(), _l1_op(), _length_loss_op(), _decoder_op()]


def format_reports(reports):
    lines = ["name,seed,max_rel_err,excluded_pct,pass"]
    lines += [r.line() for r in reports]
    return "\n".join(lines)
