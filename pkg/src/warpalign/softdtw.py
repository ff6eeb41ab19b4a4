"""Soft dynamic time warping between spectrograms.

The dynamic program walks the anti-diagonals of the frame cost matrix. The
matrix is first skewed so that each anti-diagonal becomes a row, then every
row is filled from the two previous ones in a single vectorised step. Three
predecessor directions feed each cell::

    diagonal        D[i-1, j-1]
    generated-only  D[i-1, j] + w
    target-only     D[i, j-1] + w

The soft variant aggregates them with a temperature-``tau`` soft minimum; the
hard variant takes the plain minimum and records an argmin path. Gradients are
exact reverse-mode derivatives of the soft recurrence.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from .errors import ConfigError, DomainError, ShapeError

SENTINEL = 1e30
MAX_BRUTE_FORCE_FRAMES = 8


@dataclass(frozen=True)
class DtwConfig:
    warp_penalty: float = 1.0
    temperature: float = 0.01
    band: int | None = None

    def validate(self, soft=True):
        if soft and not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if not self.warp_penalty >= 0:
            raise ConfigError(f"warp penalty must be >= 0, got {self.warp_penalty}")
        if self.band is not None and self.band < 0:
            raise ConfigError(f"band half-width must be >= 0, got {self.band}")


@dataclass
class DtwResult:
    value: float
    grad_gen: np.ndarray
    path: list[tuple[int, int]] | None = None

    @property
    def path_length(self):
        return None if self.path is None else len(self.path)


def soft_minimum(values, temperature, axis=0):
    """``-tau * log(sum(exp(-v / tau)))`` with max-subtraction."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0 or v.shape[axis] == 0:
        raise DomainError("soft minimum of an empty set")
    if not temperature > 0:
        raise ConfigError("temperature must be > 0")
    m = np.min(v, axis=axis, keepdims=True)
    s = np.sum(np.exp(-(v - m) / temperature), axis=axis, keepdims=True)
    return np.squeeze(m - temperature * np.log(s), axis=axis)


def _as_batch(spec):
    spec = np.asarray(spec, dtype=np.float64)
    if spec.ndim == 1:
        spec = spec[:, None]
    if spec.ndim == 2:
        return spec[None], True
    if spec.ndim == 3:
        return spec, False
    raise ShapeError(f"expected [T, F] or [B, T, F], got shape {spec.shape}")


def _check_pair(gen, gt):
    if gen.shape[0] != gt.shape[0] or gen.shape[2] != gt.shape[2]:
        raise ShapeError(
            f"spectrogram shapes {gen.shape[1:]} and {gt.shape[1:]} are incompatible")
    if gen.shape[1] < 1 or gt.shape[1] < 1:
        raise ShapeError("spectrograms need at least one frame")


def frame_cost_matrix(S_gen, S_gt):
    """Mean absolute difference between every generated and target frame.

    Returns ``cost[..., i, j] = mean_f |S_gen[i, f] - S_gt[j, f]|``.
    """
    gen, single = _as_batch(S_gen)
    gt, _ = _as_batch(S_gt)
    _check_pair(gen, gt)
    cost = np.abs(gen[:, :, None, :] - gt[:, None, :, :]).mean(axis=-1)
    return cost[0] if single else cost


def skew_matrix(x):
    """Skew a matrix so that its anti-diagonals become rows.

    ``y[i, j] = x[clip(i - j, 0, H - 1), j]`` with ``y`` of shape
    ``[H + W - 1, W]``. Leading batch axes are carried along.
    """
    x = np.asarray(x)
    height, width = x.shape[-2:]
    rows = np.clip(np.arange(height + width - 1)[:, None] - np.arange(width)[None, :],
                   0, height - 1)
    return x[..., rows, np.arange(width)[None, :]]


def _unskew_indices(height, width):
    i = np.arange(height + width - 1)[:, None]
    j = np.arange(width)[None, :]
    r = i - j
    return r, np.broadcast_to(j, r.shape), (r >= 0) & (r < height)


def _band_mask(height, width, band):
    if band is None:
        return None
    i = np.arange(height)[:, None]
    j = np.arange(width)[None, :]
    return np.abs(i - j) > band


def _forward(cost, warp_penalty, temperature, band, hard):
    """Run the skewed recurrence on ``cost`` of shape ``[B, H, W]``.

    Returns the per-diagonal path cost rows (``[B, H + W - 1, W + 1]``, column 0
    is the sentinel pad) and, for the soft variant, the softmax weights of the
    three predecessor directions (``[B, H + W - 1, W, 3]``).
    """
    batch, height, width = cost.shape
    outside = _band_mask(height, width, band)
    if outside is not None:
        cost = np.where(outside[None], SENTINEL, cost)
    skewed = skew_matrix(cost)
    n_diag = height + width - 1
    rows = np.empty((batch, n_diag, width + 1))
    weights = None if hard else np.empty((batch, n_diag, width, 3))
    prev = np.full((batch, width + 1), SENTINEL)
    prev[:, 0] = 0.0
    cur = np.full((batch, width + 1), SENTINEL)
    for i in range(n_diag):
        directions = np.stack([prev[:, :-1],
                               cur[:, 1:] + warp_penalty,
                               cur[:, :-1] + warp_penalty], axis=-1)
        if hard:
            best = directions.min(axis=-1)
        else:
            m = directions.min(axis=-1, keepdims=True)
            e = np.exp(-(directions - m) / temperature)
            total = e.sum(axis=-1, keepdims=True)
            best = m[..., 0] - temperature * np.log(total[..., 0])
            weights[:, i] = e / total
        nxt = np.empty_like(cur)
        nxt[:, 0] = SENTINEL
        nxt[:, 1:] = np.minimum(skewed[:, i] + best, SENTINEL)
        rows[:, i] = nxt
        prev, cur = cur, nxt
    return rows, weights


def _backward(weights, height, width):
    """Gradient of the final path cost with respect to every cost cell."""
    batch, n_diag = weights.shape[:2]
    grad_skewed = np.zeros((batch, n_diag, width))
    g_cur = np.zeros((batch, width + 1))
    g_prev = np.zeros((batch, width + 1))
    g_cur[:, width] = 1.0
    for i in range(n_diag - 1, -1, -1):
        g_new = g_cur[:, 1:]
        grad_skewed[:, i] = g_new
        p = weights[:, i]
        g_prev2 = np.zeros((batch, width + 1))
        g_prev2[:, :-1] += g_new * p[..., 0]
        g_prev[:, 1:] += g_new * p[..., 1]
        g_prev[:, :-1] += g_new * p[..., 2]
        g_cur, g_prev = g_prev, g_prev2
    r, j, valid = _unskew_indices(height, width)
    grad = np.zeros((batch, height, width))
    np.add.at(grad, (slice(None), r[valid], j[valid]), grad_skewed[:, valid])
    return grad


def _cost_grad_to_gen(grad_cost, gen, gt):
    n_bins = gen.shape[-1]
    signs = np.sign(gen[:, :, None, :] - gt[:, None, :, :])
    return np.einsum("bij,bijf->bif", grad_cost, signs) / n_bins


def soft_dtw_batch(S_gen, S_gt, cfg=DtwConfig(), need_grad=True, with_gt=False):
    """Soft-DTW values (and ``d value / d S_gen``) for ``[B, T, F]`` batches.

    With ``with_gt`` the gradient with respect to ``S_gt`` is appended.
    """
    cfg.validate(soft=True)
    gen, _ = _as_batch(S_gen)
    gt, _ = _as_batch(S_gt)
    _check_pair(gen, gt)
    cost = frame_cost_matrix(gen, gt)
    height, width = cost.shape[1:]
    rows, weights = _forward(cost, cfg.warp_penalty, cfg.temperature, cfg.band, hard=False)
    values = rows[:, -1, -1].copy()
    if not need_grad:
        return values, None
    grad_cost = _backward(weights, height, width)
    grad_gen = _cost_grad_to_gen(grad_cost, gen, gt)
    if with_gt:
        grad_gt = _cost_grad_to_gen(np.swapaxes(grad_cost, 1, 2), gt, gen)
        return values, grad_gen, grad_gt
    return values, grad_gen


def soft_dtw(S_gen, S_gt, cfg=DtwConfig()):
    """Soft-DTW prediction loss between two spectrograms.

    Args:
        S_gen: generated spectrogram, ``[T_gen, F]``.
        S_gt: target spectrogram, ``[T_gt, F]``.
        cfg: warp penalty, temperature and optional Sakoe-Chiba band.

    Returns:
        :class:`DtwResult` with the loss value and its gradient with respect to
        ``S_gen``.
    """
    values, grads = soft_dtw_batch(S_gen, S_gt, cfg)
    return DtwResult(value=float(values[0]), grad_gen=grads[0])


def _backtrack(D, warp_penalty):
    i, j = D.shape[0] - 1, D.shape[1] - 1
    path = [(i, j)]
    while (i, j) != (0, 0):
        candidates = []
        if i > 0 and j > 0:
            candidates.append((D[i - 1, j - 1], i - 1, j - 1))
        if j > 0:
            candidates.append((D[i, j - 1] + warp_penalty, i, j - 1))
        if i > 0:
            candidates.append((D[i - 1, j] + warp_penalty, i - 1, j))
        # min() keeps the first of equal keys: diagonal, then target-only, then generated-only
        _, i, j = min(candidates, key=lambda c: c[0])
        path.append((i, j))
    return path[::-1]


def hard_dtw(S_gen, S_gt, cfg=DtwConfig()):
    """Minimum-cost DTW alignment with its path and subgradient.

    The path is a list of 0-based ``(gen_index, gt_index)`` pairs. On ties the
    lockstep move wins, then advancing the target only, then the generated only.
    """
    cfg.validate(soft=False)
    gen, _ = _as_batch(S_gen)
    gt, _ = _as_batch(S_gt)
    _check_pair(gen, gt)
    if gen.shape[0] != 1:
        raise ShapeError("hard_dtw takes a single pair")
    cost = frame_cost_matrix(gen, gt)
    height, width = cost.shape[1:]
    rows, _ = _forward(cost, cfg.warp_penalty, 0.0, cfg.band, hard=True)
    r, j, valid = _unskew_indices(height, width)
    D = np.full((height, width), SENTINEL)
    D[r[valid], j[valid]] = rows[0, :, 1:][valid]
    path = _backtrack(D, cfg.warp_penalty)
    grad_cost = np.zeros((1, height, width))
    for a, b in path:
        grad_cost[0, a, b] = 1.0
    grad = _cost_grad_to_gen(grad_cost, gen, gt)[0]
    return DtwResult(value=float(D[-1, -1]), grad_gen=grad, path=path)


@lru_cache(maxsize=None)
def delannoy(m, n):
    """Number of monotone lattice paths with diagonal steps from (0, 0) to (m, n)."""
    if m == 0 or n == 0:
        return 1
    return delannoy(m - 1, n) + delannoy(m, n - 1) + delannoy(m - 1, n - 1)


def count_paths(t_gen, t_gt=None):
    t_gt = t_gen if t_gt is None else t_gt
    return delannoy(t_gen - 1, t_gt - 1)


def enumerate_paths(t_gen, t_gt=None):
    """Yield every alignment path from (0, 0) to (t_gen - 1, t_gt - 1)."""
    t_gt = t_gen if t_gt is None else t_gt
    moves = ((1, 1), (0, 1), (1, 0))

    def extend(path):
        i, j = path[-1]
        if (i, j) == (t_gen - 1, t_gt - 1):
            yield list(path)
            return
        for di, dj in moves:
            if i + di < t_gen and j + dj < t_gt:
                path.append((i + di, j + dj))
                yield from extend(path)
                path.pop()

    yield from extend([(0, 0)])


def path_cost(S_gen, S_gt, path, warp_penalty=1.0):
    """Total cost of one alignment path: frame distances plus warp penalties."""
    S_gen = np.asarray(S_gen, dtype=np.float64)
    S_gt = np.asarray(S_gt, dtype=np.float64)
    total = 0.0
    for k, (i, j) in enumerate(path):
        if k > 0:
            pi, pj = path[k - 1]
            if (i - pi) + (j - pj) == 1:
                total += warp_penalty
        total += float(np.mean(np.abs(S_gen[i] - S_gt[j])))
    return total


@lru_cache(maxsize=None)
def _path_table(t_gen, t_gt):
    """Every path as padded index arrays plus its warp-move count."""
    paths = list(enumerate_paths(t_gen, t_gt))
    width = max(len(p) for p in paths)
    rows = np.zeros((len(paths), width), dtype=np.int64)
    cols = np.zeros((len(paths), width), dtype=np.int64)
    valid = np.zeros((len(paths), width), dtype=bool)
    warps = np.zeros(len(paths))
    for k, p in enumerate(paths):
        idx = np.array(p)
        rows[k, :len(p)] = idx[:, 0]
        cols[k, :len(p)] = idx[:, 1]
        valid[k, :len(p)] = True
        warps[k] = np.sum(np.diff(idx, axis=0).sum(axis=1) == 1)
    return rows, cols, valid, warps


def _all_path_costs(S_gen, S_gt, warp_penalty, band=None):
    t_gen, t_gt = S_gen.shape[0], S_gt.shape[0]
    if max(t_gen, t_gt) > MAX_BRUTE_FORCE_FRAMES:
        raise DomainError(
            f"brute force refuses more than {MAX_BRUTE_FORCE_FRAMES} frames "
            f"({count_paths(t_gen, t_gt)} paths)")
    rows, cols, valid, warps = _path_table(t_gen, t_gt)
    cell = np.array([[np.mean(np.abs(S_gen[i] - S_gt[j])) for j in range(t_gt)]
                     for i in range(t_gen)])
    costs = np.where(valid, cell[rows, cols], 0.0).sum(axis=1) + warp_penalty * warps
    if band is not None:
        inside = np.all(~valid | (np.abs(rows - cols) <= band), axis=1)
        costs = costs[inside]
    return costs


def brute_force_soft_dtw(S_gen, S_gt, cfg=DtwConfig()):
    """Soft-DTW by explicit enumeration of every alignment path (test oracle)."""
    cfg.validate(soft=True)
    S_gen = _as_batch(S_gen)[0][0]
    S_gt = _as_batch(S_gt)[0][0]
    costs = _all_path_costs(S_gen, S_gt, cfg.warp_penalty, cfg.band)
    return float(soft_minimum(costs, cfg.temperature))


def brute_force_hard_dtw(S_gen, S_gt, warp_penalty=1.0):
    S_gen = _as_batch(S_gen)[0][0]
    S_gt = _as_batch(S_gt)[0][0]
    return float(_all_path_costs(S_gen, S_gt, warp_penalty).min())


class _SoftDtwFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, gen, gt, warp_penalty, temperature, band):
        cfg = DtwConfig(warp_penalty, temperature, band)
        values, grads = soft_dtw_batch(gen.detach().cpu().numpy(),
                                       gt.detach().cpu().numpy(), cfg,
                                       need_grad=gen.requires_grad)
        if grads is not None:
            ctx.save_for_backward(torch.as_tensor(grads, dtype=gen.dtype))
        return torch.as_tensor(values, dtype=gen.dtype)

    @staticmethod
    def backward(ctx, grad_out):
        (grads,) = ctx.saved_tensors
        return grad_out[:, None, None] * grads, None, None, None, None


def soft_dtw_torch(S_gen, S_gt, cfg=DtwConfig()):
    """Batched soft-DTW for torch ``[B, T, F]`` tensors; differentiable in ``S_gen``."""
    cfg.validate(soft=True)
    return _SoftDtwFunction.apply(S_gen, S_gt.detach(), cfg.warp_penalty,
                                  cfg.temperature, cfg.band)


__all__ = [
    "DtwConfig", "DtwResult", "soft_minimum", "frame_cost_matrix", "skew_matrix",
    "soft_dtw", "soft_dtw_batch", "soft_dtw_torch", "hard_dtw",
    "brute_force_soft_dtw", "brute_force_hard_dtw", "enumerate_paths",
    "count_paths", "delannoy", "path_cost", "SENTINEL",
]
