"""Windowed training of the toy generator."""

from __future__ import annotations

import copy
import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..audio import extract_window, WindowSpec, mel_spectrogram
from ..errors import ConfigError, DivergenceError
from ..io import load_checkpoint, save_checkpoint
from ..losses import (LossWeights, adv_generator_loss_torch, hinge_discriminator_loss_torch,
                      length_loss_torch, prediction_loss_torch)
from ..softdtw import DtwConfig
from .decoder import ToyGenerator
from .discriminator import RandomWindowEnsemble, scaled_rwd_sizes
from .task import ToyTask, make_batch

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "adv", "pred", "length", "total")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    learning_rate: float = 2e-3
    beta1: float = 0.0
    beta2: float = 0.999
    loss: str = "dtw"
    lambda_pred: float = 1.0
    lambda_length: float = 0.1
    adversarial: bool = False
    stochastic_durations: bool = False
    ema_decay: float | None = None
    norm: str = "batch"
    sigma2: float = 10.0
    length_unit: float = 1.0
    length_bias: float = 6.0
    window_margin: int = 0
    seed: int = 0
    dtw: DtwConfig = field(default_factory=DtwConfig)

    def __post_init__(self):
        if self.loss not in ("l1", "dtw"):
            raise ConfigError(f"loss must be 'l1' or 'dtw', got {self.loss!r}")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be positive")
        if self.window_margin < 0:
            raise ConfigError("window_margin must be >= 0")
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be >= 0")

    @property
    def weights(self):
        return LossWeights(self.lambda_pred, self.lambda_length)

    @property
    def expected_to_train(self):
        """Runs without the length or prediction loss are known not to learn alignment."""
        return self.lambda_length > 0 and self.lambda_pred > 0

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["dtw"] = dataclasses.asdict(self.dtw)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["dtw"] = DtwConfig(**d.get("dtw", {}))
        return cls(**d)


def cosine_learning_rate(step, total_steps, base):
    """Cosine decay from ``base`` at step 0 to exactly 0 at step ``total_steps - 1``."""
    if total_steps <= 1:
        return 0.0
    return base * 0.5 * (1.0 + math.cos(math.pi * min(step, total_steps - 1) / (total_steps - 1)))


@dataclass
class TrainResult:
    model: ToyGenerator
    metrics: list
    task: ToyTask
    config: TrainConfig
    checkpoint: Path | None = None

    def final(self, key, tail=0.05):
        """Mean of ``key`` over the last ``tail`` fraction of steps."""
        n = max(1, int(len(self.metrics) * tail))
        return float(np.mean([row[key] for row in self.metrics[-n:]]))


def _window_targets(batch, offsets, task, margin=0):
    hop = task.hop
    steps = task.window_steps
    lead = margin * hop
    return np.stack([extract_window(np.pad(g.waveform, (lead, lead + steps * hop)),
                                    WindowSpec(lead + int(o) * hop, steps * hop))
                     for g, o in zip(batch.truths, offsets)])


def generator_losses(model, batch, task, cfg, rng, offsets=None, noise=None):
    """Per-example prediction and length losses for one batch.

    Returns ``(pred, length, generated, target, aligner_output)``; ``pred`` and
    ``length`` have shape ``[B]``, ``target`` is the ground-truth window.
    """
    dtype = next(model.parameters()).dtype
    b = len(batch.truths)
    steps = task.window_steps
    margin = cfg.window_margin
    if offsets is None:
        offsets = np.array([rng.integers(-margin, max(g.total_steps, steps) - steps + margin + 1)
                            for g in batch.truths])
    if noise is None:
        noise = rng.standard_normal((b, model.aligner.cfg.latent_dim))
    wave, out = model(torch.as_tensor(batch.ids), torch.as_tensor(batch.lengths),
                      torch.as_tensor(noise, dtype=dtype),
                      out_offset=torch.as_tensor(offsets), out_length=steps)
    target = _window_targets(batch, offsets, task, margin)
    mel_gen = mel_spectrogram(wave, params=task.mel)
    mel_gt = torch.as_tensor(
        mel_spectrogram(target, jitter=task.max_jitter > 0, params=task.mel, rng=rng,
                        max_jitter=task.max_jitter), dtype=dtype)
    pred = prediction_loss_torch(mel_gen, mel_gt, cfg.loss, cfg.dtw)
    length = length_loss_torch(out.predicted_total_length,
                               torch.as_tensor(batch.total_steps, dtype=dtype))
    return pred, length, wave, target, out


def _ema_update(ema, model, decay):
    with torch.no_grad():
        for pe, pm in zip(ema.parameters(), model.parameters()):
            pe.lerp_(pm, 1.0 - decay)


def _scalar(x):
    return float(x.detach()) if torch.is_tensor(x) else float(x)


def train(task=None, cfg=None, out_dir=None, log_every=100):
    """Optimise the toy generator and optionally write metrics and a checkpoint.

    Raises:
        DivergenceError: the total loss became non-finite.
    """
    task = task or ToyTask()
    cfg = cfg or TrainConfig()
    if not cfg.expected_to_train:
        log.warning("lambda_length=%s lambda_pred=%s: this run is expected not to "
                    "learn alignment", cfg.lambda_length, cfg.lambda_pred)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = ToyGenerator.for_task(task, norm=cfg.norm, sigma2=cfg.sigma2,
                                     length_unit=cfg.length_unit,
                                     length_bias=cfg.length_bias)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                           betas=(cfg.beta1, cfg.beta2))
    ema = copy.deepcopy(model) if cfg.ema_decay else None
    disc = d_opt = None
    if cfg.adversarial:
        disc = RandomWindowEnsemble(scaled_rwd_sizes(task.sample_rate))
        d_opt = torch.optim.Adam(disc.parameters(), lr=cfg.learning_rate,
                                 betas=(cfg.beta1, cfg.beta2))
    metrics = []
    for step in range(cfg.steps):
        lr = cosine_learning_rate(step, cfg.steps, cfg.learning_rate)
        for group in opt.param_groups:
            group["lr"] = lr
        batch = make_batch(task, rng, cfg.batch_size, cfg.stochastic_durations)
        pred, length, wave, target, _ = generator_losses(model, batch, task, cfg, rng)
        adv = torch.zeros(())
        if disc is not None:
            for group in d_opt.param_groups:
                group["lr"] = lr
            starts = disc.draw_starts(wave.shape[-1], rng)
            real = torch.as_tensor(target, dtype=wave.dtype)
            d_loss = hinge_discriminator_loss_torch(disc(real, starts), disc(wave.detach(), starts))
            d_opt.zero_grad()
            d_loss.backward()
            d_opt.step()
            adv = adv_generator_loss_torch(disc(wave, starts))
        total = adv + cfg.lambda_pred * pred.mean() + cfg.lambda_length * length.mean()
        if not torch.isfinite(total):
            raise DivergenceError(step)
        opt.zero_grad()
        total.backward()
        opt.step()
        if ema is not None:
            _ema_update(ema, model, cfg.ema_decay)
        row = {"step": step, "adv": _scalar(adv), "pred": _scalar(pred.mean()),
               "length": _scalar(length.mean()), "total": _scalar(total)}
        metrics.append(row)
        if log_every and (step % log_every == 0 or step == cfg.steps - 1):
            log.info("step %d pred %.4f length %.4f total %.4f", step, row["pred"],
                     row["length"], row["total"])
    final_model = ema if ema is not None else model
    final_model.eval()
    result = TrainResult(model=final_model, metrics=metrics, task=task, config=cfg)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics(out_dir / "metrics.csv", metrics)
        result.checkpoint = save_model(out_dir / "checkpoint", final_model, task, cfg)
    return result


def write_metrics(path, metrics):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        for row in metrics:
            writer.writerow({k: (row[k] if k == "step" else repr(float(row[k])))
                             for k in METRIC_FIELDS})


def read_metrics(path):
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def task_to_dict(task):
    d = dataclasses.asdict(task)
    d["symbols"] = list(task.symbols)
    return d


def task_from_dict(d):
    from ..audio import MelParams
    d = dict(d)
    d["symbols"] = tuple(d["symbols"])
    d["mel"] = MelParams(**d["mel"])
    return ToyTask(**d)


def save_model(directory, model, task, cfg):
    config = {"task": task_to_dict(task), "train": cfg.to_dict()}
    return save_checkpoint(directory, model.state_dict(), config)


def load_model(directory):
    """Rebuild ``(model, task, train_config)`` from a checkpoint directory."""
    tensors, config = load_checkpoint(directory)
    task = task_from_dict(config["task"])
    cfg = TrainConfig.from_dict(config["train"])
    model = ToyGenerator.for_task(task, norm=cfg.norm, sigma2=cfg.sigma2,
                                     length_unit=cfg.length_unit,
                                     length_bias=cfg.length_bias)
    state = model.state_dict()
    model.load_state_dict({k: torch.as_tensor(tensors[k], dtype=state[k].dtype)
                           for k in state})
    model.eval()
    return model, task, cfg
