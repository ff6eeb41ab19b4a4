"""Batched inference timing in the layout of a hardware benchmark table.

One run is ``passes`` consecutive forward passes at a fixed batch size; the
report gives the median wall time over ``runs`` runs and the realtime factor,
the seconds of audio generated per run divided by that median.
"""

from __future__ import annotations

import csv
import platform
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .task import random_symbols
from .text import preprocess_tokens

BENCH_FIELDS = ("hardware", "utt_per_batch", "batch_per_run", "utt_per_run",
                "length_per_utt_s", "length_per_run_s", "median_run_time_s",
                "realtime_factor")


@dataclass
class BenchReport:
    hardware: str
    utt_per_batch: int
    batch_per_run: int
    utt_per_run: int
    length_per_utt_s: float
    length_per_run_s: float
    median_run_time_s: float
    realtime_factor: float
    run_times: tuple = ()

    def row(self):
        d = asdict(self)
        d.pop("run_times")
        return d


def hardware_label():
    threads = torch.get_num_threads()
    return f"{platform.processor() or platform.machine()} CPU ({threads} thread{'s' * (threads > 1)})"


def make_inputs(model, task, batch, seed=0, max_tokens=None):
    """Random padded token batch and latents for inference."""
    rng = np.random.default_rng(seed)
    vocab = task.vocab
    max_tokens = max_tokens or task.max_sequence_length
    seqs = [preprocess_tokens(random_symbols(task, rng), vocab, max_tokens) for _ in range(batch)]
    ids = torch.as_tensor(np.stack([s.ids for s in seqs]))
    lengths = torch.as_tensor([s.true_length for s in seqs])
    dtype = next(model.parameters()).dtype
    noise = torch.as_tensor(rng.standard_normal((batch, model.aligner.cfg.latent_dim)), dtype=dtype)
    return ids, lengths, noise


@torch.no_grad()
def generate(model, ids, lengths, noise, steps):
    """Fixed-length waveforms ``[B, steps * hop]`` starting at output step 0."""
    wave, _ = model(ids, lengths, noise, out_offset=0, out_length=steps)
    return wave


def bench(model, task, utterance_seconds=3.0, batch=2, passes=10, runs=101, seed=0,
          clock=time.perf_counter):
    """Time ``runs`` runs of ``passes`` forward passes each; see module docstring."""
    model.eval()
    steps = max(1, round(utterance_seconds * task.aligner_rate))
    ids, lengths, noise = make_inputs(model, task, batch, seed)
    generate(model, ids, lengths, noise, steps)
    times = []
    for _ in range(runs):
        start = clock()
        for _ in range(passes):
            generate(model, ids, lengths, noise, steps)
        times.append(clock() - start)
    seconds_per_utt = steps / task.aligner_rate
    per_run = seconds_per_utt * batch * passes
    median = float(np.median(times))
    return BenchReport(hardware=hardware_label(), utt_per_batch=batch, batch_per_run=passes,
                       utt_per_run=batch * passes, length_per_utt_s=seconds_per_utt,
                       length_per_run_s=per_run, median_run_time_s=median,
                       realtime_factor=per_run / median if median > 0 else float("inf"),
                       run_times=tuple(times))


def write_bench(report, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        writer.writeheader()
        writer.writerow(report.row())
    return path
