import csv

import numpy as np
import pytest
import torch

from warpalign import plotting
from warpalign.toytts.bench import BENCH_FIELDS, bench, generate, make_inputs, write_bench
from warpalign.toytts.decoder import ToyGenerator
from warpalign.toytts.evaluate import eval_durations, write_duration_report
from warpalign.toytts.task import ToyTask


@pytest.fixture(scope="module")
def model_and_task():
    torch.manual_seed(0)
    task = ToyTask()
    model = ToyGenerator.for_task(task, length_bias=6.0)
    model.eval()
    return model, task


class FakeClock:
    def __init__(self, step):
        self.t = 0.0
        self.step = step

    def __call__(self):
        self.t += self.step
        return self.t


class TestEvaluate:
    def test_report(self, model_and_task, tmp_path):
        model, task = model_and_task
        report = eval_durations(model, task, num_utterances=8, z_draws=16)
        assert len(report.true_totals) == 8
        counts = np.bincount([r["utterance"] for r in report.token_rows])
        assert np.all((counts >= task.min_tokens + 2) & (counts <= task.max_tokens + 2))
        for row in report.token_rows:
            assert row["relative_error"] == pytest.approx(
                abs(row["predicted_steps"] - row["true_steps"]) / row["true_steps"])
        summary = report.summary()
        assert summary["z_draws"] == 16
        assert -1.0 <= summary["length_correlation"] <= 1.0
        assert summary["distinct_z_totals"] >= 2
        assert report.z_positions.shape == (16, len(report.text) + 2)
        out = write_duration_report(report, tmp_path)
        for name in ("durations.csv", "utterance_lengths.csv", "z_lengths.csv", "summary.csv"):
            assert (out / name).is_file()
        with open(out / "durations.csv") as fh:
            assert len(list(csv.DictReader(fh))) == len(report.token_rows)

    def test_held_out_is_deterministic(self, model_and_task):
        model, task = model_and_task
        a = eval_durations(model, task, num_utterances=4, z_draws=2)
        b = eval_durations(model, task, num_utterances=4, z_draws=2)
        assert a.token_rows == b.token_rows

    def test_oracle_scores_perfectly(self, model_and_task):
        model, task = model_and_task
        report = eval_durations(model, task, num_utterances=4, z_draws=2)
        for row in report.token_rows:
            row["predicted_steps"] = float(row["true_steps"])
            row["relative_error"] = 0.0
        report.predicted_totals = report.true_totals.copy()
        assert report.median_relative_error == 0.0
        assert report.length_correlation == pytest.approx(1.0)


class TestBench:
    def test_protocol(self, model_and_task, tmp_path):
        model, task = model_and_task
        report = bench(model, task, utterance_seconds=1.0, batch=2, passes=3, runs=5,
                       clock=FakeClock(0.5))
        assert len(report.run_times) == 5
        assert report.median_run_time_s == 0.5
        assert report.utt_per_run == 6
        assert report.length_per_run_s == 6.0
        assert report.realtime_factor == 12.0
        path = write_bench(report, tmp_path / "bench.csv")
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert tuple(rows[0]) == BENCH_FIELDS

    def test_median_of_odd_runs(self, model_and_task):
        model, task = model_and_task
        times = iter([0, 1, 1, 4, 4, 6])
        report = bench(model, task, utterance_seconds=0.5, batch=1, passes=1, runs=3,
                       clock=lambda: next(times))
        assert report.run_times == (1, 3, 2)
        assert report.median_run_time_s == 2.0

    def test_batch_items_independent(self, model_and_task):
        model, task = model_and_task
        ids, lengths, noise = make_inputs(model, task, batch=3, seed=1)
        full = generate(model, ids, lengths, noise, steps=10)
        single = generate(model, ids[1:2], lengths[1:2], noise[1:2], steps=10)
        torch.testing.assert_close(full[1:2], single, rtol=0, atol=1e-5)
        assert full.shape == (3, 10 * task.hop)


class TestPlotting:
    def test_files_written(self, tmp_path):
        metrics = [{"step": s, "adv": 0.0, "pred": 10.0 - s, "length": 1.0, "total": 11.0 - s}
                   for s in range(5)]
        paths = [
            plotting.plot_loss_curves(metrics, tmp_path / "loss.png"),
            plotting.plot_length_histogram([3.0, 4.0, 4.5], tmp_path / "hist.png", "ae"),
            plotting.plot_duration_scatter([2, 4, 6], [2.5, 3.5, 6.0], tmp_path / "sc.png"),
            plotting.plot_token_positions(np.cumsum(np.ones((4, 3)), 1), tmp_path / "pos.png",
                                          ["_", "a", "_"]),
        ]
        for p in paths:
            assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_creates_parent(self, tmp_path):
        path = plotting.plot_length_histogram([1.0], tmp_path / "a" / "b" / "h.png")
        assert path.is_file()
