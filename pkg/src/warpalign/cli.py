"""Command-line entry point: ``warpalign <subcommand> ...``.

Every subcommand accepts ``--config FILE`` holding ``key=value`` lines whose
keys are the long option names (dashes or underscores). Flags given on the
command line override the file. Exit status is 0 on success, 1 when inputs
fail validation or a check does not pass, and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import WarpAlignError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_USAGE = 2

log = logging.getLogger("warpalign")


class UsageError(Exception):
    pass


def _bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def read_config(path):
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _config_defaults(parser, values):
    """Convert config strings with each option's own type and check the keys."""
    actions = {a.dest: a for a in parser._actions if a.option_strings}
    defaults = {}
    for key, text in values.items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r} for this command")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            convert = _bool
        else:
            convert = action.type or str
        try:
            value = convert(text)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"config key {key!r}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config key {key!r}: {value!r} not in {sorted(action.choices)}")
        defaults[key] = value
    return defaults


def _write_rows(path, header, rows):
    out = sys.stdout if path in (None, "-") else open(path, "w", newline="")
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()


def _train_config(args):
    from .softdtw import DtwConfig
    from .toytts.train import TrainConfig
    return TrainConfig(steps=args.steps, batch_size=args.batch, learning_rate=args.lr,
                       loss=args.loss, lambda_pred=args.lambda_pred,
                       lambda_length=args.lambda_length, adversarial=args.adversarial,
                       stochastic_durations=args.stochastic_durations,
                       ema_decay=args.ema_decay, norm=args.norm, sigma2=args.sigma2,
                       length_unit=args.length_unit, length_bias=args.length_bias,
                       window_margin=args.window_margin,
                       seed=args.seed,
                       dtw=DtwConfig(warp_penalty=args.warp_penalty, temperature=args.tau))


def cmd_train_toy(args):
    from .plotting import plot_loss_curves
    from .toytts.train import train
    cfg = _train_config(args)
    result = train(cfg=cfg, out_dir=args.out, log_every=args.log_every)
    out = Path(args.out)
    plot_loss_curves(result.metrics, out / "loss_curves.png")
    first, last = result.metrics[0], result.metrics[-1]
    _write_rows(None, ["metric", "value"], [
        ["steps", cfg.steps],
        ["initial_pred", repr(first["pred"])],
        ["final_pred", repr(result.final("pred"))],
        ["final_length", repr(result.final("length"))],
        ["final_total", repr(last["total"])],
        ["checkpoint", str(result.checkpoint)],
    ])
    return EXIT_OK


def _load_checkpoint(path):
    from .toytts.train import load_model
    checkpoint = Path(path)
    if (checkpoint / "checkpoint").is_dir():
        checkpoint = checkpoint / "checkpoint"
    if not (checkpoint / "manifest.txt").is_file():
        raise UsageError(f"{path} is not a checkpoint directory")
    return load_model(checkpoint)


def _fresh_model(seed):
    import torch
    from .toytts.decoder import ToyGenerator
    from .toytts.task import ToyTask
    from .toytts.train import TrainConfig
    torch.manual_seed(seed)
    task = ToyTask()
    cfg = TrainConfig()
    model = ToyGenerator.for_task(task, norm=cfg.norm, length_unit=cfg.length_unit,
                                  length_bias=cfg.length_bias)
    model.eval()
    return model, task


def cmd_eval_durations(args):
    from .plotting import plot_duration_scatter, plot_length_histogram, plot_token_positions
    from .toytts.evaluate import eval_durations, write_duration_report
    model, task, _ = _load_checkpoint(args.checkpoint)
    report = eval_durations(model, task, num_utterances=args.utterances,
                            z_draws=args.z_draws, text=args.text, seed=args.seed)
    out = Path(args.out) if args.out else Path(args.checkpoint) / "eval"
    write_duration_report(report, out)
    plot_length_histogram(report.z_totals, out / "z_lengths.png", report.text)
    plot_duration_scatter([r["true_steps"] for r in report.token_rows],
                          [r["predicted_steps"] for r in report.token_rows],
                          out / "durations.png")
    plot_token_positions(report.z_positions, out / "token_positions.png")
    summary = report.summary()
    _write_rows(None, ["metric", "value"], [[k, v] for k, v in summary.items()])
    failed = []
    if args.max_median_error is not None and not (
            summary["median_relative_error"] <= args.max_median_error):
        failed.append("median_relative_error")
    if args.min_correlation is not None and not (
            summary["length_correlation"] >= args.min_correlation):
        failed.append("length_correlation")
    for name in failed:
        print(f"check failed: {name}", file=sys.stderr)
    return EXIT_VALIDATION if failed else EXIT_OK


def cmd_dtw_eval(args):
    from .io import read_dump
    from .softdtw import DtwConfig, hard_dtw, soft_dtw
    a, _ = read_dump(args.file_a)
    b, _ = read_dump(args.file_b)
    cfg = DtwConfig(warp_penalty=args.warp_penalty, temperature=args.tau, band=args.band)
    soft = soft_dtw(a, b, cfg)
    hard = hard_dtw(a, b, cfg)
    _write_rows(None, ["value", "hard_value", "path_length"],
                [[repr(float(soft.value)), repr(hard.value), hard.path_length]])
    if args.path:
        _write_rows(args.path, ["k", "gen_idx", "gt_idx"],
                    [[k, i, j] for k, (i, j) in enumerate(hard.path)])
    return EXIT_OK


def cmd_spectrogram(args):
    from .audio import MelParams, mel_spectrogram
    from .io import read_wav, write_spectrogram
    samples, rate = read_wav(args.wav)
    params = MelParams(frame_length=args.frame_length, frame_step=args.frame_step,
                       num_bins=args.bins, sample_rate=float(rate),
                       lower_edge=args.lower_edge, upper_edge=args.upper_edge)
    values = mel_spectrogram(samples, invert_mu_law=args.mu_law, params=params)
    write_spectrogram(args.out, values, rate, params.frame_step)
    _write_rows(None, ["frames", "bins", "dump"], [[values.shape[0], values.shape[1], args.out]])
    return EXIT_OK


def cmd_align_demo(args):
    import torch
    from .plotting import plot_length_histogram, plot_token_positions
    from .toytts.text import preprocess_tokens
    if args.z_draws < 1:
        raise UsageError("--z-draws must be at least 1")
    if args.checkpoint:
        model, task, _ = _load_checkpoint(args.checkpoint)
    else:
        model, task = _fresh_model(args.seed)
    seq = preprocess_tokens(args.text, task.vocab)
    rng = np.random.default_rng(args.seed)
    aligner = model.aligner
    dtype = aligner.embed.weight.dtype
    ids = torch.as_tensor(np.repeat(seq.ids[None], args.z_draws, axis=0))
    lengths = torch.full((args.z_draws,), seq.true_length)
    noise = torch.as_tensor(rng.standard_normal((args.z_draws, aligner.cfg.latent_dim)),
                            dtype=dtype)
    with torch.no_grad():
        out = aligner(ids, lengths, noise, out_length=1)
    symbols = task.vocab.decode(seq.ids[:seq.true_length])
    rows = []
    for d in range(args.z_draws):
        for n, sym in enumerate(symbols):
            rows.append([d, n, sym, repr(float(out.token_lengths[d, n])),
                         repr(float(out.token_ends[d, n])),
                         repr(float(out.token_centres[d, n]))])
    _write_rows(None, ["draw", "token", "symbol", "length", "end", "centre"], rows)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_rows(out_dir / "positions.csv",
                    ["draw", "token", "symbol", "length", "end", "centre"], rows)
        plot_token_positions(out.token_ends.numpy(), out_dir / "token_positions.png", symbols)
        plot_length_histogram(out.predicted_total_length.numpy(), out_dir / "lengths.png",
                              args.text)
    return EXIT_OK


def cmd_gradcheck(args):
    from .diffcheck import check_all
    reports = check_all(seeds=tuple(range(args.seeds)), tolerance=args.tolerance,
                        step=args.step)
    _write_rows(None, ["name", "seed", "max_rel_err", "excluded_pct", "pass"],
                [r.line().split(",") for r in reports])
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VALIDATION


def cmd_bench(args):
    import torch
    from .toytts.bench import BENCH_FIELDS, bench, write_bench
    torch.set_num_threads(args.threads)
    if args.checkpoint:
        model, task, _ = _load_checkpoint(args.checkpoint)
    else:
        model, task = _fresh_model(args.seed)
    report = bench(model, task, utterance_seconds=args.seconds, batch=args.batch,
                   passes=args.passes, runs=args.runs, seed=args.seed)
    row = report.row()
    _write_rows(None, BENCH_FIELDS, [[row[k] for k in BENCH_FIELDS]])
    if args.out:
        write_bench(report, args.out)
    return EXIT_OK


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {value}")
    return value


def _optional_float(text):
    return None if str(text).lower() in ("", "none") else float(text)


def build_parser():
    parser = argparse.ArgumentParser(prog="warpalign", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text, required=()):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="file of key=value defaults")
        p.set_defaults(func=func, required=required)
        return p

    p = add("train-toy", cmd_train_toy, "train the toy generator and write metrics",
            ("out",))
    p.add_argument("--steps", type=_positive_int, default=2000)
    p.add_argument("--batch", type=_positive_int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss", choices=("l1", "dtw"), default="dtw")
    p.add_argument("--adversarial", action="store_true")
    p.add_argument("--stochastic-durations", action="store_true")
    p.add_argument("--out", help="output directory (required)")
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--lambda-pred", type=float, default=1.0)
    p.add_argument("--lambda-length", type=float, default=0.1)
    p.add_argument("--ema-decay", type=_optional_float, default=None)
    p.add_argument("--norm", choices=("affine", "batch"), default="batch")
    p.add_argument("--sigma2", type=float, default=10.0)
    p.add_argument("--length-unit", type=float, default=1.0)
    p.add_argument("--length-bias", type=float, default=6.0,
                   help="initial bias of the length head pre-activation")
    p.add_argument("--window-margin", type=int, default=0,
                   help="steps a training window may extend past either utterance end")
    p.add_argument("--tau", type=float, default=0.01, help="soft-DTW temperature")
    p.add_argument("--warp-penalty", type=float, default=1.0)
    p.add_argument("--log-every", type=int, default=100)

    p = add("eval-durations", cmd_eval_durations, "score predicted token durations",
            ("checkpoint",))
    p.add_argument("--checkpoint", help="train-toy output or checkpoint dir (required)")
    p.add_argument("--out", help="report directory (default CHECKPOINT/eval)")
    p.add_argument("--utterances", type=_positive_int, default=64)
    p.add_argument("--z-draws", type=_positive_int, default=128)
    p.add_argument("--text", default="aeiokl.jaeio")
    p.add_argument("--seed", type=int, default=10_007)
    p.add_argument("--max-median-error", type=float, default=None,
                   help="exit 1 if the median relative error exceeds this")
    p.add_argument("--min-correlation", type=float, default=None,
                   help="exit 1 if the length correlation falls below this")

    p = add("dtw-eval", cmd_dtw_eval, "soft and hard DTW between two spectrogram dumps")
    p.add_argument("file_a")
    p.add_argument("file_b")
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--warp-penalty", type=float, default=1.0)
    p.add_argument("--band", type=int, default=None)
    p.add_argument("--path", help="write the hard path as CSV here ('-' for stdout)")

    p = add("spectrogram", cmd_spectrogram, "log-mel spectrogram of a WAV file", ("out",))
    p.add_argument("wav")
    p.add_argument("--out", help="raw float32 dump path (required)")
    p.add_argument("--mu-law", action="store_true", help="samples are mu-law encoded")
    p.add_argument("--frame-length", type=_positive_int, default=2048)
    p.add_argument("--frame-step", type=_positive_int, default=1024)
    p.add_argument("--bins", type=_positive_int, default=80)
    p.add_argument("--lower-edge", type=float, default=80.0)
    p.add_argument("--upper-edge", type=float, default=7600.0)

    p = add("align-demo", cmd_align_demo, "token positions for one text under many latents",
            ("text",))
    p.add_argument("--text", help="symbols to align (required)")
    p.add_argument("--z-draws", type=int, default=128)
    p.add_argument("--checkpoint", help="trained model (default: fresh toy model)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for positions.csv and figures")

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of every analytic gradient")
    p.add_argument("--seeds", type=_positive_int, default=3)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--step", type=float, default=1e-5)

    p = add("bench", cmd_bench, "median batched inference time and realtime factor")
    p.add_argument("--checkpoint", help="trained model (default: fresh toy model)")
    p.add_argument("--seconds", type=float, default=3.0, help="audio seconds per utterance")
    p.add_argument("--batch", type=_positive_int, default=2)
    p.add_argument("--passes", type=_positive_int, default=10)
    p.add_argument("--runs", type=_positive_int, default=101)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write the report CSV here")
    return parser


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            subparser = parser._subparsers._group_actions[0].choices[args.command]
            subparser.set_defaults(**_config_defaults(subparser, read_config(args.config)))
            args = parser.parse_args(argv)
        missing = [name for name in args.required if getattr(args, name) is None]
        if missing:
            raise UsageError("missing required option(s): " + ", ".join(
                "--" + name.replace("_", "-") for name in missing))
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    except (WarpAlignError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
