"""Command-line entry point: corpus synthesis, training, inference,
evaluation, gradient checking, and spectrogram dumps.

Exit codes: 0 success, 2 usage, 3 I/O, 4 divergence, 5 check failure.
The FLUENTFORGE_SEED environment variable overrides any configured seed.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import config as rc
from . import corpus as cp
from . import frontend as fe
from . import gradcheck as gc
from . import metrics as mt
from . import training as tr

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4
EXIT_CHECK = 5

_KIND_BY_FLAG = {"zero": "stutterzero", "former": "stutterformer"}


def _effective_seed(seed: int) -> int:
    env = os.environ.get("FLUENTFORGE_SEED")
    return int(env) if env else seed


def cmd_synth(args) -> int:
    samples = cp.generate_corpus(args.n, seed=_effective_seed(args.seed),
                                 balance=args.balance)
    cp.write_corpus(samples, args.out)
    print(f"wrote {len(samples)} sample pairs to {args.out}")
    return EXIT_OK


def _load_run_config(args) -> rc.RunConfig:
    cfg = rc.parse_run_config(args.config) if args.config else rc.RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.seed = _effective_seed(cfg.seed)
    return cfg


def _train_one(kind, samples, model_cfg, train_cfg, ablate, val_samples, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    model, history = tr.train(
        kind, samples, model_cfg, train_cfg, ablate=ablate,
        val_samples=val_samples,
        history_path=out_dir / "history.csv",
        checkpoint_path=out_dir / "checkpoint.ckpt")
    return model, history


def cmd_train(args) -> int:
    kind = _KIND_BY_FLAG[args.model]
    run_cfg = _load_run_config(args)
    samples = cp.read_corpus(args.corpus)
    if not samples:
        print(f"error: corpus at {args.corpus} is empty", file=sys.stderr)
        return EXIT_IO
    model_cfg = run_cfg.model_config(kind)
    train_cfg = run_cfg.train_config(kind)
    if args.epochs is not None:
        train_cfg.epochs = args.epochs
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rc.write_resolved(run_cfg, out_dir / "resolved_config.txt")
    by_id = {s.id: s for s in samples}
    try:
        if args.folds:
            plan = tr.make_splits(sorted(by_id), seed=run_cfg.seed, n_folds=args.folds)
            fold_means = []
            for k, (kept, held) in enumerate(plan.folds):
                fold_dir = out_dir / f"fold{k}"
                model, _ = _train_one(kind, [by_id[i] for i in kept], model_cfg,
                                      train_cfg, args.ablate,
                                      [by_id[i] for i in plan.validation], fold_dir)
                report = mt.evaluate_model(model, [by_id[i] for i in held])
                mt.write_report(report, fold_dir / "report.csv")
                mean_wer = report.summary()["wer_audio"][0]
                fold_means.append(mean_wer)
                print(f"fold {k}: held-out audio WER {mean_wer:.4f}")
            print(f"mean over folds: {float(np.mean(fold_means)):.4f}")
        else:
            if len(samples) >= 10:
                plan = tr.make_splits(sorted(by_id), seed=run_cfg.seed)
                train_set = [by_id[i] for i in plan.train]
                val_set = [by_id[i] for i in plan.validation]
            else:
                train_set, val_set = samples, None
            _train_one(kind, train_set, model_cfg, train_cfg, args.ablate,
                       val_set, out_dir)
            print(f"wrote checkpoint and history to {out_dir}")
    except tr.DivergenceError as exc:
        # keep partial artifacts: the exception carries the last good state
        if exc.model is not None:
            tr.save_checkpoint(exc.model, out_dir / "checkpoint.ckpt")
        if exc.history is not None:
            tr.write_history(exc.history, out_dir / "history.csv")
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    return EXIT_OK


def cmd_infer(args) -> int:
    model = tr.load_checkpoint(args.checkpoint)
    stuttered = fe.read_wav(args.in_wav)
    audio, text = mt.infer_sample(model, stuttered)
    fe.write_wav(audio, args.out_wav)
    with open(args.out_text, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    print(f"predicted transcript: {text}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = tr.load_checkpoint(args.checkpoint)
    samples = cp.read_corpus(args.corpus)
    report = mt.evaluate_model(model, samples)
    significance = None
    if args.compare:
        other = tr.load_checkpoint(args.compare)
        other_report = mt.evaluate_model(other, samples)
        ids = [r.id for r in report.rows]
        other_ids = [r.id for r in other_report.rows]
        if ids != other_ids:
            print("error: compare mode needs both checkpoints to decode "
                  "the same samples", file=sys.stderr)
            return EXIT_IO
        try:
            significance = mt.wilcoxon_signed_rank(
                report.values("wer_audio"), other_report.values("wer_audio"))
            print(f"wilcoxon: W={significance.statistic} n={significance.n} "
                  f"({significance.method}) p={significance.p_value:.6e}")
        except mt.MetricsError as exc:
            print(f"wilcoxon: {exc}")
    mt.write_report(report, args.report, significance)
    for key, (mean, std) in report.summary().items():
        print(f"{key}: {mean:.4f} +/- {std:.4f}")
    return EXIT_OK


def cmd_dump_spec(args) -> int:
    w = fe.read_wav(args.in_wav)
    mel = fe.log_mel(w)
    if args.csv:
        fe.dump_spectrogram_csv(mel, args.csv)
    if args.pgm:
        fe.dump_spectrogram_pgm(mel, args.pgm)
    print(f"{mel.n_frames} frames x {mel.n_mels} channels")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    try:
        results = gc.run_all(only=args.module)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_USAGE
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fluentforge",
        description="Stuttered-to-fluent speech conversion toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic paired corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--balance", action="store_true")
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("train", help="train a model on a corpus directory")
    s.add_argument("--model", choices=sorted(_KIND_BY_FLAG), required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--ablate", action="store_true")
    s.add_argument("--folds", type=int, default=0)
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("infer", help="convert one stuttered WAV")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--in", dest="in_wav", required=True)
    s.add_argument("--out-wav", required=True)
    s.add_argument("--out-text", required=True)
    s.set_defaults(fn=cmd_infer)

    s = sub.add_parser("eval", help="score a checkpoint on a corpus")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--compare")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("dump-spec", help="write log-Mel CSV/PGM for a WAV")
    s.add_argument("--in", dest="in_wav", required=True)
    s.add_argument("--csv")
    s.add_argument("--pgm")
    s.set_defaults(fn=cmd_dump_spec)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--module")
    s.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, fe.FrontendError, cp.CorpusError, tr.CheckpointError,
            rc.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except tr.TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
