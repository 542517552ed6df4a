"""Command-line interface: one executable, one subcommand per stage.

Every stage works on a run directory so the toy experiment reproduces
end to end:

    lidkit synth-corpus --run RUN
    lidkit featurize    --run RUN
    lidkit train-bn     --run RUN
    lidkit extract-bn   --run RUN
    lidkit train-lid    --run RUN
    lidkit score        --run RUN --split test_1s --splice-alphas 0.8,1.2
    lidkit evaluate     --run RUN

Failures exit non-zero with a one-line JSON error on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from lidkit import pipeline
from lidkit.audio import read_wav, write_wav
from lidkit.config import load_config
from lidkit.errors import LidKitError
from lidkit.gradcheck import gradcheck_bn_dnn, gradcheck_classifier
from lidkit.tsm import StretchSpec, splice_rates, time_stretch


def _parse_alphas(text: str) -> tuple[float, ...]:
    if not text:
        return ()
    return tuple(float(item) for item in text.split(","))


def _add_common(sub: argparse.ArgumentParser, run: bool = True) -> None:
    if run:
        sub.add_argument("--run", required=True, help="run directory")
    sub.add_argument("--config", default=None, help="TOML config file")
    sub.add_argument("--profile", default=None,
                     choices=["desk-scale", "paper-scale"],
                     help="built-in configuration profile")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lidkit", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("synth-corpus", help="generate the synthetic corpus")
    _add_common(sub)
    sub.add_argument("--seed", type=int, default=None, help="override master seed")

    sub = subs.add_parser("tsm", help="time-stretch one WAV file")
    sub.add_argument("--alpha", type=float, required=True)
    sub.add_argument("--lock-phases", action="store_true")
    sub.add_argument("input")
    sub.add_argument("output")

    sub = subs.add_parser("splice", help="concatenate a WAV with stretched copies")
    sub.add_argument("--alphas", required=True, help="comma-separated, e.g. 0.8,1.2")
    sub.add_argument("input")
    sub.add_argument("output")

    for name, help_text in [
        ("featurize", "extract PLP+pitch features, VAD, labels, CMVN"),
        ("train-bn", "train the bottleneck phone classifier"),
        ("extract-bn", "write bottleneck feature archives"),
        ("train-lid", "train the LSTM language classifier"),
    ]:
        sub = subs.add_parser(name, help=help_text)
        _add_common(sub)
        if name == "featurize":
            sub.add_argument("--jobs", type=int, default=1)

    sub = subs.add_parser("score", help="score a split's utterances")
    _add_common(sub)
    sub.add_argument("--split", default="test")
    sub.add_argument("--splice-alphas", default="",
                     help="test-time TSM, e.g. 0.8,1.2 (empty = none)")
    sub.add_argument("--jobs", type=int, default=1)
    sub.add_argument("--output", default=None, help="score file name")

    sub = subs.add_parser("evaluate", help="C_avg / EER report over score files")
    _add_common(sub)
    sub.add_argument("--scores", nargs="*", default=None,
                     help="score files (default: all in run/scores)")

    sub = subs.add_parser("gradcheck",
                          help="finite-difference check of all gradients")
    sub.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def _print_table(report: dict) -> None:
    header = f"{'condition':<24} {'C_avg':>8} {'EER%':>8} {'acc%':>8} {'trials':>7}"
    print(header)
    print("-" * len(header))
    for name, cond in sorted(report["conditions"].items()):
        print(f"{name:<24} {cond['cavg_min_sweep']:>8.4f} "
              f"{cond['eer_pooled'] * 100:>8.2f} "
              f"{cond['accuracy'] * 100:>8.2f} {cond['num_trials']:>7}")


def run_command(args: argparse.Namespace) -> int:
    if args.command == "tsm":
        wave = read_wav(args.input)
        out = time_stretch(wave, StretchSpec(alpha=args.alpha,
                                             lock_phases=args.lock_phases))
        write_wav(out, args.output)
        print(f"{args.input} ({len(wave)} samples) -> "
              f"{args.output} ({len(out)} samples) at alpha={args.alpha}")
        return 0

    if args.command == "splice":
        wave = read_wav(args.input)
        out = splice_rates(wave, _parse_alphas(args.alphas))
        write_wav(out, args.output)
        print(f"{args.input} -> {args.output} ({len(out)} samples)")
        return 0

    if args.command == "gradcheck":
        cls_result = gradcheck_classifier()
        dnn_result = gradcheck_bn_dnn()
        worst = max(cls_result.max_relative_error, dnn_result.max_relative_error)
        print(f"classifier max relative error: {cls_result.max_relative_error:.3e}")
        print(f"bn-dnn     max relative error: {dnn_result.max_relative_error:.3e}")
        if worst > args.tolerance:
            print(f"FAIL: {worst:.3e} > {args.tolerance:.1e}")
            return 1
        print(f"OK: {worst:.3e} <= {args.tolerance:.1e}")
        return 0

    cfg = load_config(args.config, args.profile)
    paths = pipeline.RunPaths(Path(args.run))

    if args.command == "synth-corpus":
        if args.seed is not None:
            from dataclasses import replace
            cfg = replace(cfg, seed=args.seed)
        manifest = pipeline.stage_synth_corpus(paths, cfg)
        print(f"wrote {len(manifest.entries)} utterances "
              f"({len(manifest.languages)} languages) to {paths.corpus_dir}")
    elif args.command == "featurize":
        pipeline.stage_featurize(paths, cfg, jobs=args.jobs)
        print(f"features + labels + CMVN in {paths.features_dir}")
    elif args.command == "train-bn":
        report = pipeline.stage_train_bn(paths, cfg)
        print(f"BN training: final loss {report['epoch_loss'][-1]:.4f}, "
              f"dev frame accuracy {report['dev_frame_accuracy']:.3f}")
    elif args.command == "extract-bn":
        pipeline.stage_extract_bn(paths, cfg)
        print(f"bottleneck features in {paths.bnfeats_dir}")
    elif args.command == "train-lid":
        report = pipeline.stage_train_lid(paths, cfg)
        print(f"LID training: final loss {report['epoch_loss'][-1]:.4f}, "
              f"dev block accuracy {report['dev_block_accuracy']:.3f}")
    elif args.command == "score":
        out = pipeline.stage_score(paths, cfg, args.split,
                                   _parse_alphas(args.splice_alphas),
                                   output_name=args.output, jobs=args.jobs)
        print(f"scores written to {out}")
    elif args.command == "evaluate":
        files = [Path(f) for f in args.scores] if args.scores else None
        report = pipeline.stage_evaluate(paths, files)
        _print_table(report)
        print(f"full report: {paths.reports_dir / 'metrics.json'}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run_command(args)
    except LidKitError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}),
              file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": "io-error", "message": str(exc)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
