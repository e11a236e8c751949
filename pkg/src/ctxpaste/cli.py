"""Command-line entry point for the augmentation pipeline.

Subcommands cover the full flow: cut a bank from a segmented dataset,
generate contextual training samples, train the builtin scorer, augment a
dataset in any mode, render previews, and run the synthetic benchmark.

Exit codes: 0 success, 1 validation/usage error, 2 I/O error. Diagnostics
go to standard error; every source of randomness is controlled by --seed.
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
from pathlib import Path

from .augment import MODES, AugmentationConfig, augment_dataset
from .bank import InstanceBank, build_instance_bank
from .bridge import ProtocolError, RemoteScoreError, ScorerChannel
from .contexts import (
    ContextDataset,
    ContextGenParams,
    build_context_dataset,
    dataset_shape_histogram,
)
from .geometry import ShapeHistogram
from .scorer import TrainParams, dataset_accuracy, load_scorer, save_scorer, train_builtin, validation_split
from .synth import SynthSpec, run_benchmark
from .voc import AnnotationError, VocDataset


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that exits with code 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _log(message: str):
    print(message, file=sys.stderr)


def build_parser() -> _Parser:
    parser = _Parser(prog="ctxpaste", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-bank", help="cut object instances into a bank directory")
    p.add_argument("--dataset", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--include-difficult", action="store_true")

    p = sub.add_parser("gen-contexts", help="generate masked context samples")
    p.add_argument("--dataset", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--contexts-per-box", type=int, default=3)
    p.add_argument("--bg-ratio", type=int, default=3)

    p = sub.add_parser("train-scorer", help="train the builtin scorer")
    p.add_argument("--contexts", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--learning-rate", type=float, default=1e-2)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--curve", type=Path, default=None, help="write a loss-curve PNG")

    for name in ("augment", "preview"):
        p = sub.add_parser(
            name,
            help="write augmented dataset" if name == "augment" else "render preview figures",
        )
        p.add_argument("--dataset", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--bank", type=Path, default=None)
        p.add_argument("--scorer", type=Path, default=None)
        p.add_argument("--scorer-cmd", type=str, default=None)
        p.add_argument("--mode", choices=MODES, default="context")
        p.add_argument("--category", type=str, default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--paste-prob", type=float, default=0.5)
        p.add_argument("--max-instances", type=int, default=2)
        p.add_argument("--candidates", type=int, default=200)
        p.add_argument("--threshold", type=float, default=0.8)
        p.add_argument(
            "--blend",
            choices=("random", "none", "linear", "gaussian", "motion", "poisson"),
            default="random",
        )
        if name == "preview":
            p.add_argument("--n", type=int, default=4, help="number of images to render")

    p = sub.add_parser("eval-synth", help="run the synthetic placement benchmark")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", type=int, default=None, help="training scenes to generate")
    p.add_argument("--threshold", type=float, default=None)

    return parser


def _cmd_build_bank(args) -> int:
    dataset = VocDataset(args.dataset)
    records = dataset.load_all(with_masks=True)
    bank = build_instance_bank(records, include_difficult=args.include_difficult)
    if len(bank) == 0:
        raise ValueError(f"no segmented instances found under {args.dataset}")
    bank.save(args.out)
    hist = dataset_shape_histogram(records)
    (Path(args.out) / "shapes.json").write_text(hist.to_json())
    _log(f"bank: {len(bank)} instances, categories {bank.categories} -> {args.out}")
    return 0


def _cmd_gen_contexts(args) -> int:
    records = VocDataset(args.dataset).load_all(with_masks=False)
    params = ContextGenParams(
        contexts_per_box=args.contexts_per_box, bg_ratio=args.bg_ratio
    )
    dataset = build_context_dataset(records, params, seed=args.seed)
    dataset.save(args.out)
    _log(f"contexts: {len(dataset.samples)} samples -> {args.out}")
    return 0


def _cmd_train_scorer(args) -> int:
    dataset = ContextDataset.load(args.contexts)
    params = TrainParams(
        learning_rate=args.learning_rate,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        early_stop_patience=args.patience,
        seed=args.seed,
    )
    scorer = train_builtin(dataset, params)
    save_scorer(scorer, args.out)
    _, val_idx = validation_split(len(dataset.samples), params.val_fraction, params.seed)
    acc = dataset_accuracy(scorer, dataset, val_idx)
    _log(f"scorer: val accuracy {acc:.3f} -> {args.out}")
    if args.curve is not None:
        from .report import render_training_curve

        render_training_curve(scorer, args.curve)
        _log(f"curve -> {args.curve}")
    return 0


def _load_hist(args, records) -> ShapeHistogram | None:
    if args.bank is not None:
        shapes_path = Path(args.bank) / "shapes.json"
        if shapes_path.exists():
            return ShapeHistogram.from_json(shapes_path.read_text())
    if any(rec.annotation.objects for rec in records):
        return dataset_shape_histogram(records)
    return None


def _cmd_augment(args, preview: bool) -> int:
    records = VocDataset(args.dataset).load_all(with_masks=True)
    if preview:
        records = sorted(records, key=lambda r: r.image_id)[: args.n]

    bank = None
    if args.bank is not None:
        bank = InstanceBank.load(args.bank)
    elif args.mode != "enlarge":
        raise ValueError(f"--bank is required for mode {args.mode!r}")

    channel = None
    scorer = None
    try:
        if args.mode == "context":
            if args.scorer_cmd:
                channel = ScorerChannel(shlex.split(args.scorer_cmd))
                scorer = channel
            elif args.scorer is not None:
                scorer = load_scorer(args.scorer)
            else:
                raise ValueError("context mode needs --scorer or --scorer-cmd")

        hist = _load_hist(args, records)
        if args.mode == "context" and hist is None:
            raise ValueError(
                "context mode needs box shapes: give a --bank with shapes.json "
                "or a dataset with annotated objects"
            )
        cfg = AugmentationConfig(
            paste_probability=args.paste_prob,
            max_instances=args.max_instances,
            candidates_per_image=args.candidates,
            score_threshold=args.threshold,
            blend=args.blend,
            seed=args.seed,
            category=args.category,
        )
        results = augment_dataset(
            records,
            bank,
            scorer,
            hist,
            cfg,
            args.mode,
            out_dir=None if preview else args.out,
        )
    finally:
        if channel is not None:
            channel.close()

    n_pastes = sum(len(r.provenance["pastes"]) for r in results)
    if preview:
        from .report import render_previews

        paths = render_previews(results, args.out)
        _log(f"preview: {len(paths)} figures ({n_pastes} pastes) -> {args.out}")
    else:
        _log(f"augment[{args.mode}]: {len(results)} images, {n_pastes} pastes -> {args.out}")
    return 0


def _cmd_eval_synth(args) -> int:
    spec_kwargs = {"seed": args.seed}
    if args.images is not None:
        spec_kwargs["n_images"] = args.images
    spec = SynthSpec(**spec_kwargs)
    cfg = None
    if args.threshold is not None:
        cfg = AugmentationConfig(seed=args.seed, score_threshold=args.threshold)
    result = run_benchmark(spec, cfg)
    from .report import write_benchmark_report

    paths = write_benchmark_report(result, spec, args.out)
    _log(
        "benchmark: context={context_consistency:.3f} random={random_consistency:.3f} "
        "val_acc={scorer_val_accuracy:.3f}".format(**result.report)
    )
    _log(f"report -> {paths['json']}, {paths['csv']}, {paths['figure']}")
    print(json.dumps(result.report, indent=2, sort_keys=True))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "build-bank":
            return _cmd_build_bank(args)
        if args.command == "gen-contexts":
            return _cmd_gen_contexts(args)
        if args.command == "train-scorer":
            return _cmd_train_scorer(args)
        if args.command == "augment":
            return _cmd_augment(args, preview=False)
        if args.command == "preview":
            return _cmd_augment(args, preview=True)
        if args.command == "eval-synth":
            return _cmd_eval_synth(args)
        parser.error(f"unknown command {args.command!r}")
    except (AnnotationError, ValueError, KeyError, ProtocolError, RemoteScoreError, RuntimeError) as e:
        _log(f"error: {e}")
        return 1
    except OSError as e:
        _log(f"i/o error: {e}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
