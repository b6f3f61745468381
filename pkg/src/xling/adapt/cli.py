"""Command line interface"""

import argparse
import logging
import os
import sys
from os.path import join
from typing import Dict, Optional, Sequence

from hdx.utilities.easy_logging import setup_logging
from hdx.utilities.loader import load_yaml
from hdx.utilities.saver import save_yaml

from . import __version__, derive_seed
from .corpus import CorpusError, compute_stats, format_stats_row, load_manifest, save_manifest
from .dsp import AugmentationRecipe, DspError, apply_recipe, load_noise_pool, load_rir_pool
from .evaluation import EvaluationError, score_files, write_records
from .features import (
    FeatureConfig,
    FeatureError,
    featurize,
    load_extractor,
    save_extractor,
    save_features,
    train_embedding_extractor,
)
from .nnet import (
    ModelError,
    TrainConfig,
    desk_scale_layers,
    init_model,
    load_checkpoint,
    full_scale_layers,
    save_checkpoint,
    train,
    transfer_full,
    transfer_hidden,
)
from .pipeline import (
    PipelineError,
    extractor_swap_experiment,
    featurize_manifest,
    get_presets,
    input_normalisation,
    load_pipeline_config,
    render_ablation_table,
    run_ablation,
    run_pipeline,
    write_benchmark_config,
    write_reports,
)
from .synthbench import SynthError, load_phone_set, prepare_benchmark

logger = logging.getLogger(__name__)

RUNTIME_ERRORS = (
    CorpusError,
    SynthError,
    DspError,
    FeatureError,
    ModelError,
    PipelineError,
    EvaluationError,
    OSError,
)


def write_run_record(out_dir: str, command: str, args: argparse.Namespace, config: Optional[Dict] = None) -> None:
    """Write run.yaml with the command, its arguments and resolved configuration"""
    os.makedirs(out_dir, exist_ok=True)
    arguments = {
        key: value
        for key, value in sorted(vars(args).items())
        if key not in ("func", "command")
    }
    record = {"command": command, "version": __version__, "arguments": arguments}
    if config is not None:
        record["config"] = config
    save_yaml(record, join(out_dir, "run.yaml"))


def _features_config(args: argparse.Namespace) -> FeatureConfig:
    if getattr(args, "full_scale", False):
        return FeatureConfig.full_scale()
    return FeatureConfig()


def cmd_synth(args: argparse.Namespace) -> int:
    layout = prepare_benchmark(args.out, seed=args.seed, scale=args.scale)
    path = write_benchmark_config(layout, args.seed)
    write_run_record(args.out, "synth", args)
    print(f"Benchmark written to {layout.root}, pipeline configuration {path}")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    for path in args.manifest:
        manifest = load_manifest(path, check_audio=args.check_audio)
        print(format_stats_row(manifest.name, compute_stats(manifest)))
    return 0


def cmd_augment(args: argparse.Namespace) -> int:
    if args.recipe_file:
        recipe = AugmentationRecipe.from_dict(load_yaml(args.recipe_file))
    elif args.preset == "stage1":
        recipe = AugmentationRecipe.stage1(args.seed, speed=not args.no_speed)
    else:
        recipe = AugmentationRecipe.stage2(args.seed, speed=not args.no_speed)
    rir_pool = load_rir_pool(args.rir) if args.rir else None
    noise_pool = load_noise_pool(args.noise) if args.noise else None
    manifest = load_manifest(args.manifest)
    cfg = FeatureConfig()
    expanded = apply_recipe(
        manifest,
        recipe,
        args.out,
        rir_pool,
        noise_pool,
        cfg.window,
        cfg.shift,
        args.jobs,
    )
    save_manifest(expanded, join(args.out, "manifest.jsonl"))
    write_run_record(args.out, "augment", args, {"recipe": recipe.to_dict()})
    print(f"{len(manifest)} utterances expanded to {len(expanded)}")
    return 0


def cmd_featurize(args: argparse.Namespace) -> int:
    cfg = _features_config(args)
    manifest = load_manifest(args.manifest)
    if args.extractor:
        extractor = load_extractor(args.extractor)
    else:
        extractor = train_embedding_extractor(manifest, cfg, seed=args.seed)
    feature_dir = join(args.out, "features")
    os.makedirs(feature_dir, exist_ok=True)
    records = []
    for utterance in manifest:
        inputs = featurize(utterance, extractor, cfg)
        path = join(feature_dir, f"{utterance.id}.feat")
        save_features(inputs, path)
        records.append({"id": utterance.id, "features": path, "frames": inputs.frames})
    save_extractor(extractor, join(args.out, "extractor.bin"))
    write_records(join(args.out, "features.jsonl"), records)
    write_run_record(args.out, "featurize", args, {"features": cfg.to_dict()})
    print(f"Featurized {len(records)} utterances with extractor {extractor.fingerprint}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _features_config(args)
    manifest = load_manifest(args.manifest)
    phones = load_phone_set(args.phones)
    train_cfg = TrainConfig(
        initial_lr=args.initial_lr,
        final_lr=args.final_lr,
        epochs=args.epochs,
        batch=args.batch,
        bptt_chunk=args.bptt_chunk,
        seed=args.seed,
        dropout_rate=args.dropout,
    )
    if args.init:
        model = load_checkpoint(args.init)
        if not args.extractor:
            raise PipelineError("--init needs the --extractor the model was trained with!")
        extractor = load_extractor(args.extractor)
        if tuple(phones) != model.phone_set:
            model = transfer_hidden(model, phones, args.seed)
    else:
        extractor = (
            load_extractor(args.extractor)
            if args.extractor
            else train_embedding_extractor(manifest, cfg, seed=args.seed)
        )
        model = None
    examples = featurize_manifest(
        manifest,
        extractor,
        cfg,
        model.fingerprint if model else extractor.fingerprint,
        args.override_fingerprint,
        args.jobs,
    )
    if model is None:
        shift, scale = input_normalisation(examples)
        model = init_model(
            cfg.input_dim,
            full_scale_layers() if args.full_scale else desk_scale_layers(),
            phones,
            extractor.fingerprint,
            derive_seed(args.seed, "train"),
            shift,
            scale,
        )
    model, log = train(model, examples, train_cfg)
    save_checkpoint(model, join(args.out, "model.ckpt"))
    save_extractor(extractor, join(args.out, "extractor.bin"))
    save_yaml(log.to_dict(), join(args.out, "log.yaml"))
    write_run_record(args.out, "train", args, {"train": train_cfg.to_dict()})
    print(f"Trained {len(log.epochs)} epochs, final loss {log.losses[-1]:.4f}")
    return 0


def cmd_transfer(args: argparse.Namespace) -> int:
    source = load_checkpoint(args.checkpoint)
    if args.mode == "hidden":
        if not args.phones:
            raise PipelineError("Hidden transfer needs --phones!")
        target = transfer_hidden(source, load_phone_set(args.phones), args.seed)
    else:
        target = transfer_full(source)
    save_checkpoint(target, join(args.out, "model.ckpt"))
    write_run_record(args.out, "transfer", args)
    print(f"{args.mode} transfer written with {len(target.phone_set)} output phones")
    return 0


def cmd_pipeline(args: argparse.Namespace) -> int:
    cfg = load_pipeline_config(args.config, args.seed, args.out)
    if args.jobs:
        cfg.jobs = args.jobs
    report = run_pipeline(cfg)
    write_reports([report], cfg.output_dir)
    write_run_record(cfg.output_dir, "pipeline", args, cfg.to_dict())
    for result in report.results:
        print(f"{result.test_set} | {100 * result.report.wer:.2f}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = load_pipeline_config(args.config, args.seed, args.out)
    if args.jobs:
        cfg.jobs = args.jobs
    reports = run_ablation(cfg, get_presets(args.setups))
    write_reports(reports, cfg.output_dir)
    write_run_record(cfg.output_dir, "ablate", args, cfg.to_dict())
    print(render_ablation_table(reports), end="")
    return 0


def cmd_swap_ivec(args: argparse.Namespace) -> int:
    if not args.override_fingerprint:
        raise PipelineError(
            "The extractor swap evaluates mismatched extractors and needs --override-fingerprint!"
        )
    cfg = load_pipeline_config(args.config, args.seed, args.out)
    if args.jobs:
        cfg.jobs = args.jobs
    report = extractor_swap_experiment(cfg)
    table = report.render()
    with open(join(cfg.output_dir, "swap.txt"), "w", encoding="utf-8", newline="\n") as fp:
        fp.write(table)
    save_yaml(report.to_dict(), join(cfg.output_dir, "swap.yaml"))
    write_run_record(cfg.output_dir, "swap-ivec", args, cfg.to_dict())
    print(table, end="")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    report = score_files(args.ref, args.hyp)
    print(
        f"WER {100 * report.wer:.2f} ({report.substitutions} sub, {report.deletions} del, {report.insertions} ins, {report.reference_words} words)"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xling-adapt",
        description="Cross-lingual staged acoustic model adaptation",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--log-level", default="INFO", help="Console log level")
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        sub = subparsers.add_parser(name, help=help_text, description=help_text)
        sub.set_defaults(func=func)
        return sub

    def add_config(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--config", required=True, help="Pipeline configuration YAML")
        sub.add_argument("--seed", type=int, default=None, help="Override global seed")
        sub.add_argument("--out", default=None, help="Override output directory")
        sub.add_argument("--jobs", type=int, default=None, help="Worker threads")

    sub = add("synth", cmd_synth, "Write the synthetic benchmark")
    sub.add_argument("--out", required=True)
    sub.add_argument("--seed", type=int, default=7)
    sub.add_argument("--scale", type=float, default=1.0, help="Duration multiplier")

    sub = add("stats", cmd_stats, "Print corpus statistics")
    sub.add_argument("--manifest", required=True, nargs="+")
    sub.add_argument("--check-audio", action="store_true")

    sub = add("augment", cmd_augment, "Expand a manifest with augmented copies")
    sub.add_argument("--manifest", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--preset", choices=("stage1", "stage2"), default="stage1")
    sub.add_argument("--recipe-file", default=None, help="Recipe YAML")
    sub.add_argument("--no-speed", action="store_true")
    sub.add_argument("--rir", default=None, help="RIR pool directory")
    sub.add_argument("--noise", default=None, help="Noise pool directory")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--jobs", type=int, default=1)

    sub = add("featurize", cmd_featurize, "Compute network inputs")
    sub.add_argument("--manifest", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--extractor", default=None, help="Extractor file, trained if absent")
    sub.add_argument("--full-scale", action="store_true")
    sub.add_argument("--seed", type=int, default=0)

    sub = add("train", cmd_train, "Train an acoustic model on one manifest")
    sub.add_argument("--manifest", required=True)
    sub.add_argument("--phones", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--init", default=None, help="Checkpoint to start from")
    sub.add_argument("--extractor", default=None)
    sub.add_argument("--epochs", type=int, default=3)
    sub.add_argument("--initial-lr", type=float, default=0.3)
    sub.add_argument("--final-lr", type=float, default=0.03)
    sub.add_argument("--batch", type=int, default=32)
    sub.add_argument("--bptt-chunk", type=int, default=40)
    sub.add_argument("--dropout", type=float, default=0.1)
    sub.add_argument("--full-scale", action="store_true")
    sub.add_argument("--override-fingerprint", action="store_true")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--jobs", type=int, default=1)

    sub = add("transfer", cmd_transfer, "Transfer weights into a new model")
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--mode", choices=("hidden", "full"), required=True)
    sub.add_argument("--phones", default=None)
    sub.add_argument("--out", required=True)
    sub.add_argument("--seed", type=int, default=0)

    sub = add("pipeline", cmd_pipeline, "Run the configured stages")
    add_config(sub)

    sub = add("ablate", cmd_ablate, "Run setups with stages removed")
    add_config(sub)
    sub.add_argument("--setups", nargs="+", default=["all"])

    sub = add("swap-ivec", cmd_swap_ivec, "Compare source and target language extractors")
    add_config(sub)
    sub.add_argument("--override-fingerprint", action="store_true")

    sub = add("score", cmd_score, "Score hypothesis transcripts")
    sub.add_argument("--ref", required=True)
    sub.add_argument("--hyp", required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run a command

    Args:
        argv (Optional[Sequence[str]]): Arguments. Defaults to None (sys.argv).

    Returns:
        int: Exit code, 0 on success and 1 on runtime errors
    """
    args = build_parser().parse_args(argv)
    setup_logging(console_log_level=args.log_level.upper())
    try:
        return args.func(args)
    except RUNTIME_ERRORS as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
