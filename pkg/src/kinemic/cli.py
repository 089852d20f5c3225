"""Command-line entry point.

Subcommands cover the whole pipeline: ``gen-toy-data`` builds the corpus,
``build-pairs`` the retrieval index, ``pretrain`` the source-domain
denoiser, ``train`` the adapted generator, ``sample`` motions from a
checkpoint, ``evaluate`` the augmentation protocol, and ``ablate`` the
mode comparison table.  Every command is deterministic given its config,
seed and input artifacts.

Exit codes: 0 success, 2 usage/config errors, 1 runtime failure (with a
JSON error report on stderr).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvalidConfigError, KinemicError
from .io import dump_json_bytes, read_json, write_json

USAGE_EXIT = 2
FAILURE_EXIT = 1


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", default=None, help="output path")
    p.add_argument(
        "--log-level", default="warning",
        choices=["debug", "info", "warning", "error"],
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kinemic",
        description="few-shot action-to-motion generation toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy-data", help="generate the procedural corpus")
    _add_common(p)

    p = sub.add_parser("build-pairs", help="build the soft-positive index")
    _add_common(p)
    p.add_argument("--source", help="captioned dataset directory")
    p.add_argument("--labels", help="JSON file with the label list")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--template", default=None)

    p = sub.add_parser("pretrain", help="pretrain the source-domain denoiser")
    _add_common(p)
    p.add_argument("--data", help="dataset root (expects <data>/source)")

    p = sub.add_parser("train", help="adapt the generator to the target domain")
    _add_common(p)
    p.add_argument("--data", help="dataset root (expects source/, target/)")
    p.add_argument("--pairs", help="soft-pair index JSON")
    p.add_argument("--teacher", help="teacher checkpoint")
    p.add_argument("--mode", default=None, help="training mode override")

    p = sub.add_parser("sample", help="generate motions from a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--label", default=None, help="action label")
    p.add_argument("--text", default=None, help="free-form text condition")
    p.add_argument("--length", type=int, default=None)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--guidance", type=float, default=None)
    p.add_argument("--disable-adapters", action="store_true")

    p = sub.add_parser("evaluate", help="run the augmentation evaluation")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--protocol", help="TOML config supplying [eval] (alias of --config)")
    p.add_argument("--data", help="dataset root")
    p.add_argument("--scalability", default=None,
                   help="comma-separated real counts for the scaling curve")
    p.add_argument("--plot", default=None, help="write the scaling curve image here")

    p = sub.add_parser("ablate", help="train/evaluate several modes into a table")
    _add_common(p)
    p.add_argument("--modes", required=True, help="comma-separated mode names")
    p.add_argument("--data", help="dataset root")
    p.add_argument("--pairs", help="soft-pair index JSON")
    p.add_argument("--teacher", help="teacher checkpoint")
    p.add_argument("--synthetic-per-class", type=int, default=None)
    return parser


def _load_config(args) -> "RunConfig":
    from .config import RunConfig

    path = getattr(args, "protocol", None) or args.config
    if path:
        cfg = RunConfig.load(path)
    else:
        cfg = RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    return cfg


def _labels_of(cfg) -> list[str]:
    return list(cfg.data.class_names)


def _encoder_of(cfg):
    from .textspace import get_encoder

    return get_encoder(cfg.pairs.encoder)


def cmd_gen_toy_data(args) -> int:
    from .datasets import save_captioned, save_labeled, save_truth
    from .toy import generate_toy_corpus

    cfg = _load_config(args)
    out = Path(cfg.out)
    sources, targets, truth = generate_toy_corpus(cfg.data, cfg.seed)
    save_captioned(out / "source", sources)
    save_labeled(out / "target", targets)
    save_truth(out / "truth.json", truth)
    cfg.save(out / "config.toml")
    print(f"wrote {len(sources)} source / {len(targets)} target samples to {out}")
    return 0


def cmd_build_pairs(args) -> int:
    from .datasets import load_captioned
    from .textspace import build_soft_pairs

    cfg = _load_config(args)
    source_dir = args.source or str(Path(cfg.out) / "source")
    sources = load_captioned(source_dir)
    if args.labels:
        labels = read_json(args.labels)
    else:
        labels = _labels_of(cfg)
    k = args.k if args.k is not None else cfg.pairs.k
    template = args.template or cfg.pairs.template
    index = build_soft_pairs(
        labels, sources, k, template=template, encoder=_encoder_of(cfg)
    )
    out = args.out or str(Path(cfg.out) / "pairs.json")
    index.save(out)
    print(f"wrote index for {len(labels)} labels (k={k}) to {out}")
    return 0


def _model_config_for(cfg, feature_dim: int):
    from .denoiser import ModelConfig

    return ModelConfig(feature_dim=feature_dim, **cfg.model.to_dict())


def cmd_pretrain(args) -> int:
    from .datasets import load_captioned
    from .trainer import pretrain_teacher

    cfg = _load_config(args)
    data_root = Path(args.data or cfg.out)
    sources = load_captioned(data_root / "source")
    out = Path(args.out or data_root / "teacher.kmct")
    feature_dim = sources[0].motion.dim
    topo = sources[0].motion.topology
    pretrain_teacher(
        cfg.pretrain,
        sources,
        _encoder_of(cfg),
        out,
        fps=sources[0].motion.fps,
        topology_dict=topo.to_dict() if topo else None,
        model_config=_model_config_for(cfg, feature_dim),
    )
    print(f"wrote teacher checkpoint to {out}")
    return 0


def cmd_train(args) -> int:
    from dataclasses import replace

    from .checkpoints import load_checkpoint
    from .datasets import load_captioned, load_labeled, load_truth
    from .textspace import SoftPairIndex
    from .trainer import TrainData, train

    cfg = _load_config(args)
    train_cfg = cfg.train
    if args.mode:
        train_cfg = replace(train_cfg, mode=args.mode)
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    data_root = Path(args.data or cfg.out)
    support = load_labeled(data_root / "target")
    spec = train_cfg.spec

    sources = index = teacher = truth = None
    if spec.uses_mic:
        sources = load_captioned(data_root / "source")
        pairs_path = args.pairs or str(data_root / "pairs.json")
        index = SoftPairIndex.load(pairs_path)
        truth_path = data_root / "truth.json"
        if truth_path.exists():
            truth = load_truth(truth_path)
    if spec.from_teacher or not spec.trains:
        teacher_path = args.teacher or str(data_root / "teacher.kmct")
        teacher = load_checkpoint(teacher_path)

    topo = support[0].motion.topology
    data = TrainData(
        support=support,
        labels=_labels_of(cfg),
        encoder=_encoder_of(cfg),
        sources=sources,
        index=index,
        teacher=teacher,
        truth=truth,
        fps=support[0].motion.fps,
        topology_dict=topo.to_dict() if topo else None,
    )
    out = Path(args.out or data_root / f"run_{train_cfg.mode}")
    ckpt, records = train(train_cfg, data, out)
    print(f"trained mode={train_cfg.mode} for {len(records)} steps -> {ckpt}")
    return 0


def cmd_sample(args) -> int:
    from .checkpoints import load_checkpoint
    from .datasets import save_labeled, LabeledSample
    from .denoiser import ConditioningSignal, sample
    from .textspace import label_to_prompt

    cfg = _load_config(args)
    ck = load_checkpoint(args.checkpoint, disable_adapters=args.disable_adapters)
    encoder = _encoder_of(cfg)
    if args.label is None and args.text is None:
        raise InvalidConfigError("need --label and/or --text to condition on")
    text = args.text
    if text is None and args.label is not None:
        text = label_to_prompt(args.label, cfg.pairs.template)
    action_id = None
    conditioning = ck.extra.get(
        "conditioning", "text" if ck.kind == "teacher" else "action_text"
    )
    if args.label is not None and conditioning == "action_text":
        if ck.labels is None or args.label not in ck.labels:
            raise InvalidConfigError(
                f"label {args.label!r} unknown to checkpoint (has {ck.labels})"
            )
        action_id = ck.labels.index(args.label)
    guidance = args.guidance
    if guidance is None:
        guidance = ck.extra.get("train_config", {}).get("guidance_scale", 2.5)
    length = args.length or 32
    out_samples = []
    for i in range(args.count):
        feat = sample(
            ck.model,
            ConditioningSignal(
                timestep=0,
                text_embedding=encoder.encode(text).vector if text else None,
                action_id=action_id,
            ),
            length,
            ck.schedule,
            seed=cfg.seed + i,
            guidance_scale=guidance,
            stats=ck.stats,
            fps=ck.fps,
            topology=ck.topology(),
        )
        label = args.label if args.label is not None else (args.text or "sample")
        out_samples.append(
            LabeledSample(motion=feat, label=label, sample_id=f"sample-{i:04d}")
        )
    out = args.out or "samples"
    save_labeled(out, out_samples)
    print(f"wrote {len(out_samples)} samples to {out}")
    return 0


def cmd_evaluate(args) -> int:
    from .checkpoints import load_checkpoint
    from .datasets import load_labeled
    from .evalsuite import (
        empirical_length_sampler,
        evaluate_augmentation,
        generate_dataset,
        plot_scalability,
        scalability_curve,
        summarize_accuracies,
    )
    from .classifier import train_classifier
    from .toy import generate_test_split

    cfg = _load_config(args)
    proto = cfg.eval.protocol
    classes = _labels_of(cfg)
    data_root = Path(args.data or cfg.out)
    support = load_labeled(data_root / "target")
    test = generate_test_split(
        cfg.data, cfg.seed + cfg.eval.test_seed_offset, cfg.eval.test_per_class
    )
    eval_pool = generate_test_split(
        cfg.data, cfg.seed + cfg.eval.test_seed_offset + 1, cfg.eval.test_per_class
    )
    ck = load_checkpoint(args.checkpoint)
    encoder = _encoder_of(cfg)
    per_class = proto.synthetic_count // len(classes)
    synthetic = generate_dataset(
        ck, classes, per_class, empirical_length_sampler(support),
        seed=cfg.seed, encoder=encoder,
        guidance_scale=ck.extra.get("train_config", {}).get("guidance_scale", 2.5),
        batch_size=proto.generation_batch,
    )
    evaluator, _ = train_classifier(eval_pool, proto.classifier, 0, test, classes)

    real_accs = [
        train_classifier(support, proto.classifier, s, test, classes)[1]
        for s in proto.seeds
    ]
    real_report = summarize_accuracies("real_only", real_accs)
    aug_report = evaluate_augmentation(
        ck.extra.get("mode", "generator"), support, synthetic, test, proto,
        classes, evaluator=evaluator,
    )
    report = {
        "real_only": real_report.to_dict(),
        "augmented": aug_report.to_dict(),
        "protocol": proto.to_dict(),
        "checkpoint": str(args.checkpoint),
    }
    if args.scalability:
        counts = [int(c) for c in args.scalability.split(",")]
        rows = scalability_curve(
            counts, support, synthetic, test, proto, classes
        )
        report["scalability"] = rows
        if args.plot:
            plot_scalability(rows, args.plot)
    out = args.out or str(data_root / "report.json")
    write_json(out, report)
    print(
        "real-only median %.3f -> augmented median %.3f (report: %s)"
        % (real_report.median_accuracy, aug_report.median_accuracy, out)
    )
    return 0


def cmd_ablate(args) -> int:
    from dataclasses import replace

    from .checkpoints import load_checkpoint
    from .datasets import load_captioned, load_labeled, load_truth
    from .evalsuite import (
        empirical_length_sampler,
        evaluate_augmentation,
        generate_dataset,
    )
    from .classifier import train_classifier
    from .textspace import SoftPairIndex
    from .toy import generate_test_split
    from .trainer import TrainData, train

    cfg = _load_config(args)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    classes = _labels_of(cfg)
    data_root = Path(args.data or cfg.out)
    support = load_labeled(data_root / "target")
    sources = load_captioned(data_root / "source")
    index = SoftPairIndex.load(args.pairs or str(data_root / "pairs.json"))
    teacher = load_checkpoint(args.teacher or str(data_root / "teacher.kmct"))
    truth_path = data_root / "truth.json"
    truth = load_truth(truth_path) if truth_path.exists() else None
    encoder = _encoder_of(cfg)
    proto = cfg.eval.protocol
    test = generate_test_split(
        cfg.data, cfg.seed + cfg.eval.test_seed_offset, cfg.eval.test_per_class
    )
    eval_pool = generate_test_split(
        cfg.data, cfg.seed + cfg.eval.test_seed_offset + 1, cfg.eval.test_per_class
    )
    evaluator, _ = train_classifier(eval_pool, proto.classifier, 0, test, classes)
    per_class = (
        args.synthetic_per_class
        if args.synthetic_per_class is not None
        else proto.synthetic_count // len(classes)
    )
    topo = support[0].motion.topology
    rows = []
    for mode in modes:
        train_cfg = replace(cfg.train, mode=mode)
        data = TrainData(
            support=support, labels=classes, encoder=encoder, sources=sources,
            index=index, teacher=teacher, truth=truth,
            fps=support[0].motion.fps,
            topology_dict=topo.to_dict() if topo else None,
        )
        run_dir = data_root / f"ablate_{mode}"
        ckpt_path, _ = train(train_cfg, data, run_dir)
        ck = load_checkpoint(ckpt_path)
        synthetic = generate_dataset(
            ck, classes, per_class, empirical_length_sampler(support),
            seed=cfg.seed, encoder=encoder,
            guidance_scale=train_cfg.guidance_scale,
            batch_size=proto.generation_batch,
        )
        report = evaluate_augmentation(
            mode, support, synthetic, test, proto, classes, evaluator=evaluator
        )
        rows.append(report)
        print(
            "mode %-14s median %.3f mean %.3f±%.3f diversity %s multimodality %s"
            % (
                mode, report.median_accuracy, report.mean_accuracy,
                report.std_accuracy,
                f"{report.diversity:.2f}" if report.diversity else "-",
                f"{report.multimodality:.2f}" if report.multimodality else "-",
            )
        )
    out = args.out or str(data_root / "ablation.csv")
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["mode", "median_accuracy", "mean_accuracy", "std_accuracy",
             "diversity", "multimodality"]
        )
        for r in rows:
            writer.writerow(
                [r.mode, f"{r.median_accuracy:.4f}", f"{r.mean_accuracy:.4f}",
                 f"{r.std_accuracy:.4f}",
                 f"{r.diversity:.4f}" if r.diversity is not None else "",
                 f"{r.multimodality:.4f}" if r.multimodality is not None else ""]
            )
    print(f"wrote ablation table to {out}")
    return 0


_COMMANDS = {
    "gen-toy-data": cmd_gen_toy_data,
    "build-pairs": cmd_build_pairs,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def dispatch(argv: list[str]) -> int:
    import logging

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()))
    try:
        return _COMMANDS[args.command](args)
    except InvalidConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except KinemicError as exc:
        report = {"error": type(exc).__name__, "message": str(exc)}
        print(dump_json_bytes(report).decode(), file=sys.stderr)
        return FAILURE_EXIT


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
