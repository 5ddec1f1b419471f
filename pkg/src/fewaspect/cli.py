"""Command-line entry point tying data generation, training, and
evaluation together.

Configuration precedence for training-shaped options: command-line flags
override values from a JSON config file (--config), which override the
built-in defaults. Every command is deterministic given its full flag
set, and exits zero only when its output files were fully written.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import tensor as T
from .data import (SyntheticConfig, generate_synthetic, init_embeddings,
                   load_corpus, load_embeddings, load_split, save_split,
                   split_classes, write_corpus)
from .errors import (ConfigError, DomainError, NumericError, ParseError,
                     SamplingError, UndefinedMetricError, ValidationError)
from .metrics import default_tau, evaluate
from .model import (AblationFlags, ModelConfig, forward_episode, load_checkpoint,
                    params_from_arrays, save_checkpoint)
from .episode import sample_episode
from .policy import train_policy
from .training import TrainConfig, checkpoint_config, train_main

_CONFIG_FLAGS = {
    "n": "n_way",
    "k": "k_shot",
    "q": "q_per_class",
    "episodes_per_epoch": "episodes_per_epoch",
    "val_episodes": "val_episodes",
    "test_episodes": "test_episodes",
    "lr": "learning_rate",
    "policy_lr": "policy_learning_rate",
    "patience": "patience",
    "max_epochs": "max_epochs",
    "embedding_dim": "embedding_dim",
    "hidden_dim": "hidden_dim",
    "window": "window",
    "repeat_count": "repeat_count",
    "policy_temperature": "policy_temperature",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--n", type=int, help="classes per episode")
    p.add_argument("--k", type=int, help="support sentences per class")
    p.add_argument("--q", type=int, help="query sentences per class")
    p.add_argument("--episodes-per-epoch", type=int, dest="episodes_per_epoch")
    p.add_argument("--val-episodes", type=int, dest="val_episodes")
    p.add_argument("--test-episodes", type=int, dest="test_episodes")
    p.add_argument("--lr", type=float)
    p.add_argument("--policy-lr", type=float, dest="policy_lr")
    p.add_argument("--patience", type=int)
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--embedding-dim", type=int, dest="embedding_dim")
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    p.add_argument("--window", type=int)
    p.add_argument("--repeat-count", type=int, dest="repeat_count")
    p.add_argument("--policy-temperature", type=float, dest="policy_temperature")
    p.add_argument("--squared-distance", action="store_true", default=None,
                   dest="squared_distance")
    p.add_argument("--ablation", action="append", default=None,
                   choices=["no-sa", "no-attn-matrix", "no-qa"],
                   help="disable a model component (repeatable)")


def _build_config(args) -> TrainConfig:
    values = TrainConfig().to_dict()
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            try:
                file_values = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{args.config}: {exc}") from exc
        unknown = set(file_values) - set(values)
        if unknown:
            raise ConfigError(f"{args.config}: unknown config keys {sorted(unknown)}")
        values.update(file_values)
    for flag, field in _CONFIG_FLAGS.items():
        flag_value = getattr(args, flag, None)
        if flag_value is not None:
            values[field] = flag_value
    if getattr(args, "squared_distance", None):
        values["squared_distance"] = True
    if getattr(args, "ablation", None) is not None:
        values["ablations"] = list(args.ablation)
    config = TrainConfig.from_dict(values)
    config.validate()
    return config


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part != ""]
    except ValueError as exc:
        raise ConfigError(f"seeds must be comma-separated integers, got {text!r}") from exc


def cmd_gen_data(args) -> int:
    config = SyntheticConfig(
        num_classes=args.classes,
        sentences_per_class=args.per_class,
        multi_aspect_fraction=args.multi_frac,
        vocab_size=args.vocab_size,
        sentence_length_range=(args.min_len, args.max_len),
        signal_tokens_per_class=args.signal_per_class,
        signal_fraction=args.signal_frac,
        confusion_clique=args.clique,
        partner_share=args.partner_share,
    )
    corpus = generate_synthetic(config, args.seed)
    write_corpus(corpus, args.out)
    print(f"wrote {len(corpus.sentences)} sentences, "
          f"{len(corpus.classes)} classes, vocab {len(corpus.vocab)} -> {args.out}")
    return 0


def cmd_split(args) -> int:
    corpus = load_corpus(args.corpus)
    split = split_classes(corpus, counts=(args.train, args.val, args.test),
                          seed=args.seed)
    save_split(split, args.out)
    print(f"split {len(split.train)}/{len(split.validation)}/{len(split.test)} "
          f"classes -> {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _build_config(args)
    corpus = load_corpus(args.corpus)
    split = load_split(args.split)
    log_path = args.log or f"{args.out}.log.jsonl"

    def progress(record):
        if not args.quiet:
            print(json.dumps(record))

    if args.stage == "main":
        embeddings = None
        if args.embeddings:
            rng_emb = np.random.default_rng([args.seed, 0xE])
            embeddings = load_embeddings(args.embeddings, corpus.vocab,
                                         config.embedding_dim, rng_emb)
        result = train_main(corpus, split, config, args.seed,
                            embeddings=embeddings, log_path=log_path,
                            progress=progress)
    else:
        if not args.init:
            raise ConfigError("--stage dt needs --init pointing at a stage-1 checkpoint")
        arrays, cfg = load_checkpoint(args.init)
        if cfg["vocab"] != corpus.id_to_token:
            raise ConfigError("stage-1 checkpoint vocabulary does not match the corpus")
        result = train_policy(corpus, split, config, args.seed,
                              stage1_arrays=arrays, log_path=log_path,
                              progress=progress)

    header = checkpoint_config(corpus, config, args.seed, args.stage)
    save_checkpoint(args.out, result.arrays, header)
    print(f"best val AUC {result.best_val_auc:.4f} at epoch {result.best_epoch} "
          f"({result.epochs_run} epochs run) -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    config = _build_config(args)
    corpus = load_corpus(args.corpus)
    split = load_split(args.split)
    pool = {"train": split.train, "validation": split.validation,
            "test": split.test}[args.partition]
    seeds = _parse_seeds(args.seeds)
    episodes = args.episodes if args.episodes is not None else config.test_episodes
    tau = args.tau
    if args.threshold == "static" and tau is None:
        tau = default_tau(config.n_way)
    ablation = config.ablation_flags()

    per_seed = []
    for seed in seeds:
        summary = evaluate(args.checkpoint, corpus, pool, config.n_way,
                           config.k_shot, config.q_per_class, episodes, seed,
                           args.threshold, tau,
                           ablation)
        per_seed.append({
            "seed": seed,
            "auc": summary.mean_auc,
            "macro_f1": summary.mean_f1,
            "episodes_used": summary.episodes_used,
            "episodes_skipped": summary.episodes_skipped,
        })
    aucs = [r["auc"] for r in per_seed]
    f1s = [r["macro_f1"] for r in per_seed]
    report = {
        "config": {
            "checkpoint": args.checkpoint,
            "corpus": args.corpus,
            "partition": args.partition,
            "n_way": config.n_way,
            "k_shot": config.k_shot,
            "q_per_class": config.q_per_class,
            "episodes": episodes,
            "threshold_mode": args.threshold,
            "tau": tau,
            "seeds": seeds,
            "ablations": config.ablations,
            "auc_definition": "pairwise over (query, class) scores pooled per "
                              "episode, ties 0.5, averaged across episodes",
        },
        "per_seed": per_seed,
        "summary": {
            "auc_mean": float(np.mean(aucs)),
            "auc_std": float(np.std(aucs)),
            "macro_f1_mean": float(np.mean(f1s)),
            "macro_f1_std": float(np.std(f1s)),
        },
    }
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    print(f"AUC {report['summary']['auc_mean']:.4f} ± {report['summary']['auc_std']:.4f}, "
          f"macro-F1 {report['summary']['macro_f1_mean']:.4f} ± "
          f"{report['summary']['macro_f1_std']:.4f} -> {args.report}")
    return 0


def cmd_export_vectors(args) -> int:
    config = _build_config(args)
    corpus = load_corpus(args.corpus)
    split = load_split(args.split)
    pool = {"train": split.train, "validation": split.validation,
            "test": split.test}[args.partition]
    arrays, cfg = load_checkpoint(args.checkpoint)
    if cfg["vocab"] != corpus.id_to_token:
        raise ConfigError("checkpoint vocabulary does not match the corpus")
    model_cfg = ModelConfig(**cfg["model"])
    main_arrays = {k: v for k, v in arrays.items() if not k.startswith("policy/")}
    params = params_from_arrays(main_arrays, corpus.vocab, model_cfg)
    ablation = config.ablation_flags()

    rng = np.random.default_rng([args.seed, 8])
    dim = model_cfg.hidden_dim
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "kind", "class_index", "class_name",
                         "query_index", "label"] + [f"v{i}" for i in range(dim)])
        for ep in range(args.episodes):
            task = sample_episode(corpus, pool, config.n_way, config.k_shot,
                                  config.q_per_class, rng)
            with T.no_grad():
                forward = forward_episode(task, params, ablation)
            for c, name in enumerate(task.classes):
                writer.writerow([ep, "prototype", c, name, "", ""]
                                + forward.prototypes.data[c].tolist())
            for qi, reps in enumerate(forward.query_reps):
                for c, name in enumerate(task.classes):
                    label = int(task.query_labels[qi][c])
                    writer.writerow([ep, "query_rep", c, name, qi, label]
                                    + reps.data[c].tolist())
    print(f"wrote vectors for {args.episodes} episodes -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fewaspect",
        description="Few-shot multi-label aspect detection: prototypes with "
                    "support/query attention and a learned decision threshold.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--classes", type=int, default=SyntheticConfig.num_classes)
    p.add_argument("--per-class", type=int, dest="per_class",
                   default=SyntheticConfig.sentences_per_class)
    p.add_argument("--multi-frac", type=float, dest="multi_frac",
                   default=SyntheticConfig.multi_aspect_fraction)
    p.add_argument("--vocab-size", type=int, dest="vocab_size",
                   default=SyntheticConfig.vocab_size)
    p.add_argument("--min-len", type=int, dest="min_len", default=6)
    p.add_argument("--max-len", type=int, dest="max_len", default=12)
    p.add_argument("--signal-per-class", type=int, dest="signal_per_class",
                   default=SyntheticConfig.signal_tokens_per_class)
    p.add_argument("--signal-frac", type=float, dest="signal_frac",
                   default=SyntheticConfig.signal_fraction)
    p.add_argument("--clique", type=int, default=SyntheticConfig.confusion_clique,
                   help="confine two-label partners to groups of this size")
    p.add_argument("--partner-share", type=float, dest="partner_share",
                   default=SyntheticConfig.partner_share,
                   help="signal share the second class takes in two-label sentences")
    p.add_argument("--seed", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("split", help="split corpus classes into train/val/test")
    p.add_argument("--corpus", required=True)
    p.add_argument("--train", type=int, required=True)
    p.add_argument("--val", type=int, required=True)
    p.add_argument("--test", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train stage 1 (main) or stage 2 (dt)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--stage", choices=["main", "dt"], default="main")
    p.add_argument("--init", help="stage-1 checkpoint (required for --stage dt)")
    p.add_argument("--embeddings", help="pretrained embedding text file")
    p.add_argument("--seed", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="training log path (default: <out>.log.jsonl)")
    p.add_argument("--quiet", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over episodes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--partition", choices=["train", "validation", "test"],
                   default="test")
    p.add_argument("--threshold", choices=["static", "dynamic"], default="static")
    p.add_argument("--tau", type=float)
    p.add_argument("--episodes", type=int)
    p.add_argument("--seeds", default="5,10,15,20,25")
    p.add_argument("--report", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-vectors",
                       help="dump prototypes and query representations to CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--partition", choices=["train", "validation", "test"],
                   default="test")
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--seed", type=int, default=5)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_export_vectors)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SamplingError, DomainError, NumericError, UndefinedMetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
