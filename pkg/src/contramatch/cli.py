"""Command-line interface.

Subcommands: synth, prepare, pretrain, finetune, evaluate, experiment,
augment-preview. Every subcommand accepts ``--config`` (an experiment config
JSON; its ``model``/``pretrain``/``finetune``/``augmentation`` sections supply
defaults), ``--seed`` and ``--out-dir``. Explicit flags win over the config.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .augment import AugmentationPolicy, augment_offer, load_lexicon
from .entity_graph import (derive_entity_labels, labels_from_cluster_ids, pretraining_pool,
                           read_labels_csv, write_labels_csv, write_report_json)
from .experiment import ConfigError, load_config, mean_f1, reference_config, run_experiment
from .neural import ModelConfig, init_state, load_checkpoint, save_checkpoint
from .records import (Corpus, IngestionError, ValidationError, load_corpus_json,
                      load_multi_source_corpus, load_two_table_corpus, save_corpus_json,
                      serialize_offer, write_multi_source_corpus)
from .sampling import build_pooled_dataset, build_sampling_datasets, save_datasets_json
from .synthetic import SynthConfig, generate_synthetic_corpus
from .training import FinetuneConfig, PretrainConfig, evaluate, finetune, pretrain

log = logging.getLogger("contramatch")


def load_corpus_any(path) -> Corpus:
    """A corpus JSON file, a two-table directory or a multi-source directory."""
    path = Path(path)
    if path.is_file():
        return load_corpus_json(path)
    if (path / "tableA.csv").exists():
        return load_two_table_corpus(path)
    if (path / "offers.csv").exists():
        pairs = path / "pairs" if (path / "pairs").is_dir() else path
        return load_multi_source_corpus(path / "offers.csv", pairs)
    raise IngestionError(f"{path}: expected a corpus .json, tableA.csv/tableB.csv or offers.csv")


def _config(args) -> dict:
    if getattr(args, "config", None):
        return load_config(args.config)[0]
    return {"model": {}, "pretrain": {}, "finetune": {},
            "augmentation": {"word_prob": 0.1, "lexicon": None},
            "labels": {"method": "graph", "match_fraction": 0.8}}


def _pick(flag, section: dict, key: str):
    return flag if flag is not None else section.get(key)


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _labels(args, cfg, corpus):
    if args.labels:
        return read_labels_csv(args.labels), None
    method = args.label_method or cfg["labels"].get("method", "graph")
    if method == "cluster_ids":
        return labels_from_cluster_ids(corpus), None
    fraction = _pick(args.fraction, cfg["labels"], "match_fraction") or 0.8
    return derive_entity_labels(corpus, fraction, args.seed)


def cmd_synth(args) -> int:
    overrides = _drop_none({"num_entities": args.num_entities,
                            "annotation_fraction": args.annotation_fraction,
                            "typo_rate": args.typo_rate})
    if args.sources:
        overrides["sources"] = tuple(args.sources.split(","))
    synth = generate_synthetic_corpus(SynthConfig(seed=args.seed, **overrides))
    out = _out_dir(args)
    if args.format == "json":
        save_corpus_json(synth.corpus, out / "corpus.json")
    else:
        # ground-truth entities double as cluster ids, as in the multi-source benchmark files
        offers = {oid: dataclasses.replace(o, cluster_id=str(synth.truth[oid]))
                  for oid, o in synth.corpus.offers.items()}
        write_multi_source_corpus(dataclasses.replace(synth.corpus, offers=offers),
                                  out / "offers.csv", out / "pairs")
    (out / "truth.json").write_text(json.dumps(synth.truth, indent=1, sort_keys=True))
    with open(out / "lexicon.tsv", "w", encoding="utf-8") as fh:
        for word, syns in sorted(synth.lexicon.items()):
            fh.write(f"{word}\t{','.join(syns)}\n")
    print(json.dumps(synth.corpus.pair_counts(), indent=1))
    return 0


def cmd_prepare(args) -> int:
    cfg = _config(args)
    corpus = load_corpus_any(args.corpus)
    labeling, report = _labels(args, cfg, corpus)
    pool = pretraining_pool(corpus, labeling)
    out = _out_dir(args)
    write_labels_csv(labeling, out / "labels.csv")
    if report is not None:
        write_report_json(report, out / "withholding.json")
    save_datasets_json(build_sampling_datasets(pool, labeling, corpus), out / "datasets.json")
    save_datasets_json([build_pooled_dataset(pool, labeling, corpus)], out / "pooled.json")
    print(f"pool {len(pool)} offers, {len(set(labeling[o] for o in pool))} labels")
    return 0


def _policy(args, cfg, enabled: bool):
    if not enabled:
        return None
    aug = cfg["augmentation"]
    lexicon = args.lexicon or aug.get("lexicon")
    kw = {"word_prob": _pick(args.word_prob, aug, "word_prob") or 0.1,
          "synonym_lexicon": load_lexicon(lexicon) if lexicon and lexicon != "synthetic" else None}
    if aug.get("kinds"):
        kw["kinds"] = frozenset(aug["kinds"])
    return AugmentationPolicy(**kw)


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    corpus = load_corpus_any(args.corpus)
    labeling, _ = _labels(args, cfg, corpus)
    sec = cfg["pretrain"]
    pcfg = PretrainConfig(**_drop_none({
        "batch_size": _pick(args.batch_size, sec, "batch_size"),
        "epochs": _pick(args.epochs, sec, "epochs"),
        "lr": _pick(args.lr, sec, "lr"),
        "warmup_ratio": sec.get("warmup_ratio"),
        "temperature": _pick(args.temperature, sec, "temperature"),
        "dataset_choice": sec.get("dataset_choice"),
    }), mode=args.mode, sampling=args.sampling, seed=args.seed,
        augmentation=_policy(args, cfg, args.augment))
    state = init_state(ModelConfig(**cfg["model"]), args.seed)
    state, trace = pretrain(corpus, labeling, pcfg, state)
    out = _out_dir(args)
    save_checkpoint(state, out / "pretrained.npz")
    trace.to_csv(out / "pretrain_loss.csv")
    print(f"final loss {trace.rows[-1]['loss']:.4f}" if trace.rows else "no steps run")
    return 0


def cmd_finetune(args) -> int:
    cfg = _config(args)
    corpus = load_corpus_any(args.corpus)
    if args.checkpoint:
        state = load_checkpoint(args.checkpoint)
    else:
        state = init_state(ModelConfig(**cfg["model"]), args.seed)
    sec = cfg["finetune"]
    fcfg = FinetuneConfig(**_drop_none({
        "batch_size": _pick(args.batch_size, sec, "batch_size"),
        "max_epochs": _pick(args.max_epochs, sec, "max_epochs"),
        "patience": _pick(args.patience, sec, "patience"),
        "lr": _pick(args.lr, sec, "lr"),
        "head_lr": _pick(args.head_lr, sec, "head_lr"),
        "warmup_ratio": sec.get("warmup_ratio"),
    }), encoder_frozen=not args.unfrozen, seed=args.seed)
    tuned, best_epoch, trace = finetune(corpus, state, fcfg)
    out = _out_dir(args)
    save_checkpoint(tuned, out / "finetuned.npz")
    trace.to_csv(out / "finetune_loss.csv")
    report = evaluate(corpus, "test", tuned, args.threshold)
    metrics = {"best_epoch": best_epoch, "test": report.to_dict()}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    corpus = load_corpus_any(args.corpus)
    state = load_checkpoint(args.checkpoint)
    report = evaluate(corpus, args.split, state, args.threshold)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out_dir:
        (_out_dir(args) / f"eval_{args.split}.json").write_text(text + "\n")
    print(text)
    return 0


def cmd_experiment(args) -> int:
    source = args.config if args.config else reference_config()
    seeds = None
    if args.seed is not None:
        reps = args.repetitions or load_config(source)[0]["repetitions"]
        seeds = [args.seed + i for i in range(reps)]
    metrics = run_experiment(source, args.out_dir, seeds)
    for name, f1 in mean_f1(metrics).items():
        print(f"{name:32s} mean F1 {f1:.4f}")
    return 0


def cmd_augment_preview(args) -> int:
    cfg = _config(args)
    policy = _policy(args, cfg, True)
    if args.text:
        texts = [args.text]
    else:
        corpus = load_corpus_any(args.corpus)
        texts = [serialize_offer(corpus.offers[o]) for o in list(corpus.offers)[:args.limit]]
    rng = np.random.default_rng(args.seed)
    for text in texts:
        print(text)
        for _ in range(args.samples):
            print("  ->", augment_offer(text, policy, rng, args.kind))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contramatch",
                                     description="Contrastive pre-training for entity matching")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_default=1, out_required=True):
        p.add_argument("--config", help="experiment config JSON supplying defaults")
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--out-dir", required=out_required, default=None)

    def labels(p):
        p.add_argument("--labels", help="labels.csv from `prepare` (skips derivation)")
        p.add_argument("--label-method", choices=("graph", "cluster_ids"))
        p.add_argument("--fraction", type=float, help="share of train+valid matches kept as edges")

    def aug(p):
        p.add_argument("--word-prob", type=float)
        p.add_argument("--lexicon", help="synonym lexicon, word<TAB>syn1,syn2")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p, seed_default=0)
    p.add_argument("--num-entities", type=int)
    p.add_argument("--sources", help="comma-separated source ids")
    p.add_argument("--annotation-fraction", type=float)
    p.add_argument("--typo-rate", type=float)
    p.add_argument("--format", choices=("json", "multi_source"), default="json")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="derive entity labels and sampling datasets")
    common(p)
    p.add_argument("--corpus", required=True)
    labels(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("pretrain", help="contrastive pre-training")
    common(p)
    p.add_argument("--corpus", required=True)
    labels(p)
    p.add_argument("--mode", choices=("supcon", "simclr"), default="supcon")
    p.add_argument("--sampling", choices=("source_aware", "pooled"), default="source_aware")
    p.add_argument("--batch-size", type=int, help="N; batches hold 2N offers")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--augment", action="store_true")
    aug(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="pairwise fine-tuning with early stopping")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", help="pre-trained state; random init when omitted")
    p.add_argument("--unfrozen", action="store_true", help="train the encoder too")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--head-lr", type=float)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="precision/recall/F1 on a split")
    common(p, out_required=False)
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run a variant grid over several seeds")
    common(p, seed_default=None)
    p.add_argument("--repetitions", type=int, help="with --seed: seeds seed..seed+r-1")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("augment-preview", help="show augmented offers")
    common(p, seed_default=0, out_required=False)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--text")
    src.add_argument("--corpus")
    p.add_argument("--limit", type=int, default=5)
    p.add_argument("--samples", type=int, default=3)
    p.add_argument("--kind", choices=("typo", "swap", "delete", "span_delete", "synonym", "split"))
    aug(p)
    p.set_defaults(func=cmd_augment_preview)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, IngestionError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
