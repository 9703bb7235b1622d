"""Experiment runner: corpus -> labels -> pre-training -> fine-tuning -> evaluation.

A run is one (variant, seed). Variants combine a pre-training objective
(``supcon``, ``simclr`` or ``none``), an encoder mode for fine-tuning
(``frozen`` or ``unfrozen``), augmentation on/off and the sampling strategy.
Pre-trained encoders are cached per (objective, augmentation, sampling, seed)
so frozen and unfrozen variants share one pre-training run.

Outputs written to the output directory::

    metrics.json            every run plus the per-variant aggregate (no timings)
    aggregate.csv           mean F1 (and P/R) per variant
    runs/<variant>/seed<k>.json
    curves/<variant>_seed<k>_{pretrain,finetune}.csv
    timings.json            wall-clock seconds per run (not deterministic)
"""
from __future__ import annotations

import copy
import csv
import itertools
import json
import logging
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import jsonschema
import numpy as np

from .augment import KINDS, AugmentationPolicy, load_lexicon
from .entity_graph import derive_entity_labels, labels_from_cluster_ids, pretraining_pool
from .neural import ModelConfig, init_state
from .records import Corpus, load_corpus_json, load_multi_source_corpus, load_two_table_corpus
from .synthetic import SynthConfig, generate_synthetic_corpus
from .training import FinetuneConfig, PretrainConfig, evaluate, finetune, pretrain

log = logging.getLogger(__name__)

OBJECTIVES = ("supcon", "simclr", "none")
ENCODER_MODES = ("frozen", "unfrozen")
SAMPLINGS = ("source_aware", "pooled")

_POS_INT = {"type": "integer", "minimum": 1}
_PROB = {"type": "number", "minimum": 0, "maximum": 1}

_VARIANT = {
    "type": "object",
    "additionalProperties": False,
    "required": ["objective"],
    "properties": {
        "objective": {"enum": list(OBJECTIVES)},
        "encoder": {"enum": list(ENCODER_MODES)},
        "augment": {"type": "boolean"},
        "sampling": {"enum": list(SAMPLINGS)},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["corpus"],
    "properties": {
        "name": {"type": "string"},
        "corpus": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["synthetic", "two_table", "multi_source", "json"]},
                "path": {"type": "string"},
                "offers": {"type": "string"},
                "pairs_dir": {"type": "string"},
                "synthetic": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "num_entities": _POS_INT,
                        "sources": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                        "offers_per_entity_per_source": _POS_INT,
                        "presence": _PROB,
                        "annotation_fraction": {"type": "number", "exclusiveMinimum": 0,
                                                "maximum": 1},
                        "family_size": _POS_INT,
                        "num_categories": _POS_INT,
                        "token_drop": _PROB,
                        "code_drop": _PROB,
                        "typo_rate": _PROB,
                        "synonym_rate": _PROB,
                        "filler_words": {"type": "integer", "minimum": 0},
                        "filler_vocab": _POS_INT,
                        "negatives_per_positive": {"type": "number", "minimum": 0},
                        "hard_negative_share": _PROB,
                        "valid_fraction": _PROB,
                        "seed": {"type": "integer"},
                    },
                },
            },
            "allOf": [
                {"if": {"properties": {"kind": {"enum": ["two_table", "json"]}}},
                 "then": {"required": ["path"]}},
                {"if": {"properties": {"kind": {"const": "multi_source"}}},
                 "then": {"required": ["offers", "pairs_dir"]}},
            ],
        },
        "labels": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["graph", "cluster_ids"]},
                "match_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "vocab_size": {"type": "integer", "minimum": 4},
                "max_tokens": _POS_INT,
                "embed_dim": _POS_INT,
                "hidden_dim": _POS_INT,
                "proj_dim": _POS_INT,
                "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            },
        },
        "pretrain": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "batch_size": _POS_INT,
                "epochs": {"type": "integer", "minimum": 0},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "warmup_ratio": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "temperature": {"type": "number", "exclusiveMinimum": 0},
                "dataset_choice": {"enum": ["uniform", "proportional"]},
            },
        },
        "finetune": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "batch_size": _POS_INT,
                "max_epochs": _POS_INT,
                "patience": _POS_INT,
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "head_lr": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "warmup_ratio": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            },
        },
        "augmentation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "word_prob": _PROB,
                "kinds": {"type": "array", "items": {"enum": list(KINDS)}, "uniqueItems": True},
                "lexicon": {"type": ["string", "null"]},
            },
        },
        "variants": {
            "if": {"type": "string"},
            "then": {"const": "grid"},
            "else": {"type": "array", "items": _VARIANT, "minItems": 1},
        },
        "repetitions": _POS_INT,
        "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "threshold": _PROB,
    },
}

DEFAULTS = {
    "name": "experiment",
    "labels": {"method": "graph", "match_fraction": 0.8},
    "model": {},
    "pretrain": {},
    "finetune": {},
    "augmentation": {"word_prob": 0.1, "kinds": list(KINDS), "lexicon": None},
    "variants": "grid",
    "repetitions": 3,
    "threshold": 0.5,
}


class ConfigError(ValueError):
    """Schema violation; the message lists one ``field.path: problem`` per line."""


def _path(error) -> str:
    parts = [str(p) for p in error.absolute_path]
    return ".".join(parts) if parts else "<root>"


def validate_config(config: dict) -> None:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: (_path(e), e.message))
    if errors:
        raise ConfigError("invalid experiment config:\n" + "\n".join(
            f"  {_path(e)}: {e.message}" for e in errors))
    ft = config.get("finetune", {})
    if ft.get("patience", 10) > ft.get("max_epochs", 50):
        raise ConfigError("invalid experiment config:\n  finetune.patience: exceeds max_epochs")
    seeds, reps = config.get("seeds"), config.get("repetitions")
    if seeds is not None and reps is not None and len(seeds) != reps:
        raise ConfigError("invalid experiment config:\n  seeds: length differs from repetitions")


def normalize_config(config: dict) -> dict:
    """Validate and fill defaults; the result is what gets recorded in metrics.json."""
    validate_config(config)
    out = copy.deepcopy(DEFAULTS)
    for key, value in config.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = {**out[key], **copy.deepcopy(value)}
        else:
            out[key] = copy.deepcopy(value)
    if "seeds" not in out:
        out["seeds"] = list(range(1, out["repetitions"] + 1))
    out["repetitions"] = len(out["seeds"])
    return out


def load_config(source: Union[str, Path, dict]) -> tuple[dict, Path]:
    """Return the normalized config and the directory relative paths resolve against."""
    if isinstance(source, dict):
        return normalize_config(source), Path.cwd()
    path = Path(source)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid experiment config: {path} is not JSON ({exc})") from exc
    return normalize_config(raw), path.resolve().parent


def reference_config() -> dict:
    """The bundled reference configuration on the synthetic corpus."""
    text = resources.files("contramatch").joinpath("data/synthetic_reference.json").read_text()
    return json.loads(text)


@dataclass(frozen=True)
class Variant:
    objective: str
    encoder: str = "frozen"
    augment: bool = False
    sampling: str = "source_aware"

    def __post_init__(self):
        if self.objective == "none":
            # nothing is pre-trained, so augmentation and sampling do not apply
            object.__setattr__(self, "augment", False)
            object.__setattr__(self, "sampling", "-")

    @property
    def name(self) -> str:
        tag = "F" if self.encoder == "frozen" else "UF"
        if self.objective == "none":
            return f"none({tag})"
        base = f"{self.objective}({tag})-{self.sampling}"
        return base + "+aug" if self.augment else base

    def to_dict(self) -> dict:
        return {"objective": self.objective, "encoder": self.encoder,
                "augment": self.augment, "sampling": self.sampling}


def expand_variants(spec) -> list[Variant]:
    """``"grid"`` or a list of variant dicts -> unique variants in stable order."""
    if spec == "grid":
        raw = [Variant(o, e, a, s) for o, e, a, s in itertools.product(
            OBJECTIVES, ENCODER_MODES, (False, True), SAMPLINGS)]
    else:
        raw = [Variant(**v) for v in spec]
    return list(dict.fromkeys(raw))


@dataclass
class LoadedCorpus:
    corpus: Corpus
    truth: Optional[dict] = None
    lexicon: Optional[dict] = None


def load_corpus(corpus_cfg: dict, base_dir: Path = Path(".")) -> LoadedCorpus:
    kind = corpus_cfg["kind"]
    resolve = lambda p: (base_dir / p) if not Path(p).is_absolute() else Path(p)  # noqa: E731
    if kind == "synthetic":
        params = dict(corpus_cfg.get("synthetic", {}))
        if "sources" in params:
            params["sources"] = tuple(params["sources"])
        synth = generate_synthetic_corpus(SynthConfig(**params))
        return LoadedCorpus(synth.corpus, synth.truth, synth.lexicon)
    if kind == "two_table":
        return LoadedCorpus(load_two_table_corpus(resolve(corpus_cfg["path"])))
    if kind == "multi_source":
        return LoadedCorpus(load_multi_source_corpus(resolve(corpus_cfg["offers"]),
                                                     resolve(corpus_cfg["pairs_dir"])))
    return LoadedCorpus(load_corpus_json(resolve(corpus_cfg["path"])))


def _augmentation(cfg: dict, loaded: LoadedCorpus, base_dir: Path) -> AugmentationPolicy:
    aug = cfg["augmentation"]
    lexicon = None
    if aug.get("lexicon") == "synthetic":
        lexicon = loaded.lexicon
    elif aug.get("lexicon"):
        path = Path(aug["lexicon"])
        lexicon = load_lexicon(path if path.is_absolute() else base_dir / path)
    return AugmentationPolicy(word_prob=aug["word_prob"], kinds=frozenset(aug["kinds"]),
                              synonym_lexicon=lexicon)


def _labels(cfg: dict, corpus: Corpus, seed: int):
    if cfg["labels"]["method"] == "cluster_ids":
        return labels_from_cluster_ids(corpus), None
    return derive_entity_labels(corpus, cfg["labels"]["match_fraction"], seed)


def _mean(values) -> float:
    return float(np.mean(values)) if values else 0.0


def aggregate(runs: list[dict]) -> list[dict]:
    rows: dict[str, dict] = {}
    for run in runs:
        row = rows.setdefault(run["variant"], {"variant": run["variant"], **run["spec"],
                                               "f1": [], "precision": [], "recall": []})
        for k in ("f1", "precision", "recall"):
            row[k].append(run["test"][k])
    out = []
    for row in rows.values():
        f1 = row.pop("f1")
        p, r = row.pop("precision"), row.pop("recall")
        out.append({**row, "repetitions": len(f1), "mean_f1": _mean(f1),
                    "std_f1": float(np.std(f1)), "mean_precision": _mean(p),
                    "mean_recall": _mean(r)})
    return out


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_aggregate_csv(rows: list[dict], path: Path) -> None:
    cols = ["variant", "objective", "encoder", "augment", "sampling", "repetitions",
            "mean_f1", "std_f1", "mean_precision", "mean_recall"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: repr(row[c]) if isinstance(row[c], float) else row[c]
                             for c in cols})


def run_experiment(source: Union[str, Path, dict], out_dir: Union[str, Path, None] = None,
                   seeds: Optional[list[int]] = None) -> dict:
    """Run every (variant, seed) of the config; returns the metrics dictionary.

    ``seeds`` overrides the configured seeds. Files are written only when
    ``out_dir`` is given.
    """
    cfg, base_dir = load_config(source)
    if seeds is not None:
        cfg["seeds"] = list(seeds)
        cfg["repetitions"] = len(seeds)
    loaded = load_corpus(cfg["corpus"], base_dir)
    corpus = loaded.corpus
    model_cfg = ModelConfig(**cfg["model"])
    policy = _augmentation(cfg, loaded, base_dir)
    variants = expand_variants(cfg["variants"])
    out = Path(out_dir) if out_dir is not None else None

    pretrained: dict[tuple, object] = {}
    runs, timings = [], {}
    for seed in cfg["seeds"]:
        pretrained.clear()  # keys carry the seed; earlier entries are dead
        labeling, report = _labels(cfg, corpus, seed)
        init = init_state(model_cfg, seed)
        for variant in variants:
            start = time.perf_counter()
            key = (variant.objective, variant.augment, variant.sampling, seed)
            pre_log = None
            if variant.objective == "none":
                state = init
            elif key in pretrained:
                state, pre_log = pretrained[key]
            else:
                pcfg = PretrainConfig(**cfg["pretrain"], mode=variant.objective,
                                      sampling=variant.sampling, seed=seed,
                                      augmentation=policy if variant.augment else None)
                state, pre_log = pretrain(corpus, labeling, pcfg, init)
                pretrained[key] = (state, pre_log)
            fcfg = FinetuneConfig(**cfg["finetune"], encoder_frozen=variant.encoder == "frozen",
                                  seed=seed)
            tuned, best_epoch, ft_log = finetune(corpus, state, fcfg)
            test = evaluate(corpus, "test", tuned, cfg["threshold"])
            valid = evaluate(corpus, "valid", tuned, cfg["threshold"])
            run = {
                "variant": variant.name,
                "spec": variant.to_dict(),
                "seed": seed,
                "best_epoch": best_epoch,
                "finetune_epochs": len(ft_log.rows),
                "best_val_loss": min(r["val_loss"] for r in ft_log.rows),
                "pretrain_final_loss": pre_log.rows[-1]["loss"] if pre_log and pre_log.rows else None,
                "num_labels": labeling.num_entities,
                "withheld_pairs": len(report.withheld_pairs) if report else 0,
                "test": test.to_dict(),
                "valid": valid.to_dict(),
            }
            runs.append(run)
            timings[f"{variant.name}/seed{seed}"] = time.perf_counter() - start
            log.info("%s seed %d: test F1 %.4f (best epoch %d)", variant.name, seed,
                     test.f1, best_epoch)
            if out is not None:
                stem = variant.name.replace("(", "_").replace(")", "")
                _write_json(out / "runs" / stem / f"seed{seed}.json", run)
                (out / "curves").mkdir(parents=True, exist_ok=True)
                if pre_log is not None:
                    pre_log.to_csv(out / "curves" / f"{stem}_seed{seed}_pretrain.csv")
                ft_log.to_csv(out / "curves" / f"{stem}_seed{seed}_finetune.csv")

    metrics = {
        "config": cfg,
        "corpus": {"offers": len(corpus.offers), "pairs": corpus.pair_counts(),
                   "pretraining_pool": len(pretraining_pool(corpus))},
        "runs": runs,
        "aggregate": aggregate(runs),
    }
    if out is not None:
        _write_json(out / "metrics.json", metrics)
        write_aggregate_csv(metrics["aggregate"], out / "aggregate.csv")
        _write_json(out / "timings.json", timings)
    return metrics


def mean_f1(metrics: dict) -> dict[str, float]:
    return {row["variant"]: row["mean_f1"] for row in metrics["aggregate"]}
