"""Entity labels from pairwise match annotations.

Matching pairs from the train and validation splits become edges of a
correspondence graph; every connected component gets its own label.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .records import Corpus, PairAnnotation


@dataclass(frozen=True)
class EntityLabeling:
    labels: dict[str, int]
    num_entities: int

    def __getitem__(self, offer_id: str) -> int:
        return self.labels[offer_id]

    def groups(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {}
        for oid, lab in self.labels.items():
            out.setdefault(lab, []).append(oid)
        return out


@dataclass(frozen=True)
class WithholdingReport:
    used_pairs: list[PairAnnotation]
    withheld_pairs: list[PairAnnotation]
    fraction: float
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "fraction": self.fraction,
            "seed": self.seed,
            "num_used": len(self.used_pairs),
            "num_withheld": len(self.withheld_pairs),
            "used_pairs": [[p.left_id, p.right_id] for p in self.used_pairs],
            "withheld_pairs": [[p.left_id, p.right_id] for p in self.withheld_pairs],
        }


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def eligible_match_pairs(corpus: Corpus) -> list[PairAnnotation]:
    """Positive pairs of the train and validation splits, in file order."""
    return [p for split in ("train", "valid") for p in corpus.pairs[split] if p.label == 1]


def derive_entity_labels(
    corpus: Corpus, fraction: float = 1.0, seed: int = 0
) -> tuple[EntityLabeling, WithholdingReport]:
    """Label every offer by its connected component in the match graph.

    ``fraction`` is the share of eligible match pairs kept as edges; the rest
    are withheld, chosen uniformly without replacement under ``seed``.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    eligible = eligible_match_pairs(corpus)
    keep = round_half_up(fraction * len(eligible))
    order = np.random.default_rng(seed).permutation(len(eligible))
    used_idx = set(order[:keep].tolist())
    used = [p for i, p in enumerate(eligible) if i in used_idx]
    withheld = [p for i, p in enumerate(eligible) if i not in used_idx]

    test_keys = {p.key for p in corpus.pairs["test"]}
    if any(p.key in test_keys for p in used):
        raise RuntimeError("test pair leaked into the correspondence graph")

    ids = list(corpus.offers)
    index = {oid: i for i, oid in enumerate(ids)}
    src = np.array([index[p.left_id] for p in used], dtype=np.int64)
    dst = np.array([index[p.right_id] for p in used], dtype=np.int64)
    comp = kernels.connected_components(len(ids), src, dst)
    labels = dict(zip(ids, comp.tolist()))
    num = int(comp.max()) + 1 if len(ids) else 0
    return EntityLabeling(labels, num), WithholdingReport(used, withheld, fraction, seed)


def pretraining_pool(corpus: Corpus, labeling: Optional[EntityLabeling] = None) -> list[str]:
    """Offers that appear in any train or validation pair, in first-seen order."""
    seen: dict[str, None] = {}
    for split in ("train", "valid"):
        for p in corpus.pairs[split]:
            seen.setdefault(p.left_id, None)
            seen.setdefault(p.right_id, None)
    pool = list(seen)
    if labeling is not None:
        missing = [oid for oid in pool if oid not in labeling.labels]
        if missing:
            raise KeyError(f"{len(missing)} pooled offers unlabelled, e.g. {missing[0]}")
    return pool


def labels_from_cluster_ids(corpus: Corpus, pool: Optional[list[str]] = None) -> EntityLabeling:
    """Densely re-index the provided cluster ids of the pooled offers."""
    if pool is None:
        pool = pretraining_pool(corpus)
    dense: dict[str, int] = {}
    labels = {}
    for oid in pool:
        cluster = corpus.offers[oid].cluster_id
        if cluster is None:
            raise ValueError(f"offer {oid} has no cluster_id")
        labels[oid] = dense.setdefault(cluster, len(dense))
    return EntityLabeling(labels, len(dense))


def singleton_labels(offer_ids: list[str]) -> EntityLabeling:
    """One label per offer: the self-supervised labelling."""
    return EntityLabeling({oid: i for i, oid in enumerate(offer_ids)}, len(offer_ids))


def write_labels_csv(labeling: EntityLabeling, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["offer_id", "label"])
        for oid, lab in labeling.labels.items():
            writer.writerow([oid, lab])


def read_labels_csv(path) -> EntityLabeling:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        labels = {row["offer_id"]: int(row["label"]) for row in csv.DictReader(fh)}
    return EntityLabeling(labels, len(set(labels.values())))


def write_report_json(report: WithholdingReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1), encoding="utf-8")
