"""Synthetic multi-source product corpora with known ground truth.

Entities come in families that share brand, series and category, so
siblings make hard negatives; the entity's model code is what tells
siblings apart. Every source renders each entity it lists with its own
title word order, boilerplate and per-offer noise (dropped tokens, typos,
category synonyms). Only ``annotation_fraction`` of the true cross-source
matches are released as train/validation positives; the rest become test
positives.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .augment import synonym, typo
from .entity_graph import round_half_up
from .records import Corpus, Offer, PairAnnotation

SCHEMA = ("title", "brand", "description")
_CONSONANTS = "bcdfghjklmnprstvwz"
_VOWELS = "aeiou"
_CAPACITIES = ("8gb", "16gb", "32gb", "64gb", "128gb", "256gb", "512gb", "1tb")
_COLORS = ("black", "white", "silver", "blue", "red", "gold", "grey", "green")


@dataclass(frozen=True)
class SynthConfig:
    num_entities: int = 120
    sources: tuple[str, ...] = ("A", "B", "C")
    offers_per_entity_per_source: int = 1
    presence: float = 1.0
    annotation_fraction: float = 0.5
    family_size: int = 4
    num_categories: int = 6
    token_drop: float = 0.1
    code_drop: float = 0.0
    typo_rate: float = 0.05
    synonym_rate: float = 0.3
    filler_words: int = 4
    filler_vocab: int = 300
    negatives_per_positive: float = 3.0
    hard_negative_share: float = 0.7
    valid_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if min(self.num_entities, len(self.sources), self.offers_per_entity_per_source,
               self.family_size) < 1:
            raise ValueError("counts must be >= 1")
        if not 0.0 < self.annotation_fraction <= 1.0:
            raise ValueError("annotation_fraction must lie in (0, 1]")


@dataclass
class SyntheticCorpus:
    corpus: Corpus
    truth: dict[str, int]
    lexicon: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def true_match(self, a: str, b: str) -> bool:
        return self.truth[a] == self.truth[b]


class _Words:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.used: set[str] = set()

    def word(self, syllables: int = 2) -> str:
        while True:
            w = "".join(
                _CONSONANTS[self.rng.integers(len(_CONSONANTS))] + _VOWELS[self.rng.integers(len(_VOWELS))]
                for _ in range(syllables)
            )
            if w not in self.used:
                self.used.add(w)
                return w

    def code(self) -> str:
        while True:
            w = (_CONSONANTS[self.rng.integers(len(_CONSONANTS))]
                 + _CONSONANTS[self.rng.integers(len(_CONSONANTS))]
                 + str(int(self.rng.integers(100, 10000))))
            if w not in self.used:
                self.used.add(w)
                return w


def generate_synthetic_corpus(cfg: SynthConfig = SynthConfig(), **overrides) -> SyntheticCorpus:
    """Generate a corpus plus the full offer -> entity ground truth.

    With one offer per entity and source the sources are duplicate-free.
    Offer ids are ``<source>:<n>`` with ``n`` unrelated to the entity.
    """
    if overrides:
        cfg = SynthConfig(**{**cfg.__dict__, **overrides})
    rng = np.random.default_rng(cfg.seed)
    words = _Words(rng)

    categories = [words.word(3) for _ in range(cfg.num_categories)]
    lexicon = {c: (words.word(3),) for c in categories}
    lexicon.update({syns[0]: (c,) for c, syns in lexicon.items()})
    fillers = [words.word(2) for _ in range(cfg.filler_vocab)]

    num_families = -(-cfg.num_entities // cfg.family_size)
    families = [
        {"brand": words.word(2), "series": words.word(2),
         "category": categories[int(rng.integers(cfg.num_categories))]}
        for _ in range(num_families)
    ]
    entities = []
    for e in range(cfg.num_entities):
        fam = families[e // cfg.family_size]
        entities.append({
            "family": e // cfg.family_size, "code": words.code(),
            "capacity": _CAPACITIES[int(rng.integers(len(_CAPACITIES)))],
            "color": _COLORS[int(rng.integers(len(_COLORS)))], **fam,
        })

    parts = ("brand", "series", "code", "capacity", "color", "category")
    styles = {}
    for s in cfg.sources:
        order = list(rng.permutation(len(parts)))
        styles[s] = {"order": [parts[i] for i in order],
                     "boiler": [words.word(2) for _ in range(3)]}

    listed: dict[str, list[int]] = {s: [] for s in cfg.sources}
    for e in range(cfg.num_entities):
        present = [s for s in cfg.sources if rng.random() < cfg.presence]
        if len(present) < 2 <= len(cfg.sources):
            present = [cfg.sources[i] for i in sorted(rng.choice(len(cfg.sources), 2, replace=False))]
        for s in present:
            listed[s].extend([e] * cfg.offers_per_entity_per_source)

    def noisy(token: str, drop: float) -> Optional[str]:
        if rng.random() < drop:
            return None
        if token in lexicon and rng.random() < cfg.synonym_rate:
            token = synonym(token, rng, lexicon)
        if rng.random() < cfg.typo_rate:
            token = typo(token, rng)
        return token

    offers: dict[str, Offer] = {}
    truth: dict[str, int] = {}
    by_entity_source: dict[tuple[int, str], list[str]] = {}
    for s in cfg.sources:
        style = styles[s]
        for k, e in enumerate(rng.permutation(listed[s]).tolist()):
            ent = entities[e]
            title = [noisy(ent[p], cfg.code_drop if p == "code" else cfg.token_drop)
                     for p in style["order"]]
            desc = [fillers[int(i)] for i in rng.integers(len(fillers), size=cfg.filler_words)]
            desc += [ent["series"], style["boiler"][int(rng.integers(3))]]
            brand = ent["brand"] if rng.random() < 0.7 else None
            oid = f"{s}:{k}"
            offers[oid] = Offer(oid, s, {
                "title": " ".join(t for t in title if t),
                "brand": brand,
                "description": " ".join(desc),
            })
            truth[oid] = e
            by_entity_source.setdefault((e, s), []).append(oid)

    src_index = {s: i for i, s in enumerate(cfg.sources)}
    positives = []
    for e in range(cfg.num_entities):
        ids = [o for s in cfg.sources for o in by_entity_source.get((e, s), [])]
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                if offers[a].source_id != offers[b].source_id:
                    positives.append((a, b))
    order = rng.permutation(len(positives))
    n_annot = round_half_up(cfg.annotation_fraction * len(positives))
    annotated = [positives[i] for i in sorted(order[:n_annot])]
    unannotated = [positives[i] for i in sorted(order[n_annot:])]

    ids_by_source = {s: [o for o in offers if offers[o].source_id == s] for s in cfg.sources}
    family_members: dict[tuple[int, str], list[str]] = {}
    for oid, e in truth.items():
        family_members.setdefault((entities[e]["family"], offers[oid].source_id), []).append(oid)
    all_ids = list(offers)
    target = round_half_up(cfg.negatives_per_positive * len(positives))
    negatives, seen = [], set()
    attempts = 0
    while len(negatives) < target and attempts < 50 * max(target, 1) and len(cfg.sources) > 1:
        attempts += 1
        a = all_ids[int(rng.integers(len(all_ids)))]
        others = [s for s in cfg.sources if s != offers[a].source_id]
        s = others[int(rng.integers(len(others)))]
        if rng.random() < cfg.hard_negative_share:
            cands = [o for o in family_members.get((entities[truth[a]]["family"], s), [])
                     if truth[o] != truth[a]]
        else:
            cands = [o for o in ids_by_source[s] if truth[o] != truth[a]]
        if not cands:
            continue
        b = cands[int(rng.integers(len(cands)))]
        if src_index[offers[a].source_id] > src_index[s]:
            a, b = b, a
        key = frozenset((a, b))
        if key not in seen:
            seen.add(key)
            negatives.append((a, b))

    splits: dict[str, list[PairAnnotation]] = {"train": [], "valid": [], "test": []}
    for a, b in annotated:
        split = "valid" if rng.random() < cfg.valid_fraction else "train"
        splits[split].append(PairAnnotation(a, b, 1))
    for a, b in unannotated:
        splits["test"].append(PairAnnotation(a, b, 1))
    for a, b in negatives:
        if rng.random() >= cfg.annotation_fraction:
            split = "test"
        else:
            split = "valid" if rng.random() < cfg.valid_fraction else "train"
        splits[split].append(PairAnnotation(a, b, 0))
    for split, pairs in splits.items():
        splits[split] = [pairs[i] for i in rng.permutation(len(pairs))]

    corpus = Corpus(offers, SCHEMA, splits)
    corpus.validate()
    return SyntheticCorpus(corpus, truth, lexicon)


def true_match_label_conflicts(dataset_members, labels: dict[str, int],
                               truth: dict[str, int]) -> int:
    """Count pairs inside one dataset that truly match but carry different labels."""
    by_entity: dict[int, set[int]] = {}
    counts: dict[int, dict[int, int]] = {}
    for oid in dataset_members:
        e = truth[oid]
        by_entity.setdefault(e, set()).add(labels[oid])
        counts.setdefault(e, {}).setdefault(labels[oid], 0)
        counts[e][labels[oid]] += 1
    total = 0
    for e, per_label in counts.items():
        n = sum(per_label.values())
        total += (n * n - sum(c * c for c in per_label.values())) // 2
    return total
