"""Per-source sampling datasets and 2N contrastive batch assembly.

A source-aware dataset for source ``s`` holds every pooled offer of ``s``
plus the offers of other sources that share an entity label with one of
them. Drawing each batch from a single such dataset means two offers can
only meet in a batch if they are from the same (duplicate-free) source or
are linked through known matches, so unlinked true matches never appear
as false negatives.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .entity_graph import EntityLabeling
from .records import Corpus

POOLED_SOURCE = "*"


@dataclass(frozen=True)
class SamplingDataset:
    source_id: str
    members: tuple[str, ...]
    label_index: dict[int, tuple[str, ...]]

    def __len__(self) -> int:
        return len(self.members)

    @cached_property
    def label_of(self) -> dict[str, int]:
        return {oid: lab for lab, group in self.label_index.items() for oid in group}

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "members": list(self.members),
            "label_index": {str(k): list(v) for k, v in self.label_index.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SamplingDataset":
        return cls(
            data["source_id"],
            tuple(data["members"]),
            {int(k): tuple(v) for k, v in data["label_index"].items()},
        )


@dataclass(frozen=True)
class ContrastiveBatch:
    items: list[tuple[str, int]]
    origin: str

    @property
    def n(self) -> int:
        return len(self.items) // 2

    @property
    def offer_ids(self) -> list[str]:
        return [oid for oid, _ in self.items]

    @property
    def labels(self) -> np.ndarray:
        return np.array([lab for _, lab in self.items], dtype=np.int64)


def _make_dataset(source_id: str, members: list[str], labeling: EntityLabeling) -> SamplingDataset:
    index: dict[int, list[str]] = {}
    for oid in members:
        index.setdefault(labeling[oid], []).append(oid)
    return SamplingDataset(source_id, tuple(members), {k: tuple(v) for k, v in index.items()})


def build_sampling_datasets(
    pool: Sequence[str], labeling: EntityLabeling, corpus: Corpus
) -> list[SamplingDataset]:
    """One dataset per source present in ``pool``, members in pool order."""
    if not pool:
        raise ValueError("empty pre-training pool")
    sources: dict[str, None] = {}
    for oid in pool:
        sources.setdefault(corpus.source_of(oid), None)
    datasets = []
    for source in sources:
        own_labels = {labeling[oid] for oid in pool if corpus.source_of(oid) == source}
        members = [
            oid for oid in pool
            if corpus.source_of(oid) == source or labeling[oid] in own_labels
        ]
        datasets.append(_make_dataset(source, members, labeling))
    return datasets


def build_pooled_dataset(
    pool: Sequence[str], labeling: EntityLabeling, corpus: Optional[Corpus] = None
) -> SamplingDataset:
    """The single all-sources dataset (the label-noisy baseline)."""
    if not pool:
        raise ValueError("empty dataset: the pool has no offers")
    return _make_dataset(POOLED_SOURCE, list(pool), labeling)


def validate_batch(batch: ContrastiveBatch, dataset: SamplingDataset, labeling_of: dict) -> None:
    """Raise ``AssertionError`` if ``batch`` breaks a ContrastiveBatch invariant."""
    n = batch.n
    if len(batch.items) != 2 * n or n < 1:
        raise AssertionError(f"batch has {len(batch.items)} items, expected an even count >= 2")
    if batch.origin != dataset.source_id:
        raise AssertionError("batch origin does not match its dataset")
    members = set(dataset.members)
    for oid, lab in batch.items:
        if oid not in members:
            raise AssertionError(f"{oid} not in dataset {dataset.source_id}")
        if labeling_of[oid] != lab:
            raise AssertionError(f"{oid} carries label {lab}, expected {labeling_of[oid]}")
    for i in range(n):
        if batch.items[i][1] != batch.items[n + i][1]:
            raise AssertionError(f"anchor {i} has no same-label companion")


def sample_batch(
    datasets: Sequence[SamplingDataset],
    n: int,
    rng: np.random.Generator,
    choice: str = "uniform",
    debug: bool = False,
) -> ContrastiveBatch:
    """Draw N anchors from one randomly chosen dataset plus one positive each.

    The positive is drawn uniformly from the anchor's label group and may be
    the anchor itself. Anchors are distinct when the dataset has at least N
    members. Items are ordered anchors first, so item ``i`` and ``i + N``
    are a positive pair. ``choice="proportional"`` weights datasets by size.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    nonempty = [ds for ds in datasets if len(ds)]
    if not nonempty:
        raise ValueError("all sampling datasets are empty")
    if choice == "uniform":
        ds = nonempty[int(rng.integers(len(nonempty)))]
    elif choice == "proportional":
        sizes = np.array([len(d) for d in nonempty], dtype=float)
        ds = nonempty[int(rng.choice(len(nonempty), p=sizes / sizes.sum()))]
    else:
        raise ValueError(f"unknown dataset choice {choice!r}")

    size = len(ds)
    if size >= n:
        idx = rng.choice(size, size=n, replace=False)
    else:
        idx = rng.integers(0, size, size=n)
    label_of = ds.label_of
    anchors = [ds.members[i] for i in idx]
    positives = []
    for oid in anchors:
        group = ds.label_index[label_of[oid]]
        positives.append(group[int(rng.integers(len(group)))])
    items = [(oid, label_of[oid]) for oid in anchors + positives]
    batch = ContrastiveBatch(items, ds.source_id)
    if debug:
        validate_batch(batch, ds, label_of)
    return batch


def batch_rng(seed: int, epoch: int, step: int) -> np.random.Generator:
    """Independent generator per (seed, epoch, step), independent of thread count."""
    return np.random.default_rng([seed, 0x5A3, epoch, step])


def save_datasets_json(datasets: Sequence[SamplingDataset], path) -> None:
    Path(path).write_text(json.dumps([d.to_dict() for d in datasets], indent=1),
                          encoding="utf-8")


def load_datasets_json(path) -> list[SamplingDataset]:
    return [SamplingDataset.from_dict(d) for d in json.loads(Path(path).read_text("utf-8"))]
