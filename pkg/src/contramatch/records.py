"""Offers, labelled pairs, corpus ingestion and offer serialization."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

SPLITS = ("train", "valid", "test")
RESERVED_MULTI_COLUMNS = ("id", "source", "cluster_id")


class IngestionError(Exception):
    """A required input file or column is missing or unreadable."""


class ValidationError(ValueError):
    """Loaded data violates a corpus invariant."""


@dataclass(frozen=True)
class Offer:
    offer_id: str
    source_id: str
    attributes: Mapping[str, Optional[str]]
    cluster_id: Optional[str] = None


@dataclass(frozen=True)
class PairAnnotation:
    left_id: str
    right_id: str
    label: int

    @property
    def key(self) -> frozenset:
        return frozenset((self.left_id, self.right_id))


@dataclass
class Corpus:
    offers: dict[str, Offer]
    schema: tuple[str, ...]
    pairs: dict[str, list[PairAnnotation]] = field(default_factory=dict)

    def __post_init__(self):
        for split in SPLITS:
            self.pairs.setdefault(split, [])

    @property
    def sources(self) -> list[str]:
        seen: dict[str, None] = {}
        for offer in self.offers.values():
            seen.setdefault(offer.source_id, None)
        return list(seen)

    def source_of(self, offer_id: str) -> str:
        return self.offers[offer_id].source_id

    def pair_counts(self) -> dict[str, dict[str, int]]:
        """Positive/negative counts per split, plus the train+valid union."""
        out = {}
        for split in SPLITS:
            pos = sum(p.label for p in self.pairs[split])
            out[split] = {"pos": pos, "neg": len(self.pairs[split]) - pos}
        out["train+valid"] = {
            k: out["train"][k] + out["valid"][k] for k in ("pos", "neg")
        }
        return out

    def validate(self) -> None:
        bad = []
        for split in SPLITS:
            for row, p in enumerate(self.pairs[split], start=2):
                if p.left_id not in self.offers or p.right_id not in self.offers:
                    bad.append(f"{split}.csv row {row}: ({p.left_id}, {p.right_id})")
                elif p.left_id == p.right_id:
                    bad.append(f"{split}.csv row {row}: self-pair {p.left_id}")
                if p.label not in (0, 1):
                    bad.append(f"{split}.csv row {row}: label {p.label!r}")
        if bad:
            raise ValidationError("invalid pair rows:\n  " + "\n  ".join(bad))
        keys = {s: {p.key for p in self.pairs[s]} for s in SPLITS}
        for i, a in enumerate(SPLITS):
            for b in SPLITS[i + 1:]:
                overlap = keys[a] & keys[b]
                if overlap:
                    example = sorted(tuple(sorted(k)) for k in overlap)[0]
                    raise ValidationError(
                        f"{len(overlap)} id-pairs shared by {a} and {b}, e.g. {example}"
                    )


def _clean(value: Optional[str]) -> Optional[str]:
    if value is None:
        return None
    value = " ".join(value.split())
    return value or None


def serialize_offer(offer: Offer) -> str:
    """Render ``[COL] name [VAL] value`` segments in schema order.

    Missing (or whitespace-only) values are skipped, and internal whitespace is
    collapsed so the output never contains two consecutive spaces.
    """
    parts = []
    for name, value in offer.attributes.items():
        value = _clean(value)
        if value is None:
            continue
        parts.append(f"[COL] {name} [VAL] {value}")
    return " ".join(parts)


def _read_csv(path: Path) -> tuple[list[str], list[dict[str, str]]]:
    if not path.is_file():
        raise IngestionError(f"missing file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise IngestionError(f"{path}: no header row")
        return list(reader.fieldnames), list(reader)


def _read_pairs(path: Path, resolve, left_col: str, right_col: str) -> list[PairAnnotation]:
    header, rows = _read_csv(path)
    for col in (left_col, right_col, "label"):
        if col not in header:
            raise IngestionError(f"{path}: missing column {col!r}")
    pairs, dangling = [], []
    for row_no, row in enumerate(rows, start=2):
        left, right = resolve(row[left_col], "left"), resolve(row[right_col], "right")
        if left is None or right is None:
            dangling.append(f"{path.name} row {row_no}: ({row[left_col]}, {row[right_col]})")
            continue
        try:
            label = int(float(row["label"]))
        except ValueError:
            raise ValidationError(f"{path.name} row {row_no}: bad label {row['label']!r}")
        pairs.append(PairAnnotation(left, right, label))
    if dangling:
        raise ValidationError("dangling pair ids:\n  " + "\n  ".join(dangling))
    return pairs


def _table_offers(path: Path, source: str) -> tuple[list[str], dict[str, Offer]]:
    header, rows = _read_csv(path)
    id_col, attrs = header[0], header[1:]
    offers: dict[str, Offer] = {}
    for row_no, row in enumerate(rows, start=2):
        oid = f"{source}:{row[id_col]}"
        if oid in offers:
            raise ValidationError(f"{path.name} row {row_no}: duplicate id {row[id_col]!r}")
        offers[oid] = Offer(oid, source, {a: _clean(row[a]) for a in attrs})
    return attrs, offers


def load_two_table_corpus(dir_path) -> Corpus:
    """Load a deepmatcher-style directory (tableA/tableB + train/valid/test)."""
    root = Path(dir_path)
    schema_a, offers_a = _table_offers(root / "tableA.csv", "A")
    schema_b, offers_b = _table_offers(root / "tableB.csv", "B")
    schema = tuple(schema_a + [c for c in schema_b if c not in schema_a])
    offers = {}
    for oid, offer in {**offers_a, **offers_b}.items():
        attrs = {name: offer.attributes.get(name) for name in schema}
        offers[oid] = Offer(oid, offer.source_id, attrs)

    def resolve(raw: str, side: str) -> Optional[str]:
        oid = f"{'A' if side == 'left' else 'B'}:{raw}"
        return oid if oid in offers else None

    pairs = {
        split: _read_pairs(root / f"{split}.csv", resolve, "ltable_id", "rtable_id")
        for split in SPLITS
    }
    corpus = Corpus(offers, schema, pairs)
    corpus.validate()
    return corpus


def load_multi_source_corpus(offers_path, pairs_dir) -> Corpus:
    """Load one offers table with a ``source`` column plus pair split files.

    Pair files use ``left_id,right_id,label`` (``ltable_id``/``rtable_id`` are
    accepted too) and reference the raw ids of the offers table.
    """
    offers_path = Path(offers_path)
    header, rows = _read_csv(offers_path)
    for col in ("id", "source"):
        if col not in header:
            raise IngestionError(f"{offers_path}: missing column {col!r}")
    schema = tuple(c for c in header if c not in RESERVED_MULTI_COLUMNS)
    has_cluster = "cluster_id" in header
    offers: dict[str, Offer] = {}
    raw_to_id: dict[str, str] = {}
    for row_no, row in enumerate(rows, start=2):
        raw, source = row["id"], row["source"]
        if raw in raw_to_id:
            raise ValidationError(f"{offers_path.name} row {row_no}: duplicate id {raw!r}")
        oid = raw if raw.startswith(f"{source}:") else f"{source}:{raw}"
        raw_to_id[raw] = oid
        cluster = _clean(row["cluster_id"]) if has_cluster else None
        offers[oid] = Offer(oid, source, {a: _clean(row[a]) for a in schema}, cluster)

    pairs = {}
    for split in SPLITS:
        path = Path(pairs_dir) / f"{split}.csv"
        header, _ = _read_csv(path)
        left, right = ("left_id", "right_id") if "left_id" in header else ("ltable_id", "rtable_id")
        pairs[split] = _read_pairs(path, lambda raw, _side: raw_to_id.get(raw), left, right)
    corpus = Corpus(offers, schema, pairs)
    corpus.validate()
    return corpus


def write_multi_source_corpus(corpus: Corpus, offers_path, pairs_dir) -> None:
    """Write ``corpus`` in the format read by :func:`load_multi_source_corpus`."""
    pairs_dir = Path(pairs_dir)
    pairs_dir.mkdir(parents=True, exist_ok=True)
    has_cluster = any(o.cluster_id is not None for o in corpus.offers.values())
    raw_ids = {}
    for offer in corpus.offers.values():
        prefix = f"{offer.source_id}:"
        raw_ids[offer.offer_id] = (offer.offer_id[len(prefix):]
                                   if offer.offer_id.startswith(prefix) else offer.offer_id)
    if len(set(raw_ids.values())) < len(raw_ids):
        # stripped ids collide across sources; keep the namespaced ids
        raw_ids = {oid: oid for oid in corpus.offers}
    with Path(offers_path).open("w", newline="", encoding="utf-8") as fh:
        cols = ["id", "source"] + (["cluster_id"] if has_cluster else []) + list(corpus.schema)
        writer = csv.writer(fh)
        writer.writerow(cols)
        for offer in corpus.offers.values():
            row = [raw_ids[offer.offer_id], offer.source_id]
            if has_cluster:
                row.append(offer.cluster_id or "")
            row += [offer.attributes.get(a) or "" for a in corpus.schema]
            writer.writerow(row)
    for split in SPLITS:
        with (pairs_dir / f"{split}.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["left_id", "right_id", "label"])
            for p in corpus.pairs[split]:
                writer.writerow([raw_ids[p.left_id], raw_ids[p.right_id], p.label])


def corpus_to_dict(corpus: Corpus) -> dict:
    return {
        "schema": list(corpus.schema),
        "offers": [
            {
                "id": o.offer_id,
                "source": o.source_id,
                "cluster_id": o.cluster_id,
                "attributes": dict(o.attributes),
            }
            for o in corpus.offers.values()
        ],
        "pairs": {
            split: [[p.left_id, p.right_id, p.label] for p in corpus.pairs[split]]
            for split in SPLITS
        },
    }


def corpus_from_dict(data: dict) -> Corpus:
    try:
        schema = tuple(data["schema"])
        offers = {}
        for rec in data["offers"]:
            attrs = {name: rec["attributes"].get(name) for name in schema}
            offers[rec["id"]] = Offer(rec["id"], rec["source"], attrs, rec.get("cluster_id"))
        pairs = {
            split: [PairAnnotation(a, b, int(y)) for a, b, y in data["pairs"].get(split, [])]
            for split in SPLITS
        }
    except (KeyError, TypeError) as exc:
        raise IngestionError(f"malformed corpus JSON: {exc!r}") from exc
    corpus = Corpus(offers, schema, pairs)
    corpus.validate()
    return corpus


def save_corpus_json(corpus: Corpus, path) -> None:
    Path(path).write_text(json.dumps(corpus_to_dict(corpus), indent=1, ensure_ascii=False),
                          encoding="utf-8")


def load_corpus_json(path) -> Corpus:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"missing file: {path}")
    return corpus_from_dict(json.loads(path.read_text(encoding="utf-8")))


def offers_from_records(records: Iterable[dict], schema: Iterable[str]) -> dict[str, Offer]:
    """Build offers from plain dicts with ``id``, ``source`` and attribute keys."""
    schema = tuple(schema)
    return {
        r["id"]: Offer(r["id"], r["source"], {a: _clean(r.get(a)) for a in schema},
                       r.get("cluster_id"))
        for r in records
    }
