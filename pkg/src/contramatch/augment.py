"""Word-level augmentations of serialized offers.

Only attribute-value words are touched; ``[COL]``, ``[VAL]`` and attribute
names pass through unchanged.

RNG consumption order for :func:`augment_offer` (fixed, so traces are
reproducible):

1. one ``integers(K + 1)`` draw picking a kind, where the options are the
   active kinds in :data:`KINDS` order followed by the identity option
   (skipped when a kind is forced);
2. one ``random()`` draw per value word, left to right, selecting the word
   when the draw is below ``word_prob``;
3. per-word parameter draws for the selected words, left to right:
   typo draws a character position then a neighbour, split draws a cut
   position, synonym draws a candidate, span_delete draws a span length;
   swap and delete draw nothing. A word with no admissible parameter
   (no typo-able character, length 1, no lexicon entry) draws nothing.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

KINDS = ("typo", "swap", "delete", "span_delete", "synonym", "split")
IDENTITY = "identity"
MAX_SPAN = 3
STRUCTURAL = ("[COL]", "[VAL]")

_ROWS = ("qwertyuiop", "asdfghjkl", "zxcvbnm")


def _qwerty_adjacency() -> dict[str, tuple[str, ...]]:
    # same-row left/right, row above at (c, c+1), row below at (c-1, c)
    table: dict[str, tuple[str, ...]] = {}
    for r, row in enumerate(_ROWS):
        for c, ch in enumerate(row):
            near = []
            for rr, cols in ((r, (c - 1, c + 1)), (r - 1, (c, c + 1)), (r + 1, (c - 1, c))):
                if 0 <= rr < len(_ROWS):
                    near += [_ROWS[rr][k] for k in cols if 0 <= k < len(_ROWS[rr])]
            table[ch] = tuple(near)
    return table


QWERTY_ADJACENCY = _qwerty_adjacency()


def load_adjacency(path) -> dict[str, tuple[str, ...]]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return {k.lower(): tuple(v) for k, v in data.items()}


def load_lexicon(path) -> dict[str, tuple[str, ...]]:
    """Read ``word<TAB>syn1,syn2,...`` lines."""
    lexicon: dict[str, tuple[str, ...]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or "\t" not in line:
            continue
        word, syns = line.split("\t", 1)
        cands = tuple(s.strip() for s in syns.split(",") if s.strip())
        if cands:
            lexicon[word.strip().lower()] = cands
    return lexicon


@dataclass(frozen=True)
class AugmentationPolicy:
    word_prob: float = 0.10
    kinds: frozenset = field(default_factory=lambda: frozenset(KINDS))
    synonym_lexicon: Optional[Mapping[str, tuple[str, ...]]] = None
    enabled: bool = True
    adjacency: Mapping[str, tuple[str, ...]] = field(default_factory=lambda: QWERTY_ADJACENCY)

    def __post_init__(self):
        if not 0.0 <= self.word_prob <= 1.0:
            raise ValueError(f"word_prob must lie in [0, 1], got {self.word_prob}")
        unknown = set(self.kinds) - set(KINDS)
        if unknown:
            raise ValueError(f"unknown augmentation kinds: {sorted(unknown)}")

    @property
    def active_kinds(self) -> tuple[str, ...]:
        """Enabled kinds in canonical order; synonym drops out without a lexicon."""
        return tuple(
            k for k in KINDS
            if k in self.kinds and (k != "synonym" or self.synonym_lexicon)
        )


# single-word transforms

def typo(word: str, rng: np.random.Generator, adjacency=QWERTY_ADJACENCY) -> str:
    positions = [i for i, ch in enumerate(word) if adjacency.get(ch.lower())]
    if not positions:
        return word
    pos = positions[int(rng.integers(len(positions)))]
    near = adjacency[word[pos].lower()]
    repl = near[int(rng.integers(len(near)))]
    if word[pos].isupper():
        repl = repl.upper()
    return word[:pos] + repl + word[pos + 1:]


def split(word: str, rng: np.random.Generator) -> str:
    if len(word) < 2:
        return word
    cut = int(rng.integers(1, len(word)))
    return word[:cut] + " " + word[cut:]


def synonym(word: str, rng: np.random.Generator, lexicon: Mapping[str, tuple[str, ...]]) -> str:
    cands = lexicon.get(word.lower()) if lexicon else None
    if not cands:
        return word
    return cands[int(rng.integers(len(cands)))]


def span_length(rng: np.random.Generator) -> int:
    return int(rng.integers(1, MAX_SPAN + 1))


# segment-level application

def _parse(text: str) -> list[tuple[str, list[str]]]:
    """Split into (header, value words) segments; header is e.g. ``"[COL] title [VAL]"``.

    Text without column markers is one value segment with an empty header.
    """
    if "[COL]" not in text.split():
        return [("", text.split())]
    segments: list[tuple[str, list[str]]] = []
    header: list[str] = []
    words: list[str] = []
    in_value = False
    for tok in text.split():
        if tok == "[COL]":
            if header or words:
                segments.append((" ".join(header), words))
            header, words, in_value = [tok], [], False
        elif tok == "[VAL]" and not in_value:
            header.append(tok)
            in_value = True
        elif in_value:
            words.append(tok)
        else:
            header.append(tok)
    if header or words:
        segments.append((" ".join(header), words))
    return segments


def _render(segments: list[tuple[str, list[str]]]) -> str:
    return " ".join(" ".join([h] + w) if h else " ".join(w) for h, w in segments if h or w)


def _apply(kind: str, words: list[str], selected: list[bool], rng, policy) -> list[str]:
    if kind == "delete":
        return [w for w, s in zip(words, selected) if not s]
    if kind == "span_delete":
        drop = [False] * len(words)
        for i, s in enumerate(selected):
            if s:
                for k in range(i, min(i + span_length(rng), len(words))):
                    drop[k] = True
        return [w for w, d in zip(words, drop) if not d]
    if kind == "swap":
        out = list(words)
        for i, s in enumerate(selected):
            if s and i + 1 < len(out):
                out[i], out[i + 1] = out[i + 1], out[i]
        return out
    out = []
    for w, s in zip(words, selected):
        if not s:
            out.append(w)
        elif kind == "typo":
            out.append(typo(w, rng, policy.adjacency))
        elif kind == "split":
            out.append(split(w, rng))
        elif kind == "synonym":
            out.append(synonym(w, rng, policy.synonym_lexicon))
        else:
            raise ValueError(f"unknown augmentation kind {kind!r}")
    return out


def augment_offer(
    text: str,
    policy: AugmentationPolicy,
    rng: np.random.Generator,
    kind: Optional[str] = None,
) -> str:
    """Augment a serialized offer with one randomly chosen kind (or none).

    ``kind`` forces a specific transform and skips the kind draw. Swaps act
    within one attribute value, left to right on the current word order.
    """
    if not policy.enabled:
        return text
    if kind is None:
        options = policy.active_kinds + (IDENTITY,)
        kind = options[int(rng.integers(len(options)))]
    if kind == IDENTITY:
        return text
    segments = _parse(text)
    flat = [w for _, words in segments for w in words]
    draws = rng.random(len(flat)) if flat else np.empty(0)
    selected = (draws < policy.word_prob).tolist()
    if not any(selected):
        return text
    out, k = [], 0
    for header, words in segments:
        sel = selected[k:k + len(words)]
        k += len(words)
        out.append((header, _apply(kind, words, sel, rng, policy) if any(sel) else words))
    return _render(out)


def headers(text: str) -> list[str]:
    """The ``[COL] name`` headers of a serialized offer, in order."""
    return [h.removesuffix(" [VAL]") for h, _ in _parse(text) if h]
