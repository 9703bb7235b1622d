import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contramatch.augment import (KINDS, QWERTY_ADJACENCY, AugmentationPolicy, augment_offer,
                                 headers, load_adjacency, load_lexicon, span_length, split,
                                 synonym, typo)

TEXT = "[COL] title [VAL] apple iphone 4s black [COL] brand [VAL] apple"


def oracle(text, policy, seed, kind=None):
    """Straight-line replay of the documented RNG consumption order."""
    rng = np.random.default_rng(seed)
    if kind is None:
        options = [k for k in KINDS if k in policy.kinds
                   and (k != "synonym" or policy.synonym_lexicon)] + ["identity"]
        kind = options[int(rng.integers(len(options)))]
    if kind == "identity":
        return text
    # segments: (header tokens, value words)
    segs, cur = [], None
    for tok in text.split():
        if tok == "[COL]":
            cur = [[tok], [], False]
            segs.append(cur)
        elif tok == "[VAL]" and not cur[2]:
            cur[0].append(tok)
            cur[2] = True
        elif cur[2]:
            cur[1].append(tok)
        else:
            cur[0].append(tok)
    n = sum(len(s[1]) for s in segs)
    draws = rng.random(n)
    if not (draws < policy.word_prob).any():
        return text
    k = 0
    out = []
    for head, words, _ in segs:
        sel = [bool(d < policy.word_prob) for d in draws[k:k + len(words)]]
        k += len(words)
        new = list(words)
        if kind == "swap":
            for i in range(len(new)):
                if sel[i] and i + 1 < len(new):
                    new[i], new[i + 1] = new[i + 1], new[i]
        elif kind == "delete":
            new = [w for w, s in zip(words, sel) if not s]
        elif kind == "typo":
            new = []
            for w, s in zip(words, sel):
                if s:
                    pos = [i for i, ch in enumerate(w) if ch in QWERTY_ADJACENCY]
                    if pos:
                        p = pos[int(rng.integers(len(pos)))]
                        near = QWERTY_ADJACENCY[w[p]]
                        w = w[:p] + near[int(rng.integers(len(near)))] + w[p + 1:]
                new.append(w)
        else:
            raise NotImplementedError(kind)
        out.append(" ".join(head + new))
    return " ".join(out)


def test_adjacency_table():
    assert set(QWERTY_ADJACENCY["t"]) == {"r", "y", "f", "g"}
    assert set(QWERTY_ADJACENCY["q"]) == {"w", "a"}
    for ch, near in QWERTY_ADJACENCY.items():
        for other in near:
            assert ch in QWERTY_ADJACENCY[other]  # adjacency is symmetric


def test_disabled_and_zero_prob_are_identity():
    rng = np.random.default_rng(0)
    for policy in (AugmentationPolicy(enabled=False), AugmentationPolicy(word_prob=0.0)):
        for _ in range(20):
            assert augment_offer(TEXT, policy, rng) == TEXT


def test_forced_delete_all():
    out = augment_offer("[COL] title [VAL] apple iphone", AugmentationPolicy(word_prob=1.0),
                        np.random.default_rng(0), kind="delete")
    assert out == "[COL] title [VAL]"


def test_forced_swap_all():
    out = augment_offer("[COL] title [VAL] a b c", AugmentationPolicy(word_prob=1.0),
                        np.random.default_rng(0), kind="swap")
    assert out == "[COL] title [VAL] b c a"


@pytest.mark.parametrize("kind", ["swap", "delete", "typo"])
def test_matches_straight_line_oracle_forced(kind):
    policy = AugmentationPolicy(word_prob=0.4)
    for seed in range(100):
        assert augment_offer(TEXT, policy, np.random.default_rng(seed), kind) == \
            oracle(TEXT, policy, seed, kind)


def test_matches_oracle_with_kind_draw():
    policy = AugmentationPolicy(word_prob=0.5, kinds=frozenset({"swap", "delete", "typo"}))
    seen = set()
    for seed in range(200):
        got = augment_offer(TEXT, policy, np.random.default_rng(seed))
        assert got == oracle(TEXT, policy, seed)
        seen.add(got)
    assert len(seen) > 20


def test_frozen_reference_trace():
    # outputs of the oracle above, frozen so RNG-order drift is caught
    policy = AugmentationPolicy(word_prob=0.5, kinds=frozenset({"swap", "delete", "typo"}))
    expected = {
        1: "[COL] title [VAL] apple 4s iphone black [COL] brand [VAL] apple",
        4: "[COL] title [VAL] apple iphone black [COL] brand [VAL]",
        6: "[COL] title [VAL] iphone 4s black apple [COL] brand [VAL] apple",
        8: "[COL] title [VAL] apple 4s black [COL] brand [VAL]",
    }
    for seed, want in expected.items():
        assert augment_offer(TEXT, policy, np.random.default_rng(seed)) == want


def test_split_and_synonym_and_typo():
    class Fixed:
        def integers(self, lo, hi=None):
            return 3
    assert split("iphone", Fixed()) == "iph one"
    assert split("a", np.random.default_rng(0)) == "a"
    assert synonym("laptop", np.random.default_rng(0), {"laptop": ("notebook",)}) == "notebook"
    assert synonym("phone", np.random.default_rng(0), {"laptop": ("notebook",)}) == "phone"
    outs = set()
    for seed in range(200):
        w = typo("cat", np.random.default_rng(seed))
        if w[:2] == "ca":
            outs.add(w)
    assert outs == {"car", "cag", "cay", "caf"}
    assert typo("123", np.random.default_rng(0)) == "123"


def test_span_length_range():
    rng = np.random.default_rng(0)
    assert {span_length(rng) for _ in range(300)} == {1, 2, 3}


def test_synonym_kind_needs_lexicon():
    assert "synonym" not in AugmentationPolicy().active_kinds
    assert "synonym" in AugmentationPolicy(synonym_lexicon={"a": ("b",)}).active_kinds
    with pytest.raises(ValueError):
        AugmentationPolicy(word_prob=1.5)
    with pytest.raises(ValueError):
        AugmentationPolicy(kinds=frozenset({"shout"}))


def test_lexicon_and_adjacency_files(tmp_path):
    (tmp_path / "lex.tsv").write_text("Laptop\tnotebook, portable\n\nbad line\n")
    assert load_lexicon(tmp_path / "lex.tsv") == {"laptop": ("notebook", "portable")}
    (tmp_path / "adj.json").write_text('{"A": ["s"]}')
    assert load_adjacency(tmp_path / "adj.json") == {"a": ("s",)}


words = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789", min_size=1, max_size=8)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["title", "brand", "desc"]),
                          st.lists(words, max_size=6)), min_size=1, max_size=4),
       st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_structure_preserved(segments, seed, prob):
    text = " ".join(" ".join(["[COL]", name, "[VAL]"] + vals) for name, vals in segments)
    policy = AugmentationPolicy(word_prob=prob, synonym_lexicon={"a": ("b c",)})
    out = augment_offer(text, policy, np.random.default_rng(seed))
    assert sorted(headers(out)) == sorted(headers(text))
    assert out.split().count("[VAL]") == text.split().count("[VAL]")


def test_unmarked_text_is_one_value():
    policy = AugmentationPolicy(word_prob=1.0)
    rng = np.random.default_rng(0)
    assert augment_offer("a b c", policy, rng, "delete") == ""
    assert augment_offer("a b c", policy, rng, "swap") == "b c a"
