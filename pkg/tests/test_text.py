import string

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plugs.text import (LANGS, BpeConfigError, BpeVocab, DataError, EmptyCaption, MissingSeparator,
                        VocabularyError, build_plugs_target, reserved_tokens, split_output, train_bpe)

ALPHA = "abcdefgh "


@pytest.fixture(scope="module")
def small_vocab():
    rng = np.random.default_rng(0)
    lines = ["".join(rng.choice(list(ALPHA), size=40)) for _ in range(200)]
    return train_bpe(lines, len(reserved_tokens()) + 60)


def test_first_merge_is_most_frequent_pair():
    budget = len(reserved_tokens()) + 2 + 1  # "a", "b</w>", one merge
    vocab = train_bpe(["aaab aaab"], budget)
    assert vocab.merges == [("a", "a")]


def test_empty_corpus_rejected():
    with pytest.raises(BpeConfigError):
        train_bpe([], 1000)
    with pytest.raises(BpeConfigError):
        train_bpe(["   "], 1000)


def test_budget_below_alphabet_rejected():
    with pytest.raises(BpeConfigError):
        train_bpe(["abc def"], 10)


def test_merging_stops_when_no_pair_repeats():
    vocab = train_bpe(["abcd"], 10_000)
    assert vocab.merges == []


def test_reserved_tokens_come_first(small_vocab):
    assert small_vocab.pad == 0
    assert small_vocab.eos == 1
    seps = {small_vocab.sep(l) for l in LANGS}
    sos = {small_vocab.sos(l) for l in LANGS}
    assert len(seps) == len(sos) == len(LANGS)
    assert max(seps | sos) < len(reserved_tokens())


def test_empty_string_round_trip(small_vocab):
    assert small_vocab.encode("") == []
    assert small_vocab.decode([]) == ""


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.text(alphabet="abcdefgh", min_size=1, max_size=12), min_size=0, max_size=8))
def test_round_trip_over_training_alphabet(small_vocab, words):
    text = " ".join(words)
    assert small_vocab.decode(small_vocab.encode(text)) == text


@pytest.mark.parametrize("text", ["café", "aéb", "zz", "hello wörld ☃", "éa a"])
def test_unseen_characters_fall_back_to_bytes(small_vocab, text):
    ids = small_vocab.encode(text)
    assert small_vocab.decode(ids) == text


def test_byte_fallback_uses_byte_tokens(small_vocab):
    ids = small_vocab.encode("☃")
    toks = [small_vocab.tokens[i] for i in ids]
    assert [t for t in toks if t.startswith("<0x")] == ["<0xE2>", "<0x98>", "<0x83>"]


def test_decode_unknown_id(small_vocab):
    with pytest.raises(VocabularyError):
        small_vocab.decode([len(small_vocab) + 5])


def test_vocab_file_round_trip(tmp_path, small_vocab):
    p = tmp_path / "v.bpe"
    small_vocab.save(p)
    again = BpeVocab.load(p)
    assert again.dumps() == small_vocab.dumps()
    again.save(tmp_path / "w.bpe")
    assert (tmp_path / "w.bpe").read_bytes() == p.read_bytes()


def test_plugs_target_construction(small_vocab):
    v = small_vocab
    ids = build_plugs_target(v, "a dog", "ein hund", "de")
    assert ids == v.encode("a dog") + [v.sep("de")] + v.encode("ein hund") + [v.eos]


def test_plugs_target_rejects_pivot_and_empty(small_vocab):
    with pytest.raises(DataError):
        build_plugs_target(small_vocab, "a dog", "a dog", "en")
    with pytest.raises(DataError):
        build_plugs_target(small_vocab, "a dog", "  ", "de")


def test_split_simple(small_vocab):
    v = small_vocab
    ids = [v.sos("de")] + v.encode("a dog") + [v.sep("de")] + v.encode("ein hund") + [v.eos]
    out = split_output(v, ids, "de")
    assert (out.stabilizer, out.caption) == ("a dog", "ein hund")


def test_split_without_separator(small_vocab):
    with pytest.raises(MissingSeparator):
        split_output(small_vocab, small_vocab.encode("a dog") + [small_vocab.eos], "de")


def test_split_empty_caption(small_vocab):
    v = small_vocab
    with pytest.raises(EmptyCaption):
        split_output(v, v.encode("a dog") + [v.sep("de"), v.eos], "de")


def test_split_uses_first_separator(small_vocab):
    v = small_vocab
    ids = v.encode("x") + [v.sep("de")] + v.encode("y") + [v.sep("de")] + v.encode("z") + [v.eos]
    out = split_output(v, ids, "de")
    assert out.stabilizer == "x"
    assert out.caption == "y <de> z"


def test_other_language_separator_is_not_a_split_point(small_vocab):
    v = small_vocab
    ids = v.encode("x") + [v.sep("fr")] + v.encode("y") + [v.eos]
    with pytest.raises(MissingSeparator):
        split_output(v, ids, "de")
