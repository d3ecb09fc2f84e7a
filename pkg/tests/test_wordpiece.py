from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from debatelm.errors import ConfigError, DataError
from debatelm.wordpiece import (
    SPECIAL_TOKENS,
    Encoding,
    Vocabulary,
    decode,
    encode,
    fragmentation_report,
    load_vocab,
    normalize,
    pretokenize,
    save_vocab,
    train_vocabulary,
    vocab_overlap,
)


def make_vocab(extra, casing="uncased"):
    return Vocabulary(tokens=list(SPECIAL_TOKENS) + list(extra), casing=casing)


# ---------------------------------------------------------------------------
# Independent naive trainer used as the merge-loop oracle: recounts all
# statistics from scratch every iteration and scores with exact Fractions.


def naive_train(texts, budget, casing):
    from debatelm.wordpiece import MAX_WORD_CHARS, _initial_split, _merge_pieces

    freqs = {}
    for text in texts:
        for word, _, _ in pretokenize(normalize(text, casing)):
            if len(word) <= MAX_WORD_CHARS:
                freqs[word] = freqs.get(word, 0) + 1
    splits = {w: _initial_split(w) for w in freqs}
    units = sorted({p for pieces in splits.values() for p in pieces})
    vocab = list(SPECIAL_TOKENS) + units
    vocab_set = set(vocab)
    while len(vocab) < budget:
        pair_freq, piece_freq = {}, {}
        for w, pieces in splits.items():
            for piece in pieces:
                piece_freq[piece] = piece_freq.get(piece, 0) + freqs[w]
            for pair in zip(pieces, pieces[1:]):
                pair_freq[pair] = pair_freq.get(pair, 0) + freqs[w]
        if not pair_freq:
            break
        best = None
        for (l, r), c in pair_freq.items():
            score = Fraction(c, piece_freq[l] * piece_freq[r])
            merged = l + r[2:]
            key = (-score, merged, (l, r))
            if best is None or key < best[0]:
                best = (key, l, r, merged)
        _, l, r, merged = best
        if merged not in vocab_set:
            vocab.append(merged)
            vocab_set.add(merged)
        for w in splits:
            splits[w] = _merge_pieces(splits[w], l, r, merged)
    return vocab


class TestNormalize:
    def test_uncased_lowercases_and_strips_accents(self):
        assert normalize("Débat", "uncased") == "debat"

    def test_cased_identity(self):
        assert normalize("Débat", "cased") == "Débat"

    def test_control_chars_removed(self):
        assert normalize('A' + chr(0) + 'B', "cased") == "AB"

    def test_bad_casing(self):
        with pytest.raises(ConfigError):
            normalize("x", "mixed")


class TestPretokenize:
    def test_punctuation_splits(self):
        words = [w for w, _, _ in pretokenize("vote now!")]
        assert words == ["vote", "now", "!"]

    def test_offsets_cover_words(self):
        text = "ab, cd"
        for word, start, end in pretokenize(text):
            assert text[start:end] == word


class TestTrainVocabulary:
    def test_no_merge_budget(self):
        vocab = train_vocabulary(["ab"], 7, "uncased")
        assert vocab.tokens[:5] == list(SPECIAL_TOKENS)
        assert set(vocab.tokens[5:]) == {"a", "##b"}

    def test_budget_below_alphabet_errors_with_minimum(self):
        with pytest.raises(ConfigError, match="7"):
            train_vocabulary(["ab"], 6, "uncased")

    def test_repeated_words_become_single_tokens(self):
        # With budget beyond the merge closure every repeated word ends up
        # as one whole-word token (checked against the naive oracle).
        texts = ["we must endorse deterrence"] * 1000
        vocab = train_vocabulary(texts, 60, "uncased")
        for word in ("we", "must", "endorse", "deterrence"):
            assert word in vocab.token_to_id
            assert len(encode(word, vocab).tokens) == 1
        assert vocab.tokens == naive_train(texts, 60, "uncased")

    @given(
        st.lists(
            st.text(alphabet="abcde", min_size=1, max_size=7),
            min_size=1,
            max_size=12,
        ),
        st.integers(min_value=0, max_value=40),
    )
    @settings(max_examples=60, deadline=None)
    def test_matches_naive_oracle(self, words, extra_budget):
        from debatelm.wordpiece import _initial_split

        texts = [" ".join(words)]
        units = set()
        for word, _, _ in pretokenize(normalize(texts[0], "uncased")):
            units.update(_initial_split(word))
        minimum = 5 + len(units)
        closure = len(train_vocabulary(texts, 10_000, "uncased").tokens)
        budget = min(closure, minimum + extra_budget)
        got = train_vocabulary(texts, budget, "uncased")
        assert got.tokens == naive_train(texts, budget, "uncased")

    def test_budget_saturation(self, debate_corpus):
        vocab = train_vocabulary((d.text for d in debate_corpus.documents), 800, "uncased")
        assert vocab.size == 800

    def test_deterministic_vocab_file(self, tmp_path, debate_corpus):
        texts = [d.text for d in debate_corpus.documents[:60]]
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        save_vocab(train_vocabulary(texts, 400, "uncased"), a)
        save_vocab(train_vocabulary(texts, 400, "uncased"), b)
        assert a.read_bytes() == b.read_bytes()

    def test_monotone_fragmentation(self, debate_corpus):
        texts = [d.text for d in debate_corpus.documents[:80]]
        words = ["government", "parliament", "resolution", "campaign"]
        previous = None
        for budget in (300, 600, 1200):
            vocab = train_vocabulary(texts, budget, "uncased")
            counts = [len(encode(w, vocab).tokens) for w in words]
            if previous is not None:
                assert all(c <= p for c, p in zip(counts, previous))
            previous = counts


class TestEncode:
    def test_greedy_longest_match(self):
        vocab = make_vocab(["un", "##aff", "##able", "##a", "u"])
        assert encode("unaffable", vocab).tokens == ["un", "##aff", "##able"]

    def test_unknown_alphabet_becomes_unk(self):
        vocab = make_vocab(["a"])
        enc = encode("⊕", vocab)
        assert enc.tokens == ["[UNK]"]
        assert enc.token_ids == [1]

    def test_word_longer_than_100_chars_is_unk(self):
        vocab = make_vocab(["a", "##a"])
        enc = encode("a" * 101, vocab)
        assert enc.tokens == ["[UNK]"]

    def test_offsets_cover_each_word_exactly(self):
        vocab = make_vocab(["un", "##aff", "##able", "vote", "!"])
        enc = encode("vote unaffable!", vocab)
        # word "unaffable" spans bytes 5..14; its pieces partition the span
        spans = enc.offsets[1:4]
        assert spans[0][0] == 5 and spans[-1][1] == 14
        assert all(spans[i][1] == spans[i + 1][0] for i in range(len(spans) - 1))

    def test_byte_offsets_for_multibyte_text(self):
        vocab = make_vocab(["é", "x"], casing="cased")
        enc = encode("é x", vocab)
        assert enc.offsets == [(0, 2), (3, 4)]  # é is two UTF-8 bytes


class TestDecode:
    def test_prefix_join(self):
        vocab = make_vocab(["un", "##aff", "##able"])
        ids = [vocab.token_to_id[t] for t in ("un", "##aff", "##able")]
        assert decode(ids, vocab) == "unaffable"

    def test_specials_elided(self):
        vocab = make_vocab(["hello"])
        assert decode([2, vocab.token_to_id["hello"], 3], vocab) == "hello"

    def test_round_trip_whole_sentence(self, debate_corpus):
        vocab = train_vocabulary((d.text for d in debate_corpus.documents[:60]), 500, "uncased")
        text = "we must endorse deterrence"
        assert decode(encode(text, vocab), vocab) == normalize(text, "uncased")

    def test_round_trip_with_punctuation_offsets(self):
        vocab = make_vocab(["vote", "now", "!"])
        text = "vote now!"
        assert decode(encode(text, vocab), vocab) == text

    def test_out_of_range_id(self):
        vocab = make_vocab(["a"])
        with pytest.raises(DataError, match="out of range"):
            decode([99], vocab)

    def test_unk_renders_literally(self):
        vocab = make_vocab(["a"])
        enc = encode("a ⊕ a", vocab)
        assert decode(enc, vocab) == "a [UNK] a"


class TestAnalytics:
    def test_overlap_identical(self):
        v = make_vocab(["x", "y"])
        assert vocab_overlap(v, v) == 1.0

    def test_overlap_disjoint_content(self):
        a = make_vocab(["x", "y", "z"])
        b = make_vocab(["q", "r", "s"])
        assert vocab_overlap(a, b) == 5 / 8

    def test_overlap_hand_case(self):
        a = make_vocab(["x", "y", "z"])
        b = make_vocab(["x", "q", "r"])
        assert vocab_overlap(a, b) == 6 / 8

    def test_fragmentation_report(self):
        # A general-purpose-style vocabulary splits the probe word in two;
        # the domain vocabulary holds it whole.
        general = make_vocab(["bureau", "##crat", "deter", "##rent"])
        domain = make_vocab(["bureaucrat", "deterrent"])
        rows = fragmentation_report(["bureaucrat"], {"general": general, "domain": domain})
        by_vocab = {r["vocab_name"]: r for r in rows}
        assert by_vocab["general"]["pieces"] == "bureau ##crat"
        assert by_vocab["general"]["piece_count"] == 2
        assert by_vocab["domain"]["piece_count"] == 1

    def test_vocab_file_round_trip(self, tmp_path):
        vocab = make_vocab(["alpha", "##beta"])
        path = tmp_path / "vocab.txt"
        save_vocab(vocab, path)
        loaded = load_vocab(path, "uncased")
        assert loaded.tokens == vocab.tokens
        assert loaded.content_hash() == vocab.content_hash()


class TestVocabularyInvariants:
    def test_specials_must_lead(self):
        with pytest.raises(DataError):
            Vocabulary(tokens=["a"] + list(SPECIAL_TOKENS), casing="uncased")

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(DataError):
            Vocabulary(tokens=list(SPECIAL_TOKENS) + ["a", "a"], casing="uncased")

    def test_round_trip_property_over_corpus_sentences(self, debate_corpus):
        from debatelm.ablation import split_sentences

        vocab = train_vocabulary((d.text for d in debate_corpus.documents), 2000, "uncased")
        sentences = []
        for doc in debate_corpus.documents[:40]:
            sentences.extend(split_sentences(doc.text))
        assert sentences
        for sentence in sentences:
            assert decode(encode(sentence, vocab), vocab) == normalize(sentence, "uncased")


class TestEncodingType:
    def test_alignment_enforced(self):
        with pytest.raises(DataError):
            Encoding(token_ids=[1], tokens=["a", "b"], offsets=[(0, 1)])
