"""WordPiece vocabulary training, encoding, and vocabulary analytics.

The trainer builds a subword inventory bottom-up from characters by
repeatedly merging the adjacent piece pair with the highest likelihood
ratio freq(pair) / (freq(left) * freq(right)). Scores are compared with
exact integer cross-multiplication, so training is deterministic down to
the byte on every platform; ties break on the lexicographically smaller
merged token, then on the pair itself.

Encoding is greedy longest-match-first: each pre-tokenized word is
consumed by repeatedly taking the longest vocabulary prefix, with
continuation pieces carrying the "##" prefix. A word with no full
tokenization becomes a single [UNK].
"""

from __future__ import annotations

import csv
import hashlib
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from debatelm.errors import ConfigError, DataError

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)
CONTINUATION_PREFIX = "##"
MAX_WORD_CHARS = 100  # longer words map to [UNK], guarding pathological inputs

CASINGS = ("cased", "uncased")


def _is_punctuation(ch: str) -> bool:
    cp = ord(ch)
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(ch).startswith("P")


def _is_control(ch: str) -> bool:
    if ch in ("\t", "\n", "\r"):
        return False
    return unicodedata.category(ch) in ("Cc", "Cf")


def normalize(text: str, casing: str) -> str:
    """NFC-normalize and strip control characters; uncased additionally
    lowercases and removes combining accents."""
    if casing not in CASINGS:
        raise ConfigError(f"casing must be one of {CASINGS}, got {casing!r}")
    text = unicodedata.normalize("NFC", text)
    text = "".join(ch for ch in text if not _is_control(ch))
    if casing == "uncased":
        text = text.lower()
        text = unicodedata.normalize("NFD", text)
        text = "".join(ch for ch in text if unicodedata.category(ch) != "Mn")
        text = unicodedata.normalize("NFC", text)
    return text


def pretokenize(text: str) -> list[tuple[str, int, int]]:
    """Split normalized text into words with (start, end) char spans.

    Splits on Unicode whitespace; punctuation characters become
    single-character words of their own.
    """
    words = []
    start = None
    for i, ch in enumerate(text):
        if ch.isspace():
            if start is not None:
                words.append((text[start:i], start, i))
                start = None
        elif _is_punctuation(ch):
            if start is not None:
                words.append((text[start:i], start, i))
                start = None
            words.append((ch, i, i + 1))
        else:
            if start is None:
                start = i
    if start is not None:
        words.append((text[start:], start, len(text)))
    return words


@dataclass
class Vocabulary:
    """Ordered subword inventory with the five special tokens at ids 0-4."""

    tokens: list[str]
    casing: str
    continuation_prefix: str = CONTINUATION_PREFIX
    token_to_id: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.token_to_id:
            self.token_to_id = {tok: i for i, tok in enumerate(self.tokens)}
        self.validate()
        self._max_piece_chars = max(len(t) for t in self.tokens)

    def validate(self) -> None:
        if self.casing not in CASINGS:
            raise ConfigError(f"casing must be one of {CASINGS}, got {self.casing!r}")
        if len(self.token_to_id) != len(self.tokens):
            raise DataError("vocabulary tokens are not unique")
        if tuple(self.tokens[:5]) != SPECIAL_TOKENS:
            raise DataError(f"special tokens must occupy indices 0-4 in order {SPECIAL_TOKENS}")
        for tok in self.tokens[5:]:
            if not tok or tok == self.continuation_prefix or any(ch.isspace() for ch in tok):
                raise DataError(f"invalid vocabulary token: {tok!r}")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def content_hash(self) -> str:
        """Stable identity of the vocabulary; stored in checkpoints."""
        h = hashlib.sha256()
        h.update(self.casing.encode("utf-8"))
        for tok in self.tokens:
            h.update(b"\n")
            h.update(tok.encode("utf-8"))
        return h.hexdigest()


@dataclass
class Encoding:
    """Aligned token ids, token strings, and byte offsets into the normalized text."""

    token_ids: list[int]
    tokens: list[str]
    offsets: list[tuple[int, int]]

    def __post_init__(self):
        if not (len(self.token_ids) == len(self.tokens) == len(self.offsets)):
            raise DataError("token_ids, tokens, and offsets must be aligned")

    def __len__(self) -> int:
        return len(self.token_ids)


# ---------------------------------------------------------------------------
# Training


def _word_counts(texts: Iterable[str], casing: str) -> dict[str, int]:
    counts: dict[str, int] = {}
    for text in texts:
        for word, _, _ in pretokenize(normalize(text, casing)):
            if len(word) <= MAX_WORD_CHARS:
                counts[word] = counts.get(word, 0) + 1
    return counts


def _initial_split(word: str) -> list[str]:
    return [word[0]] + [CONTINUATION_PREFIX + ch for ch in word[1:]]


def _merge_pieces(pieces: list[str], left: str, right: str, merged: str) -> list[str]:
    """Replace left-to-right non-overlapping (left, right) adjacencies."""
    out = []
    i = 0
    while i < len(pieces):
        if i + 1 < len(pieces) and pieces[i] == left and pieces[i + 1] == right:
            out.append(merged)
            i += 2
        else:
            out.append(pieces[i])
            i += 1
    return out


def train_vocabulary(texts: Iterable[str], budget: int, casing: str) -> Vocabulary:
    """Train a WordPiece vocabulary of at most `budget` tokens.

    Raises ConfigError naming the minimum feasible budget when `budget`
    cannot even hold the corpus alphabet plus the special tokens. When the
    corpus runs out of mergeable pairs before the budget is reached (every
    word already a single piece), training stops early with fewer tokens.
    """
    word_freq = _word_counts(texts, casing)
    if not word_freq:
        raise DataError("cannot train a vocabulary on an empty corpus")

    splits = {w: _initial_split(w) for w in word_freq}
    units = sorted({p for pieces in splits.values() for p in pieces})
    min_budget = len(SPECIAL_TOKENS) + len(units)
    if budget < min_budget:
        raise ConfigError(
            f"budget {budget} below minimum feasible budget {min_budget} "
            f"({len(units)} alphabet units + {len(SPECIAL_TOKENS)} special tokens)"
        )

    vocab = list(SPECIAL_TOKENS) + units
    vocab_set = set(vocab)

    # Incrementally maintained statistics. Pair counts include every
    # adjacent position (overlapping repeats count each position); merging
    # applies left-to-right non-overlapping.
    piece_freq: dict[str, int] = {}
    pair_freq: dict[tuple[str, str], int] = {}
    pair_words: dict[tuple[str, str], set[str]] = {}

    def add_word(word: str) -> None:
        freq = word_freq[word]
        pieces = splits[word]
        for p in pieces:
            piece_freq[p] = piece_freq.get(p, 0) + freq
        for a, b in zip(pieces, pieces[1:]):
            pair_freq[(a, b)] = pair_freq.get((a, b), 0) + freq
            pair_words.setdefault((a, b), set()).add(word)

    def remove_word(word: str) -> None:
        freq = word_freq[word]
        pieces = splits[word]
        for p in pieces:
            piece_freq[p] -= freq
            if piece_freq[p] == 0:
                del piece_freq[p]
        for a, b in zip(pieces, pieces[1:]):
            pair_freq[(a, b)] -= freq
            if pair_freq[(a, b)] == 0:
                del pair_freq[(a, b)]
            words = pair_words.get((a, b))
            if words is not None:
                words.discard(word)
                if not words:
                    del pair_words[(a, b)]

    for word in word_freq:
        add_word(word)

    while len(vocab) < budget and pair_freq:
        # Exact argmax of count/(freq_l*freq_r) by cross-multiplication;
        # ties -> lexicographically smaller merged token, then smaller pair.
        best_pair = None
        best_num = best_den = 0
        best_merged = ""
        for (left, right), count in pair_freq.items():
            den = piece_freq[left] * piece_freq[right]
            if best_pair is not None:
                diff = count * best_den - best_num * den
                if diff < 0:
                    continue
                if diff == 0:
                    merged = left + right[len(CONTINUATION_PREFIX):]
                    if (merged, (left, right)) >= (best_merged, best_pair):
                        continue
                    best_pair, best_num, best_den, best_merged = (left, right), count, den, merged
                    continue
            best_pair = (left, right)
            best_num, best_den = count, den
            best_merged = left + right[len(CONTINUATION_PREFIX):]

        left, right = best_pair
        merged = best_merged
        if merged not in vocab_set:
            vocab.append(merged)
            vocab_set.add(merged)
        for word in sorted(pair_words[best_pair]):
            remove_word(word)
            splits[word] = _merge_pieces(splits[word], left, right, merged)
            add_word(word)

    return Vocabulary(tokens=vocab, casing=casing)


def train_vocabulary_from_corpus(corpus, budget: int, casing: str) -> Vocabulary:
    return train_vocabulary((doc.text for doc in corpus.documents), budget, casing)


# ---------------------------------------------------------------------------
# Encoding / decoding


def _byte_offsets(text: str) -> list[int]:
    """Prefix byte lengths of the UTF-8 encoding, one entry per char boundary."""
    offsets = [0]
    total = 0
    for ch in text:
        total += len(ch.encode("utf-8"))
        offsets.append(total)
    return offsets


def _wordpiece_word(word: str, vocab: Vocabulary) -> list[tuple[str, int, int]] | None:
    """Greedy longest-match split of one word; None when untokenizable.

    Returns (piece, start, end) with char spans relative to the word;
    continuation pieces' spans exclude the '##' prefix.
    """
    pieces = []
    i = 0
    n = len(word)
    while i < n:
        prefix = CONTINUATION_PREFIX if i > 0 else ""
        end = min(n, i + vocab._max_piece_chars - len(prefix))
        found = None
        while end > i:
            candidate = prefix + word[i:end]
            if candidate in vocab.token_to_id:
                found = (candidate, i, end)
                break
            end -= 1
        if found is None:
            return None
        pieces.append(found)
        i = found[2]
    return pieces


def encode(text: str, vocab: Vocabulary) -> Encoding:
    """Tokenize text under the vocabulary's casing convention.

    Offsets are byte spans into `normalize(text, vocab.casing)`; a word
    that cannot be fully tokenized (or exceeds 100 chars) becomes a single
    [UNK] spanning the whole word.
    """
    normalized = normalize(text, vocab.casing)
    byte_at = _byte_offsets(normalized)
    token_ids: list[int] = []
    tokens: list[str] = []
    offsets: list[tuple[int, int]] = []
    for word, start, end in pretokenize(normalized):
        split = None if len(word) > MAX_WORD_CHARS else _wordpiece_word(word, vocab)
        if split is None:
            token_ids.append(UNK_ID)
            tokens.append(SPECIAL_TOKENS[UNK_ID])
            offsets.append((byte_at[start], byte_at[end]))
            continue
        for piece, i, j in split:
            token_ids.append(vocab.token_to_id[piece])
            tokens.append(piece)
            offsets.append((byte_at[start + i], byte_at[start + j]))
    return Encoding(token_ids=token_ids, tokens=tokens, offsets=offsets)


_ELIDED_ON_DECODE = {PAD_ID, CLS_ID, SEP_ID}


def decode(encoding: Encoding | Sequence[int], vocab: Vocabulary) -> str:
    """Reassemble text from pieces.

    [PAD]/[CLS]/[SEP] are elided; [UNK] and [MASK] render literally. With
    offsets available, inter-word gaps are reconstructed as spaces from the
    byte spans, so UNK-free cleaned text round-trips exactly; without
    offsets, a single space precedes each word-initial piece.
    """
    if isinstance(encoding, Encoding):
        ids = encoding.token_ids
        offsets = encoding.offsets
    else:
        ids = list(encoding)
        offsets = None
    parts: list[str] = []
    prev_end = None
    for k, token_id in enumerate(ids):
        if not 0 <= token_id < vocab.size:
            raise DataError(f"token id {token_id} out of range for vocabulary of size {vocab.size}")
        if token_id in _ELIDED_ON_DECODE:
            continue
        token = vocab.tokens[token_id]
        is_continuation = token.startswith(CONTINUATION_PREFIX) and token_id > MASK_ID
        text = token[len(CONTINUATION_PREFIX):] if is_continuation else token
        if offsets is not None:
            start, end = offsets[k]
            if prev_end is not None and start > prev_end:
                parts.append(" " * (start - prev_end))
            prev_end = end
        elif parts and not is_continuation:
            parts.append(" ")
        parts.append(text)
    return "".join(parts)


# ---------------------------------------------------------------------------
# Analytics


def vocab_overlap(a: Vocabulary, b: Vocabulary) -> float:
    """Directional share: fraction of a's tokens also present in b."""
    shared = set(a.tokens) & set(b.tokens)
    return len(shared) / len(a.tokens)


def fragmentation_report(words: Sequence[str], vocabs: Mapping[str, Vocabulary]) -> list[dict]:
    """Per (word, vocabulary): the pieces and piece count, as table rows."""
    rows = []
    for word in words:
        for name, vocab in vocabs.items():
            enc = encode(word, vocab)
            rows.append(
                {
                    "word": word,
                    "vocab_name": name,
                    "pieces": " ".join(enc.tokens),
                    "piece_count": len(enc.tokens),
                }
            )
    return rows


def write_fragmentation_csv(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["word", "vocab_name", "pieces", "piece_count"])
        writer.writeheader()
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# File format: one token per line, line index = token id.


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok in vocab.tokens:
            fh.write(tok + "\n")


def load_vocab(path: str | Path, casing: str) -> Vocabulary:
    tokens = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            tok = line.rstrip("\n")
            if tok:
                tokens.append(tok)
    return Vocabulary(tokens=tokens, casing=casing)
