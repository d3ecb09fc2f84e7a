"""Corpus ingestion, cleaning, and deterministic train/test/holdout splitting.

Raw transcripts arrive either as a directory of .txt files (one document
each) or as JSONL records {id, source, date, text}. Cleaning strips markup
tags and URLs, collapses whitespace, and applies NFC normalization so
downstream byte counts are stable. Documents that clean to the empty
string are dropped and counted in the manifest.

The split is stratified per source: each source contributes ~90% train /
~10% test independently, then ~1% of each source's test portion moves to
the perplexity hold-out. Per-source splits are merged so every split has
balanced representation across sources.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from debatelm.errors import DataError
from debatelm.rng import seed_stream

TAG_RE = re.compile(r"<[^>]+>")
URL_RE = re.compile(r"https?://\S+")
WHITESPACE_RE = re.compile(r"\s+")


@dataclass
class Document:
    """One cleaned text unit with its provenance."""

    id: str
    source: str
    text: str
    date: str | None = None


@dataclass
class Corpus:
    documents: list[Document]
    source_manifest: dict[str, int] = field(default_factory=dict)
    dropped_empty: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.source_manifest:
            for doc in self.documents:
                self.source_manifest[doc.source] = self.source_manifest.get(doc.source, 0) + 1

    def __len__(self) -> int:
        return len(self.documents)

    @property
    def sources(self) -> list[str]:
        return sorted(self.source_manifest)

    def by_source(self, source: str) -> list[Document]:
        return [d for d in self.documents if d.source == source]

    def restrict_sources(self, keep: Iterable[str]) -> "Corpus":
        keep = set(keep)
        return Corpus([d for d in self.documents if d.source in keep])


@dataclass
class SplitAssignment:
    """Disjoint train/test/ppl-holdout id sets plus the seed that made them."""

    train_ids: list[str]
    test_ids: list[str]
    ppl_holdout_ids: list[str]
    seed: int
    warnings: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train_ids": self.train_ids,
            "test_ids": self.test_ids,
            "ppl_holdout_ids": self.ppl_holdout_ids,
            "warnings": self.warnings,
        }


def clean_text(raw: str, drop_patterns: Sequence[str] = ()) -> str:
    """Strip URLs, markup tags, and user-supplied patterns; normalize whitespace.

    Tags and URLs are deleted outright (not replaced by spaces) so that
    inline markup like "Vote <b>now</b>!" cleans to "Vote now!". The result
    is NFC-normalized, whitespace-collapsed, and stripped. Total: never
    raises on valid str input.
    """
    text = unicodedata.normalize("NFC", raw)
    text = URL_RE.sub("", text)
    text = TAG_RE.sub("", text)
    for pattern in drop_patterns:
        text = re.sub(pattern, "", text)
    text = WHITESPACE_RE.sub(" ", text)
    return text.strip()


def build_corpus(records: Iterable[dict], drop_patterns: Sequence[str] = ()) -> Corpus:
    """Clean raw records into a Corpus, dropping empties and rejecting id clashes."""
    documents: list[Document] = []
    seen: set[str] = set()
    dropped: dict[str, int] = {}
    for rec in records:
        doc_id = str(rec["id"])
        source = str(rec["source"])
        if doc_id in seen:
            raise DataError(f"duplicate document id: {doc_id!r}")
        seen.add(doc_id)
        text = clean_text(rec["text"], drop_patterns)
        if not text:
            dropped[source] = dropped.get(source, 0) + 1
            continue
        documents.append(Document(id=doc_id, source=source, text=text, date=rec.get("date")))
    corpus = Corpus(documents)
    corpus.dropped_empty = dropped
    return corpus


def _round_half_up(x: float) -> int:
    return int(x + 0.5)


def split_corpus(corpus: Corpus, seed: int) -> SplitAssignment:
    """Per-source stratified 90/10 split with ~1% of each test portion held out.

    Deterministic for a fixed (corpus, seed): sources are visited in sorted
    order and each source's documents are shuffled by a named sub-stream of
    the seed. Sources with fewer than 2 documents go wholly to train and
    are recorded as warnings.
    """
    if len(corpus) == 0:
        raise DataError("cannot split an empty corpus")
    train: list[str] = []
    test: list[str] = []
    holdout: list[str] = []
    warnings: list[str] = []
    for source in corpus.sources:
        ids = [d.id for d in corpus.by_source(source)]
        if len(ids) < 2:
            train.extend(ids)
            warnings.append(f"source {source!r} has {len(ids)} document(s); assigned wholly to train")
            continue
        rng = seed_stream(seed, "split", source)
        order = rng.permutation(len(ids))
        shuffled = [ids[i] for i in order]
        n_test_portion = _round_half_up(0.1 * len(ids))
        # At least one hold-out document per source with a test portion, so
        # perplexity evaluation stays possible at desk scale (within the
        # +/-1 rounding tolerance of the 1% rule).
        n_holdout = min(n_test_portion, max(1, _round_half_up(0.01 * n_test_portion))) \
            if n_test_portion else 0
        test_portion = shuffled[:n_test_portion]
        holdout.extend(test_portion[:n_holdout])
        test.extend(test_portion[n_holdout:])
        train.extend(shuffled[n_test_portion:])
    return SplitAssignment(
        train_ids=sorted(train),
        test_ids=sorted(test),
        ppl_holdout_ids=sorted(holdout),
        seed=seed,
        warnings=warnings,
    )


def select_documents(corpus: Corpus, ids: Iterable[str]) -> list[Document]:
    wanted = set(ids)
    return [d for d in corpus.documents if d.id in wanted]


# ---------------------------------------------------------------------------
# File interfaces: JSONL corpora, .txt directories, splits.json manifests.

def load_jsonl(path: str | Path) -> list[dict]:
    """Read one raw record per line; require id/source/text fields."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            for key in ("id", "source", "text"):
                if key not in rec:
                    raise DataError(f"{path}:{lineno}: missing field {key!r}")
            records.append(rec)
    return records


def load_txt_dir(path: str | Path, source: str | None = None) -> list[dict]:
    """One document per .txt file; id is the file stem, source the dir name."""
    path = Path(path)
    records = []
    for txt in sorted(path.glob("*.txt")):
        records.append(
            {
                "id": txt.stem,
                "source": source if source is not None else path.name,
                "text": txt.read_text(encoding="utf-8"),
            }
        )
    if not records:
        raise DataError(f"no .txt files found under {path}")
    return records


def save_corpus_jsonl(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus.documents:
            rec = {"id": doc.id, "source": doc.source, "date": doc.date, "text": doc.text}
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def load_corpus_jsonl(path: str | Path) -> Corpus:
    """Load an already-cleaned corpus without re-cleaning."""
    documents = []
    seen: set[str] = set()
    for rec in load_jsonl(path):
        doc_id = str(rec["id"])
        if doc_id in seen:
            raise DataError(f"duplicate document id: {doc_id!r}")
        seen.add(doc_id)
        documents.append(
            Document(id=doc_id, source=str(rec["source"]), text=rec["text"], date=rec.get("date"))
        )
    return Corpus(documents)


def save_splits(split: SplitAssignment, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(split.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_splits(path: str | Path) -> SplitAssignment:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return SplitAssignment(
        train_ids=list(data["train_ids"]),
        test_ids=list(data["test_ids"]),
        ppl_holdout_ids=list(data["ppl_holdout_ids"]),
        seed=int(data["seed"]),
        warnings=list(data.get("warnings", [])),
    )
