"""Source clustering by embedding similarity and leave-one-cluster-out corpora.

Each corpus source is summarized by the unweighted mean of sentence
embeddings over a seeded sample of its sentences; sources are then
clustered bottom-up on cosine distance (1 - cosine similarity) under a
configurable linkage, stopping once the closest pair of clusters is at or
beyond the distance threshold.

The sentence embedder is pluggable: any callable sentence -> vector works.
Built-ins cover a fast deterministic hashing bag-of-words embedder, an
embedder backed by a trained encoder checkpoint (mean-pooled final-layer
states), and a lookup over a precomputed vector file.
"""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from debatelm.corpus import Corpus
from debatelm.errors import ConfigError, DataError
from debatelm.model import EncoderConfig, Params, encoder_forward
from debatelm.rng import seed_stream
from debatelm.wordpiece import CLS_ID, SEP_ID, Vocabulary, encode

SENTENCE_BOUNDARY_RE = re.compile(r"(?<=[.!?])\s+")
NEAR_ZERO_NORM = 1e-8

LINKAGES = ("average", "complete", "single")


def split_sentences(text: str) -> list[str]:
    return [s for s in SENTENCE_BOUNDARY_RE.split(text) if s.strip()]


@dataclass
class SourceEmbedding:
    source: str
    vector: np.ndarray
    sample_size: int
    near_zero_norm: bool = False


@dataclass
class ClusterAssignment:
    assignment: dict[str, int]  # source -> dense cluster id
    threshold: float
    linkage: str
    merges: list[dict] = field(default_factory=list)  # ordered merge trace with heights

    @property
    def n_clusters(self) -> int:
        return len(set(self.assignment.values()))

    def members(self, cluster_id: int) -> list[str]:
        return sorted(s for s, c in self.assignment.items() if c == cluster_id)


# ---------------------------------------------------------------------------
# Embedders


class HashingEmbedder:
    """Deterministic signed bag-of-words hashing into a fixed dimension.

    Cheap and external-model-free; sources sharing a lexicon land close in
    cosine distance, which is all the clustering protocol needs.
    """

    def __init__(self, dim: int = 256):
        if dim < 2:
            raise ConfigError("embedding dimension must be >= 2")
        self.dim = dim

    def __call__(self, sentence: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in re.findall(r"[a-z0-9]+", sentence.lower()):
            h = zlib.crc32(token.encode("utf-8"))
            sign = 1.0 if (h >> 16) & 1 else -1.0
            vec[h % self.dim] += sign
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


class CheckpointEmbedder:
    """Mean-pooled final-layer states of a trained encoder checkpoint."""

    def __init__(self, params: Params, config: EncoderConfig, vocab: Vocabulary,
                 max_len: int = 64):
        self.params = params
        self.config = config
        self.vocab = vocab
        self.max_len = min(max_len, config.max_position)

    def __call__(self, sentence: str) -> np.ndarray:
        ids = encode(sentence, self.vocab).token_ids[: self.max_len - 2]
        row = np.asarray([[CLS_ID] + ids + [SEP_ID]], dtype=np.int32)
        attn = np.ones_like(row, dtype=np.int8)
        seq_out, _ = encoder_forward(self.params, self.config, row, attn)
        return np.asarray(seq_out[0].mean(0), dtype=np.float64)


class VectorFileEmbedder:
    """Exact-match lookup over a JSONL file of {"text": ..., "vector": [...]}."""

    def __init__(self, path: str | Path):
        self.table: dict[str, np.ndarray] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                self.table[rec["text"]] = np.asarray(rec["vector"], dtype=np.float64)
        if not self.table:
            raise DataError(f"vector file {path} is empty")

    def __call__(self, sentence: str) -> np.ndarray:
        if sentence not in self.table:
            raise DataError(f"no precomputed vector for sentence: {sentence[:60]!r}")
        return self.table[sentence]


# ---------------------------------------------------------------------------
# Protocol operations


def embed_source(source: str, documents, embedder: Callable[[str], np.ndarray],
                 sample_n: int = 10_000, seed: int = 0) -> SourceEmbedding:
    """Unweighted mean embedding over a seeded sentence sample of one source."""
    sentences: list[str] = []
    for doc in documents:
        sentences.extend(split_sentences(doc.text))
    if not sentences:
        raise DataError(f"source {source!r} has no sentences to embed")
    if len(sentences) > sample_n:
        rng = seed_stream(seed, "ablate-sample", source)
        idx = np.sort(rng.choice(len(sentences), size=sample_n, replace=False))
        sentences = [sentences[i] for i in idx]
    vectors = np.stack([np.asarray(embedder(s), dtype=np.float64) for s in sentences])
    if not np.isfinite(vectors).all():
        raise DataError(f"embedder produced non-finite vectors for source {source!r}")
    mean = vectors.mean(axis=0)
    return SourceEmbedding(
        source=source,
        vector=mean,
        sample_size=len(sentences),
        near_zero_norm=bool(np.linalg.norm(mean) < NEAR_ZERO_NORM),
    )


def cosine_distance_matrix(embeddings: Sequence[SourceEmbedding]) -> np.ndarray:
    """d(i, j) = 1 - cos(v_i, v_j), exact zeros on the diagonal."""
    for emb in embeddings:
        if np.linalg.norm(emb.vector) == 0.0:
            raise DataError(f"source {emb.source!r} has a zero-norm embedding")
    vectors = np.stack([e.vector for e in embeddings]).astype(np.float64)
    norms = np.linalg.norm(vectors, axis=1)
    sims = (vectors @ vectors.T) / np.outer(norms, norms)
    dist = 1.0 - sims
    np.fill_diagonal(dist, 0.0)
    return dist


def _linkage_distance(matrix: np.ndarray, a: list[int], b: list[int], linkage: str) -> float:
    block = matrix[np.ix_(a, b)]
    if linkage == "average":
        return float(block.mean())
    if linkage == "complete":
        return float(block.max())
    return float(block.min())


def agglomerative_cluster(matrix: np.ndarray, sources: Sequence[str],
                          threshold: float = 0.2, linkage: str = "average") -> ClusterAssignment:
    """Bottom-up merging of the closest cluster pair until the minimum
    inter-cluster distance reaches the threshold.

    Clusters merge while their distance is strictly below the threshold.
    Equal distances break ties on the smallest (i, j) pair of original
    indices, making the merge order fully deterministic. Final cluster ids
    are dense from 0, ordered by each cluster's smallest source index.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    n = matrix.shape[0]
    if matrix.shape != (n, n) or n != len(sources):
        raise ConfigError("distance matrix must be square and match the source list")
    if not np.allclose(matrix, matrix.T) or (np.diag(matrix) != 0).any() or (matrix < 0).any():
        raise DataError("distance matrix must be symmetric, non-negative, with a zero diagonal")
    if linkage not in LINKAGES:
        raise ConfigError(f"linkage must be one of {LINKAGES}")

    clusters: list[list[int]] = [[i] for i in range(n)]
    merges: list[dict] = []
    while len(clusters) > 1:
        best = None
        for ia in range(len(clusters)):
            for ib in range(ia + 1, len(clusters)):
                d = _linkage_distance(matrix, clusters[ia], clusters[ib], linkage)
                key = (d, min(clusters[ia]), min(clusters[ib]))
                if best is None or key < best[0]:
                    best = (key, ia, ib)
        (d, _, _), ia, ib = best
        if d >= threshold:
            break
        merges.append(
            {"left": sorted(clusters[ia]), "right": sorted(clusters[ib]), "distance": d}
        )
        clusters[ia] = sorted(clusters[ia] + clusters[ib])
        del clusters[ib]

    clusters.sort(key=min)
    assignment = {}
    for cid, members in enumerate(clusters):
        for idx in members:
            assignment[sources[idx]] = cid
    return ClusterAssignment(assignment=assignment, threshold=threshold,
                             linkage=linkage, merges=merges)


def leave_one_cluster_out(corpus: Corpus, assignment: ClusterAssignment,
                          cluster_id: int) -> tuple[Corpus, dict]:
    """Corpus restricted to sources outside the named cluster, plus a manifest."""
    if cluster_id not in set(assignment.assignment.values()):
        raise ConfigError(f"cluster {cluster_id} does not exist")
    excluded = set(assignment.members(cluster_id))
    retained = [s for s in corpus.sources if s not in excluded]
    if not retained:
        raise DataError(f"excluding cluster {cluster_id} would remove every source")
    reduced = corpus.restrict_sources(retained)
    manifest = {
        "cluster": cluster_id,
        "excluded_sources": sorted(excluded & set(corpus.sources)),
        "retained_sources": retained,
        "n_documents": len(reduced),
    }
    return reduced, manifest


def save_clusters(assignment: ClusterAssignment, matrix: np.ndarray,
                  sources: Sequence[str], path: str | Path) -> None:
    payload = {
        "threshold": assignment.threshold,
        "linkage": assignment.linkage,
        "assignment": assignment.assignment,
        "sources": list(sources),
        "distance_matrix": np.asarray(matrix).tolist(),
        "merges": assignment.merges,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_clusters(path: str | Path) -> ClusterAssignment:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return ClusterAssignment(
        assignment={k: int(v) for k, v in payload["assignment"].items()},
        threshold=payload["threshold"],
        linkage=payload["linkage"],
        merges=payload.get("merges", []),
    )
