"""Packing tokenized documents into masked-language-model training batches.

Sequences are filled greedily with consecutive document tokens up to
max_len - 2, wrapped in [CLS]/[SEP], and never cross document boundaries.
Masking is dynamic: each (epoch, sequence) pair derives its own random
stream from the global seed, so masks are fresh every pass yet exactly
reproducible.

The two-phase schedule trains the first floor(phase1_fraction * steps)
steps at the short maximum length and the remainder at the long one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from debatelm.errors import ConfigError
from debatelm.rng import seed_stream
from debatelm.wordpiece import CLS_ID, MASK_ID, PAD_ID, SEP_ID, UNK_ID

LABEL_IGNORE = -100  # sentinel at positions that are not prediction targets
SPECIAL_IDS = (PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID)  # never maskable


@dataclass
class PackingConfig:
    max_len_phase1: int = 128
    max_len_phase2: int = 512
    phase1_fraction: float = 0.8
    mask_prob: float = 0.15
    seed: int = 0
    # Of the selected positions: fraction replaced by [MASK], fraction
    # replaced by a random vocabulary token, remainder kept unchanged.
    mask_token_prob: float = 0.8
    random_token_prob: float = 0.1

    def validate(self) -> None:
        if not 0 <= self.mask_prob <= 1:
            raise ConfigError(f"mask_prob must lie in [0, 1], got {self.mask_prob}")
        if not 0 <= self.phase1_fraction <= 1:
            raise ConfigError(f"phase1_fraction must lie in [0, 1], got {self.phase1_fraction}")
        if self.max_len_phase1 < 2 or self.max_len_phase2 < 2:
            raise ConfigError("maximum sequence lengths need room for [CLS]/[SEP]")
        if self.mask_token_prob + self.random_token_prob > 1 + 1e-12:
            raise ConfigError("mask_token_prob + random_token_prob must not exceed 1")


@dataclass
class MaskedBatch:
    input_ids: np.ndarray  # (batch, seq) int32
    labels: np.ndarray  # (batch, seq) int32, LABEL_IGNORE at non-targets
    attention_mask: np.ndarray  # (batch, seq) int8


def phase_max_len(step: int, total_steps: int, config: PackingConfig) -> int:
    """Maximum sequence length for 1-indexed training step `step`."""
    if not 1 <= step <= total_steps:
        raise ConfigError(f"step {step} outside 1..{total_steps}")
    phase1_steps = int(config.phase1_fraction * total_steps)
    return config.max_len_phase1 if step <= phase1_steps else config.max_len_phase2


def pack_sequences(token_ids_per_doc: Iterable[Sequence[int]], max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Pack per-document token id streams into fixed-length [CLS]...[SEP] rows.

    Returns (input_ids, attention_mask) of shape (n_sequences, max_len).
    Documents longer than max_len - 2 span several rows; rows never mix
    documents; each document's tail row is padded with [PAD].
    """
    if max_len < 2:
        raise ConfigError("max_len must be at least 2 to fit [CLS] and [SEP]")
    content = max_len - 2
    rows: list[np.ndarray] = []
    for ids in token_ids_per_doc:
        ids = np.asarray(ids, dtype=np.int32)
        if ids.size == 0:
            continue
        for start in range(0, len(ids), content):
            chunk = ids[start : start + content]
            row = np.full(max_len, PAD_ID, dtype=np.int32)
            row[0] = CLS_ID
            row[1 : 1 + len(chunk)] = chunk
            row[1 + len(chunk)] = SEP_ID
            rows.append(row)
    if not rows:
        input_ids = np.zeros((0, max_len), dtype=np.int32)
    else:
        input_ids = np.stack(rows)
    attention_mask = (input_ids != PAD_ID).astype(np.int8)
    return input_ids, attention_mask


def maskable_positions(input_ids: np.ndarray, attention_mask: np.ndarray) -> np.ndarray:
    """Boolean mask of positions eligible for prediction (non-special, non-PAD)."""
    eligible = attention_mask.astype(bool) & ~np.isin(input_ids, SPECIAL_IDS)
    return eligible


def mask_tokens(
    sequence: np.ndarray,
    attention_mask: np.ndarray,
    vocab_size: int,
    config: PackingConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Apply the masking rule to one sequence; returns (input_ids, labels).

    Each maskable position is selected independently with probability
    mask_prob; selected positions become [MASK] with probability
    mask_token_prob, a uniformly random vocabulary token with probability
    random_token_prob, and stay unchanged otherwise. Labels carry the
    original id at selected positions and LABEL_IGNORE elsewhere.
    """
    sequence = np.asarray(sequence, dtype=np.int32)
    attention_mask = np.asarray(attention_mask)
    eligible = maskable_positions(sequence, attention_mask)
    # Draw all three streams unconditionally so the pattern depends only on
    # (rng state, sequence length), not on the data.
    select_draw = rng.random(sequence.shape)
    action_draw = rng.random(sequence.shape)
    random_ids = rng.integers(0, vocab_size, size=sequence.shape, dtype=np.int32)

    selected = eligible & (select_draw < config.mask_prob)
    labels = np.full(sequence.shape, LABEL_IGNORE, dtype=np.int32)
    labels[selected] = sequence[selected]

    input_ids = sequence.copy()
    to_mask = selected & (action_draw < config.mask_token_prob)
    to_random = selected & (action_draw >= config.mask_token_prob) & (
        action_draw < config.mask_token_prob + config.random_token_prob
    )
    input_ids[to_mask] = MASK_ID
    input_ids[to_random] = random_ids[to_random]
    return input_ids, labels


def mask_rng(seed: int, epoch: int, sequence_index: int) -> np.random.Generator:
    """Dynamic-masking stream: fresh masks per epoch, reproducible per sequence."""
    return seed_stream(seed, "mask", epoch, sequence_index)


def build_masked_batch(
    input_ids: np.ndarray,
    attention_mask: np.ndarray,
    row_indices: Sequence[int],
    epoch: int,
    vocab_size: int,
    config: PackingConfig,
) -> MaskedBatch:
    """Mask the given packed rows for one training step."""
    masked_rows = []
    label_rows = []
    for idx in row_indices:
        rng = mask_rng(config.seed, epoch, int(idx))
        ids, labels = mask_tokens(input_ids[idx], attention_mask[idx], vocab_size, config, rng)
        masked_rows.append(ids)
        label_rows.append(labels)
    return MaskedBatch(
        input_ids=np.stack(masked_rows),
        labels=np.stack(label_rows),
        attention_mask=attention_mask[list(row_indices)].astype(np.int8),
    )


def batch_schedule(n_sequences: int, batch_size: int, steps: int, seed: int, phase: str):
    """Yield (epoch, row_indices) per step, reshuffling each epoch.

    The shuffle order for (phase, epoch) comes from its own named stream,
    so any step can be reconstructed without replaying earlier steps.
    """
    if n_sequences == 0:
        raise ConfigError("no packed sequences to schedule")
    order = None
    pos = 0
    epoch = 0
    for _ in range(steps):
        if order is None or pos + batch_size > len(order):
            order = seed_stream(seed, "order", phase, epoch).permutation(n_sequences)
            if batch_size > n_sequences:
                reps = -(-batch_size // n_sequences)
                order = np.concatenate([order] * reps)
            pos = 0
            epoch += 1
        yield epoch - 1, order[pos : pos + batch_size]
        pos += batch_size


# ---------------------------------------------------------------------------
# Optional on-disk batch cache: one JSON record per batch with the three
# matrices and the seed tuple that generated the masks.


def write_batch_cache(path: str | Path, batches: Iterable[tuple[MaskedBatch, tuple]]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for batch, seed_tuple in batches:
            rec = {
                "input_ids": batch.input_ids.tolist(),
                "labels": batch.labels.tolist(),
                "attention_mask": batch.attention_mask.tolist(),
                "seed": list(seed_tuple),
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            n += 1
    return n


def read_batch_cache(path: str | Path) -> list[tuple[MaskedBatch, tuple]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            batch = MaskedBatch(
                input_ids=np.asarray(rec["input_ids"], dtype=np.int32),
                labels=np.asarray(rec["labels"], dtype=np.int32),
                attention_mask=np.asarray(rec["attention_mask"], dtype=np.int8),
            )
            out.append((batch, tuple(rec["seed"])))
    return out
