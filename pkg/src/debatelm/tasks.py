"""Downstream task loading, fine-tuning, and seed-averaged grid sweeps.

Four task families are supported: token-classification tasks (ner,
arg_component) read CoNLL-style token/tag files; sequence-classification
tasks (sentiment, arg_relation) read JSONL with {text, label} or
{text_a, text_b, label}. Fine-tuning trains head and encoder end-to-end
with the same Adam core as pretraining, warms up over the first 10% of
steps, selects the best epoch on dev, and reports that epoch's test
metric. Sweeps run every grid point over n seeds and select the point
with the best mean dev metric (ties go to the earliest point in grid
order).
"""

from __future__ import annotations

import copy
import itertools
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from debatelm.errors import ConfigError, DataError
from debatelm.masking import LABEL_IGNORE, MaskedBatch
from debatelm.metrics import SeedScores, classification_metrics, metrics_report, tagging_metrics
from debatelm.model import (
    EncoderConfig,
    Params,
    attach_head,
    encoder_forward,
    loss_and_grads,
    pooler_forward,
)
from debatelm.optim import LrSchedule, OptimizerState, adam_step, clip_global_norm
from debatelm.rng import seed_stream
from debatelm.wordpiece import CLS_ID, PAD_ID, SEP_ID, Vocabulary, encode

TASK_HEADS = {
    "ner": "token",
    "arg_component": "token",
    "sentiment": "seq",
    "arg_relation": "seq",
}
TASK_PRIMARY_METRIC = {
    "ner": "macro_f1",
    "arg_component": "macro_f1",
    "sentiment": "binary_f1",
    "arg_relation": "macro_f1",
}


@dataclass
class TaskSpec:
    name: str
    labels: list[str]
    train_path: str
    dev_path: str
    test_path: str
    positive_label: str | None = None  # required for binary-F1 tasks
    pair_input: bool = False

    def __post_init__(self):
        if self.name not in TASK_HEADS:
            raise ConfigError(f"unknown task {self.name!r}; choose from {sorted(TASK_HEADS)}")
        if self.name == "arg_relation":
            self.pair_input = True
        if self.primary_metric == "binary_f1" and self.positive_label is None:
            raise ConfigError(f"task {self.name!r} reports binary F1 and needs positive_label")
        if self.positive_label is not None and self.positive_label not in self.labels:
            raise ConfigError(f"positive_label {self.positive_label!r} not in labels")

    @property
    def head(self) -> str:
        return TASK_HEADS[self.name]

    @property
    def primary_metric(self) -> str:
        return TASK_PRIMARY_METRIC[self.name]

    @property
    def label_to_id(self) -> dict[str, int]:
        return {label: i for i, label in enumerate(self.labels)}


@dataclass(frozen=True)
class GridPoint:
    learning_rate: float
    weight_decay: float
    batch_size: int
    epochs: int
    max_length: int


@dataclass
class HyperGrid:
    learning_rates: tuple = (2e-5, 3e-5, 5e-5)
    weight_decays: tuple = (0.1, 0.01)
    batch_sizes: tuple = (8, 16, 32)
    epochs: tuple = (2, 3, 4)
    max_lengths: tuple = (128, 256, 512)

    def points(self) -> list[GridPoint]:
        """Deterministic iteration order: fields in declared order."""
        return [
            GridPoint(*combo)
            for combo in itertools.product(
                self.learning_rates, self.weight_decays, self.batch_sizes,
                self.epochs, self.max_lengths,
            )
        ]


# ---------------------------------------------------------------------------
# Dataset readers


def read_conll(path: str | Path, labels: Sequence[str]) -> list[tuple[list[str], list[str]]]:
    """Whitespace-separated token/tag lines with blank-line sentence breaks."""
    label_set = set(labels)
    sentences = []
    tokens: list[str] = []
    tags: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                if tokens:
                    sentences.append((tokens, tags))
                    tokens, tags = [], []
                continue
            parts = line.split()
            if len(parts) < 2:
                raise DataError(f"{path}:{lineno}: expected 'token tag', got {line!r}")
            token, tag = parts[0], parts[-1]
            if tag not in label_set:
                raise DataError(f"{path}:{lineno}: unknown label {tag!r}")
            tokens.append(token)
            tags.append(tag)
    if tokens:
        sentences.append((tokens, tags))
    if not sentences:
        raise DataError(f"{path}: empty split")
    return sentences


def read_jsonl_classification(path: str | Path, labels: Sequence[str], pair: bool) -> list[dict]:
    label_set = set(labels)
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("label") not in label_set:
                raise DataError(f"{path}:{lineno}: unknown label {rec.get('label')!r}")
            if pair:
                if "text_a" not in rec or "text_b" not in rec:
                    raise DataError(f"{path}:{lineno}: pair task needs text_a and text_b")
                examples.append({"text_a": rec["text_a"], "text_b": rec["text_b"],
                                 "label": rec["label"]})
            else:
                if "text" not in rec:
                    raise DataError(f"{path}:{lineno}: missing text field")
                examples.append({"text": rec["text"], "label": rec["label"]})
    if not examples:
        raise DataError(f"{path}: empty split")
    return examples


def load_task(spec: TaskSpec) -> dict:
    """Load train/dev/test plus a manifest of per-split label counts."""
    splits = {}
    manifest: dict = {"task": spec.name, "labels": list(spec.labels), "counts": {}}
    for split, path in (("train", spec.train_path), ("dev", spec.dev_path), ("test", spec.test_path)):
        if spec.head == "token":
            data = read_conll(path, spec.labels)
            counts: dict[str, int] = {}
            for _, tags in data:
                for t in tags:
                    counts[t] = counts.get(t, 0) + 1
        else:
            data = read_jsonl_classification(path, spec.labels, spec.pair_input)
            counts = {}
            for ex in data:
                counts[ex["label"]] = counts.get(ex["label"], 0) + 1
        splits[split] = data
        manifest["counts"][split] = counts
    splits["manifest"] = manifest
    return splits


# ---------------------------------------------------------------------------
# Example encoding


def encode_sequence_example(example: dict, vocab: Vocabulary, max_length: int):
    """[CLS] a [SEP] or [CLS] a [SEP] b [SEP]; returns (ids, truncated)."""
    if max_length < 8:
        raise ConfigError("max_length must be at least 8 tokens")
    if "text_b" in example:
        a = encode(example["text_a"], vocab).token_ids
        b = encode(example["text_b"], vocab).token_ids
        budget = max_length - 3
        truncated = len(a) + len(b) > budget
        while len(a) + len(b) > budget and (a or b):
            if len(a) >= len(b):
                a = a[:-1]
            else:
                b = b[:-1]
        ids = [CLS_ID] + a + [SEP_ID] + b + [SEP_ID]
    else:
        a = encode(example["text"], vocab).token_ids
        truncated = len(a) > max_length - 2
        ids = [CLS_ID] + a[: max_length - 2] + [SEP_ID]
    return ids, truncated


def encode_tagging_example(tokens: Sequence[str], tags: Sequence[str], vocab: Vocabulary,
                           max_length: int, label_to_id: dict[str, int]):
    """Label the first piece of each word; continuations and specials get
    the ignore sentinel. Words beyond the length budget are dropped along
    with their labels. Returns (ids, labels, word_piece_index, truncated)."""
    ids = [CLS_ID]
    labels = [LABEL_IGNORE]
    first_piece_at: list[int] = []
    truncated = False
    for token, tag in zip(tokens, tags):
        pieces = encode(token, vocab).token_ids
        if not pieces:
            pieces = [vocab.token_to_id["[UNK]"]]
        if len(ids) + len(pieces) > max_length - 1:
            truncated = True
            break
        first_piece_at.append(len(ids))
        ids.extend(pieces)
        labels.extend([label_to_id[tag]] + [LABEL_IGNORE] * (len(pieces) - 1))
    ids.append(SEP_ID)
    labels.append(LABEL_IGNORE)
    return ids, labels, first_piece_at, truncated


def _pad_batch(rows: list[list[int]], label_rows: list[list[int]] | None = None):
    width = max(len(r) for r in rows)
    ids = np.full((len(rows), width), PAD_ID, dtype=np.int32)
    for i, r in enumerate(rows):
        ids[i, : len(r)] = r
    attn = (ids != PAD_ID).astype(np.int8)
    labels = None
    if label_rows is not None:
        labels = np.full((len(rows), width), LABEL_IGNORE, dtype=np.int32)
        for i, r in enumerate(label_rows):
            labels[i, : len(r)] = r
    return ids, attn, labels


@dataclass
class RunResult:
    task: str
    point: GridPoint
    seed: int
    dev_metric: float
    test_metric: float
    best_epoch: int
    wall_time_s: float
    truncated: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["point"] = asdict(self.point)
        return d


def _prepare_examples(spec: TaskSpec, data, vocab: Vocabulary, max_length: int):
    """Pre-encode a split; returns (encoded rows, truncation count)."""
    encoded = []
    n_truncated = 0
    if spec.head == "token":
        for tokens, tags in data:
            ids, labels, first_at, truncated = encode_tagging_example(
                tokens, tags, vocab, max_length, spec.label_to_id)
            n_truncated += int(truncated)
            encoded.append({"ids": ids, "labels": labels, "first_at": first_at,
                            "tags": tags, "tokens": tokens})
    else:
        for ex in data:
            ids, truncated = encode_sequence_example(ex, vocab, max_length)
            n_truncated += int(truncated)
            encoded.append({"ids": ids, "label_id": spec.label_to_id[ex["label"]],
                            "label": ex["label"]})
    return encoded, n_truncated


def evaluate_task(params: Params, config: EncoderConfig, spec: TaskSpec, encoded,
                  batch_size: int = 32) -> dict:
    """Predict a pre-encoded split and score it with the task's metric family."""
    if spec.head == "token":
        id_to_label = {i: label for label, i in spec.label_to_id.items()}
        gold_seqs, pred_seqs = [], []
        for start in range(0, len(encoded), batch_size):
            chunk = encoded[start : start + batch_size]
            ids, attn, _ = _pad_batch([ex["ids"] for ex in chunk])
            seq_out, _ = encoder_forward(params, config, ids, attn)
            logits = seq_out @ params["head.token.w"] + params["head.token.b"]
            pred_ids = logits.argmax(-1)
            for row, ex in enumerate(chunk):
                kept = len(ex["first_at"])
                gold_seqs.append(list(ex["tags"][:kept]))
                pred_seqs.append([id_to_label[int(pred_ids[row, pos])] for pos in ex["first_at"]])
        scores = tagging_metrics(gold_seqs, pred_seqs)
    else:
        gold, pred = [], []
        id_to_label = {i: label for label, i in spec.label_to_id.items()}
        for start in range(0, len(encoded), batch_size):
            chunk = encoded[start : start + batch_size]
            ids, attn, _ = _pad_batch([ex["ids"] for ex in chunk])
            seq_out, _ = encoder_forward(params, config, ids, attn)
            pooled, _ = pooler_forward(params, seq_out)
            logits = pooled @ params["head.seq.w"] + params["head.seq.b"]
            pred.extend(id_to_label[int(i)] for i in logits.argmax(-1))
            gold.extend(ex["label"] for ex in chunk)
        scores = classification_metrics(gold, pred, positive_label=spec.positive_label)
    scores["primary"] = scores[spec.primary_metric]
    return scores


def fine_tune(pretrained_params: Params, config: EncoderConfig, vocab: Vocabulary,
              spec: TaskSpec, data: dict, point: GridPoint, seed: int,
              grad_clip: float | None = 1.0) -> RunResult:
    """Train head + encoder for one grid point and seed.

    Dev is evaluated after every epoch; the best-dev epoch's parameters
    produce the reported test metric. Epoch 0 (initialization) counts as a
    candidate, so 0-epoch runs are well defined.
    """
    start_time = time.perf_counter()
    n_classes = len(spec.labels)
    params = copy.deepcopy(pretrained_params)
    params = attach_head(params, config, spec.head, n_classes, seed)

    train_enc, trunc_train = _prepare_examples(spec, data["train"], vocab, point.max_length)
    dev_enc, trunc_dev = _prepare_examples(spec, data["dev"], vocab, point.max_length)
    test_enc, trunc_test = _prepare_examples(spec, data["test"], vocab, point.max_length)

    steps_per_epoch = max(1, -(-len(train_enc) // point.batch_size))
    total_steps = max(1, point.epochs * steps_per_epoch)
    schedule = LrSchedule(peak_lr=point.learning_rate,
                          warmup_steps=int(0.1 * total_steps),
                          total_steps=total_steps)
    opt = OptimizerState.create(params, schedule, weight_decay=point.weight_decay)

    best = {"metric": evaluate_task(params, config, spec, dev_enc)["primary"],
            "epoch": 0, "params": copy.deepcopy(params)}

    for epoch in range(point.epochs):
        order = seed_stream(seed, "ft-order", spec.name, epoch).permutation(len(train_enc))
        for start in range(0, len(order), point.batch_size):
            rows = [train_enc[i] for i in order[start : start + point.batch_size]]
            if spec.head == "token":
                ids, attn, labels = _pad_batch([r["ids"] for r in rows],
                                               [r["labels"] for r in rows])
                class_labels = labels
            else:
                ids, attn, _ = _pad_batch([r["ids"] for r in rows])
                class_labels = np.asarray([r["label_id"] for r in rows], dtype=np.int32)
            batch = MaskedBatch(input_ids=ids, labels=np.zeros_like(ids), attention_mask=attn)
            dropout_rng = (seed_stream(seed, "ft-dropout", epoch, start)
                           if config.dropout > 0 else None)
            _, _, grads = loss_and_grads(params, config, batch, head=spec.head,
                                         class_labels=class_labels, dropout_rng=dropout_rng)
            if grad_clip is not None:
                clip_global_norm(grads, grad_clip)
            adam_step(params, grads, opt)
        dev_metric = evaluate_task(params, config, spec, dev_enc)["primary"]
        if dev_metric > best["metric"]:
            best = {"metric": dev_metric, "epoch": epoch + 1, "params": copy.deepcopy(params)}

    test_metric = evaluate_task(best["params"], config, spec, test_enc)["primary"]
    return RunResult(
        task=spec.name,
        point=point,
        seed=seed,
        dev_metric=best["metric"],
        test_metric=test_metric,
        best_epoch=best["epoch"],
        wall_time_s=time.perf_counter() - start_time,
        truncated={"train": trunc_train, "dev": trunc_dev, "test": trunc_test},
    )


def sweep(pretrained_params: Params, config: EncoderConfig, vocab: Vocabulary,
          spec: TaskSpec, data: dict, grid: HyperGrid, seeds: Sequence[int] = (0, 1, 2, 3, 4),
          model_name: str = "model", baselines: Sequence[SeedScores] = (),
          max_seed_failures: int = 2) -> dict:
    """Run the grid x seeds matrix; select by mean dev; aggregate test scores.

    A grid point is skipped once it accumulates more than max_seed_failures
    failing runs. Returns the metrics report plus the selected point and
    the full run log.
    """
    points = grid.points()
    if not points:
        raise ConfigError("empty hyper-parameter grid")
    run_log = []
    candidates = []
    for point in points:
        results: list[RunResult] = []
        failures = []
        for seed in seeds:
            try:
                res = fine_tune(pretrained_params, config, vocab, spec, data, point, seed)
                results.append(res)
                run_log.append({**res.as_dict(), "status": "ok"})
            except Exception as exc:  # run failure: record, maybe skip the point
                failures.append(str(exc))
                run_log.append({"point": asdict(point), "seed": seed,
                                "status": "failed", "error": str(exc)})
                if len(failures) > max_seed_failures:
                    break
        if len(failures) > max_seed_failures or not results:
            continue
        dev_mean = float(np.mean([r.dev_metric for r in results]))
        candidates.append((dev_mean, point, results))
    if not candidates:
        raise DataError("every grid point failed")
    best_dev, best_point, best_results = max(candidates, key=lambda c: c[0])
    # Stable selection: the earliest point in grid order wins ties.
    for dev_mean, point, results in candidates:
        if dev_mean == best_dev:
            best_point, best_results = point, results
            break
    scores = SeedScores(model=model_name, task=spec.name,
                        scores=[r.test_metric for r in best_results])
    report = metrics_report(scores, baselines)
    report["selected_point"] = asdict(best_point)
    report["selected_dev_mean"] = best_dev
    report["runs"] = run_log
    return report
