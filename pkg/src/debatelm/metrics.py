"""Perplexity, classification and span-tagging metrics, and paired t-tests.

All metrics are pure functions over in-memory prediction sets. The t-test
p-value comes from the Student-t distribution function evaluated through a
continued-fraction regularized incomplete beta, accurate to well below
1e-9 relative error in double precision.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from debatelm.errors import DataError


def perplexity(nll_per_target: Sequence[float]) -> float:
    """exp(mean negative log-likelihood) over evaluated target positions."""
    nll = np.asarray(nll_per_target, dtype=np.float64)
    if nll.size == 0:
        raise DataError("perplexity needs at least one target position")
    if (nll < 0).any():
        raise DataError("negative log-likelihoods must be non-negative")
    return float(np.exp(nll.mean()))


# ---------------------------------------------------------------------------
# Sequence classification metrics


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def classification_metrics(gold: Sequence, pred: Sequence, positive_label=None) -> dict:
    """Accuracy, per-class P/R/F1, macro-F1, weighted F1, optional binary F1.

    Classes are the union of labels appearing in gold or predictions;
    labels absent from both never enter the macro average. A class present
    in gold but never predicted gets precision 0 by convention.
    """
    if len(gold) == 0:
        raise DataError("need at least one example")
    if len(gold) != len(pred):
        raise DataError("gold and predicted labels must be aligned one-to-one")
    classes = sorted(set(gold) | set(pred), key=str)
    per_class = {}
    for cls in classes:
        tp = sum(1 for g, p in zip(gold, pred) if g == cls and p == cls)
        fp = sum(1 for g, p in zip(gold, pred) if g != cls and p == cls)
        fn = sum(1 for g, p in zip(gold, pred) if g == cls and p != cls)
        precision, recall, f1 = _prf(tp, fp, fn)
        per_class[cls] = {
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "support": tp + fn,
        }
    accuracy = sum(1 for g, p in zip(gold, pred) if g == p) / len(gold)
    macro_f1 = sum(c["f1"] for c in per_class.values()) / len(per_class)
    total_support = sum(c["support"] for c in per_class.values())
    weighted_f1 = sum(c["f1"] * c["support"] for c in per_class.values()) / total_support
    out = {
        "accuracy": accuracy,
        "per_class": per_class,
        "macro_f1": macro_f1,
        "weighted_f1": weighted_f1,
        "binary_f1": None,
    }
    if positive_label is not None:
        if positive_label not in per_class:
            raise DataError(f"positive label {positive_label!r} absent from gold and predictions")
        out["binary_f1"] = per_class[positive_label]["f1"]
    return out


# ---------------------------------------------------------------------------
# BIO span tagging metrics (entity level, exact match)


def _check_tags(sequences: Sequence[Sequence[str]]) -> None:
    bad = []
    for i, seq in enumerate(sequences):
        for j, tag in enumerate(seq):
            if tag == "O":
                continue
            if len(tag) > 2 and tag[1] == "-" and tag[0] in "BI":
                continue
            bad.append((i, j, tag))
    if bad:
        spots = ", ".join(f"seq {i} pos {j}: {tag!r}" for i, j, tag in bad[:20])
        raise DataError(f"malformed BIO tags at {spots}")


def extract_spans(tags: Sequence[str]) -> set[tuple[int, int, str]]:
    """(start, end, type) spans with end exclusive; a dangling I- opens a
    new span (standard repair)."""
    spans = set()
    start = None
    current = None
    for i, tag in enumerate(tags):
        if tag.startswith("B-") or (tag.startswith("I-") and tag[2:] != current):
            if start is not None:
                spans.add((start, i, current))
            start, current = i, tag[2:]
        elif tag == "O":
            if start is not None:
                spans.add((start, i, current))
            start, current = None, None
        # I- continuing the current span: nothing to do
    if start is not None:
        spans.add((start, len(tags), current))
    return spans


def tagging_metrics(gold_seqs: Sequence[Sequence[str]], pred_seqs: Sequence[Sequence[str]]) -> dict:
    """Entity-level exact-span P/R/F1 plus macro-F1 over entity types.

    An entity counts as correct iff both its type and its boundaries match.
    Token-level accuracy is included for diagnostics.
    """
    if len(gold_seqs) != len(pred_seqs):
        raise DataError("gold and predicted tag sequences must be aligned")
    for g, p in zip(gold_seqs, pred_seqs):
        if len(g) != len(p):
            raise DataError("each gold/predicted tag sequence pair must have equal length")
    _check_tags(gold_seqs)
    _check_tags(pred_seqs)

    gold_all: set = set()
    pred_all: set = set()
    for i, (g, p) in enumerate(zip(gold_seqs, pred_seqs)):
        gold_all |= {(i, *span) for span in extract_spans(g)}
        pred_all |= {(i, *span) for span in extract_spans(p)}

    types = sorted({s[-1] for s in gold_all | pred_all})
    per_type = {}
    for t in types:
        g = {s for s in gold_all if s[-1] == t}
        p = {s for s in pred_all if s[-1] == t}
        tp = len(g & p)
        precision, recall, f1 = _prf(tp, len(p) - tp, len(g) - tp)
        per_type[t] = {"precision": precision, "recall": recall, "f1": f1, "support": len(g)}

    tp = len(gold_all & pred_all)
    precision, recall, f1 = _prf(tp, len(pred_all) - tp, len(gold_all) - tp)
    tokens = sum(len(g) for g in gold_seqs)
    correct = sum(1 for g, p in zip(gold_seqs, pred_seqs) for gt, pt in zip(g, p) if gt == pt)
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "macro_f1": (sum(v["f1"] for v in per_type.values()) / len(per_type)) if per_type else 0.0,
        "per_type": per_type,
        "token_accuracy": correct / tokens if tokens else 0.0,
    }


# ---------------------------------------------------------------------------
# Paired t-test via the regularized incomplete beta


_BETACF_MAX_ITER = 300
_BETACF_EPS = 3e-16
_FPMIN = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction failed to converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if not 0.0 <= x <= 1.0:
        raise DataError(f"x must lie in [0, 1], got {x}")
    if a <= 0 or b <= 0:
        raise DataError("shape parameters must be positive")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf_two_sided(t: float, dof: int) -> float:
    """Two-sided tail probability P(|T| >= |t|) for Student-t with dof degrees."""
    if dof < 1:
        raise DataError("degrees of freedom must be >= 1")
    return regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> dict:
    """Two-sided paired t-test over per-seed score pairs.

    t = mean(d) / (sd(d) / sqrt(n)) with sample (n-1) standard deviation.
    Zero-variance differences are degenerate: nonzero mean reports p = 0
    with the zero_variance flag set (t is +/-inf), all-zero differences
    report t = 0, p = 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError("paired t-test needs two equal-length score vectors")
    n = a.size
    if n < 2:
        raise DataError("paired t-test needs at least two pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return {"t": 0.0, "dof": n - 1, "p": 1.0, "mean_diff": 0.0, "zero_variance": True}
        return {"t": math.copysign(math.inf, mean), "dof": n - 1, "p": 0.0,
                "mean_diff": mean, "zero_variance": True}
    t = mean / (sd / math.sqrt(n))
    return {"t": t, "dof": n - 1, "p": student_t_sf_two_sided(t, n - 1),
            "mean_diff": mean, "zero_variance": False}


# ---------------------------------------------------------------------------
# Seed-averaged score containers and report serialization


@dataclass
class SeedScores:
    model: str
    task: str
    scores: list[float] = field(default_factory=list)

    def __post_init__(self):
        for s in self.scores:
            if not 0.0 <= s <= 1.0:
                raise DataError(f"score {s} outside [0, 1] for {self.model}/{self.task}")

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def std(self) -> float:
        return float(np.std(self.scores, ddof=1)) if len(self.scores) > 1 else 0.0


def metrics_report(scores: SeedScores, baselines: Sequence[SeedScores] = ()) -> dict:
    """The mean +/- std report shape with paired significance entries."""
    significance = []
    for base in baselines:
        test = paired_t_test(scores.scores, base.scores)
        significance.append(
            {"baseline": base.model, "t": _json_float(test["t"]), "dof": test["dof"],
             "p": test["p"], "zero_variance": test["zero_variance"]}
        )
    return {
        "model": scores.model,
        "task": scores.task,
        "seeds": list(scores.scores),
        "mean": scores.mean,
        "std": scores.std,
        "significance": significance,
    }


def _json_float(x: float):
    return x if math.isfinite(x) else str(x)


def write_report(report: dict, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def leaderboard_rows(reports: Sequence[dict]) -> tuple[list[str], list[list[str]]]:
    """Pivot metrics reports into a models x tasks table of 'mean +/- std'."""
    tasks = sorted({r["task"] for r in reports})
    models = sorted({r["model"] for r in reports})
    cells = {(r["model"], r["task"]): f"{r['mean']:.3f} +/- {r['std']:.3f}" for r in reports}
    header = ["model"] + tasks
    rows = [[m] + [cells.get((m, t), "") for t in tasks] for m in models]
    return header, rows


def write_leaderboard_csv(reports: Sequence[dict], path: str | Path) -> None:
    import csv

    header, rows = leaderboard_rows(reports)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
