import math

import mpmath
import numpy as np
import pytest
from sklearn.metrics import accuracy_score, f1_score, precision_recall_fscore_support

from debatelm.errors import DataError
from debatelm.masking import LABEL_IGNORE
from debatelm.metrics import (
    SeedScores,
    classification_metrics,
    extract_spans,
    leaderboard_rows,
    metrics_report,
    paired_t_test,
    perplexity,
    regularized_incomplete_beta,
    student_t_sf_two_sided,
    tagging_metrics,
)
from debatelm.model import mlm_loss
from debatelm.rng import seed_stream

mpmath.mp.dps = 50


def mpmath_two_sided_p(t, dof):
    x = mpmath.mpf(dof) / (dof + mpmath.mpf(t) ** 2)
    return float(mpmath.betainc(dof / mpmath.mpf(2), mpmath.mpf(1) / 2, 0, x, regularized=True))


class TestPerplexity:
    def test_perfect_prediction(self):
        assert perplexity([0.0, 0.0, 0.0]) == 1.0

    def test_uniform_model(self):
        vocab = 123
        assert np.isclose(perplexity([math.log(vocab)] * 10), vocab, rtol=1e-12)

    def test_hand_case(self):
        assert np.isclose(perplexity([math.log(2), math.log(8)]), 4.0, rtol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            perplexity([])

    def test_negative_rejected(self):
        with pytest.raises(DataError):
            perplexity([-0.1])

    def test_equals_exp_of_mlm_loss(self):
        rng = seed_stream(3, "ppl")
        logits = rng.normal(size=(2, 6, 9))
        labels = rng.integers(0, 9, size=(2, 6)).astype(np.int64)
        labels[0, 0] = LABEL_IGNORE
        loss, count = mlm_loss(logits, labels)
        shifted = logits - logits.max(-1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(-1, keepdims=True))
        nlls = [-logp[b, s, labels[b, s]] for b in range(2) for s in range(6)
                if labels[b, s] != LABEL_IGNORE]
        assert len(nlls) == count
        assert np.isclose(perplexity(nlls), math.exp(loss), rtol=1e-12)


class TestClassificationMetrics:
    def test_all_correct(self):
        out = classification_metrics(["a", "b"], ["a", "b"])
        assert out["accuracy"] == 1.0 and out["macro_f1"] == 1.0 and out["weighted_f1"] == 1.0

    def test_hand_2x2_case(self):
        out = classification_metrics(list("AABB"), list("ABAB"))
        assert out["accuracy"] == 0.5
        assert out["per_class"]["A"]["f1"] == 0.5
        assert out["per_class"]["B"]["f1"] == 0.5
        assert out["macro_f1"] == 0.5

    def test_single_class(self):
        out = classification_metrics(["x", "x"], ["x", "x"])
        assert out["macro_f1"] == 1.0

    def test_zero_predicted_positives_precision_zero(self):
        out = classification_metrics(["a", "a", "b"], ["b", "b", "b"])
        assert out["per_class"]["a"]["precision"] == 0.0
        assert out["per_class"]["a"]["recall"] == 0.0

    def test_relabel_invariance(self):
        gold = ["a", "b", "c", "a", "b"]
        pred = ["b", "b", "c", "a", "a"]
        rename = {"a": "z", "b": "y", "c": "x"}
        out1 = classification_metrics(gold, pred)
        out2 = classification_metrics([rename[g] for g in gold], [rename[p] for p in pred])
        assert out1["macro_f1"] == out2["macro_f1"]
        assert out1["accuracy"] == out2["accuracy"]

    def test_binary_f1_positive_class(self):
        gold = ["pos", "neg", "pos", "pos"]
        pred = ["pos", "pos", "neg", "pos"]
        out = classification_metrics(gold, pred, positive_label="pos")
        assert np.isclose(out["binary_f1"], f1_score(gold, pred, pos_label="pos"))

    def test_matches_sklearn_on_random_instances(self):
        rng = seed_stream(11, "cls")
        for _ in range(100):
            n_classes = int(rng.integers(2, 5))
            n = int(rng.integers(1, 30))
            labels = [f"c{i}" for i in range(n_classes)]
            gold = [labels[i] for i in rng.integers(0, n_classes, n)]
            pred = [labels[i] for i in rng.integers(0, n_classes, n)]
            present = sorted(set(gold) | set(pred))
            out = classification_metrics(gold, pred)
            p, r, f, support = precision_recall_fscore_support(
                gold, pred, labels=present, zero_division=0)
            assert np.isclose(out["accuracy"], accuracy_score(gold, pred))
            assert np.isclose(out["macro_f1"], float(np.mean(f)))
            for i, cls in enumerate(present):
                assert np.isclose(out["per_class"][cls]["precision"], p[i])
                assert np.isclose(out["per_class"][cls]["recall"], r[i])
                assert np.isclose(out["per_class"][cls]["f1"], f[i])

    def test_concat_accuracy_between_per_set_accuracies(self):
        rng = seed_stream(4, "concat")
        for _ in range(50):
            n1, n2 = int(rng.integers(1, 20)), int(rng.integers(1, 20))
            g1 = ["a" if x < 0.5 else "b" for x in rng.random(n1)]
            p1 = ["a" if x < 0.5 else "b" for x in rng.random(n1)]
            g2 = ["a" if x < 0.5 else "b" for x in rng.random(n2)]
            p2 = ["a" if x < 0.5 else "b" for x in rng.random(n2)]
            acc1 = classification_metrics(g1, p1)["accuracy"]
            acc2 = classification_metrics(g2, p2)["accuracy"]
            acc = classification_metrics(g1 + g2, p1 + p2)["accuracy"]
            assert min(acc1, acc2) - 1e-12 <= acc <= max(acc1, acc2) + 1e-12


# Independent brute-force span oracle: scan every start/end/type triple.
def brute_force_spans(tags):
    spans = set()
    n = len(tags)
    for start in range(n):
        tag = tags[start]
        if tag == "O":
            continue
        entity = tag[2:]
        starts = tag.startswith("B-") or (
            tag.startswith("I-") and (start == 0 or tags[start - 1][2:] != entity
                                      or tags[start - 1] == "O")
        )
        if not starts:
            continue
        end = start + 1
        while end < n and tags[end] == f"I-{entity}":
            end += 1
        spans.add((start, end, entity))
    return spans


class TestTaggingMetrics:
    def test_identical_sequences(self):
        seqs = [["B-PER", "I-PER", "O", "B-LOC"]]
        out = tagging_metrics(seqs, seqs)
        assert out["f1"] == 1.0 and out["macro_f1"] == 1.0

    def test_boundary_mismatch_scores_zero(self):
        gold = [["O", "O", "B-PER", "I-PER", "O"]]
        pred = [["O", "O", "B-PER", "O", "O"]]
        out = tagging_metrics(gold, pred)
        assert out["f1"] == 0.0

    def test_three_sentence_mixed_oracle(self):
        gold = [
            ["B-PER", "I-PER", "O", "B-ORG"],
            ["O", "B-LOC", "I-LOC", "I-LOC", "O"],
            ["B-ORG", "O", "B-PER", "O"],
        ]
        pred = [
            ["B-PER", "I-PER", "O", "B-PER"],
            ["O", "B-LOC", "I-LOC", "O", "O"],
            ["B-ORG", "O", "B-PER", "O"],
        ]
        out = tagging_metrics(gold, pred)
        gold_spans = {(i, *s) for i, seq in enumerate(gold) for s in brute_force_spans(seq)}
        pred_spans = {(i, *s) for i, seq in enumerate(pred) for s in brute_force_spans(seq)}
        tp = len(gold_spans & pred_spans)
        precision = tp / len(pred_spans)
        recall = tp / len(gold_spans)
        assert np.isclose(out["precision"], precision)
        assert np.isclose(out["recall"], recall)
        assert np.isclose(out["f1"], 2 * precision * recall / (precision + recall))

    def test_dangling_I_repaired_to_new_span(self):
        assert extract_spans(["O", "I-PER", "I-PER"]) == {(1, 3, "PER")}
        assert extract_spans(["I-LOC", "I-PER"]) == {(0, 1, "LOC"), (1, 2, "PER")}

    def test_malformed_tags_listed(self):
        with pytest.raises(DataError, match="seq 0 pos 1"):
            tagging_metrics([["O", "BAD"]], [["O", "O"]])

    def test_matches_brute_force_on_random_instances(self):
        rng = seed_stream(13, "tag")
        types = ["PER", "LOC", "ORG"]
        tags = ["O"] + [f"{b}-{t}" for t in types for b in "BI"]
        for _ in range(100):
            n_seq = int(rng.integers(1, 5))
            gold = [[tags[i] for i in rng.integers(0, len(tags), int(rng.integers(1, 12)))]
                    for _ in range(n_seq)]
            pred = [[tags[i] for i in rng.integers(0, len(tags), len(g))] for g in gold]
            out = tagging_metrics(gold, pred)
            gold_spans = {(i, *s) for i, seq in enumerate(gold) for s in brute_force_spans(seq)}
            pred_spans = {(i, *s) for i, seq in enumerate(pred) for s in brute_force_spans(seq)}
            tp = len(gold_spans & pred_spans)
            p = tp / len(pred_spans) if pred_spans else 0.0
            r = tp / len(gold_spans) if gold_spans else 0.0
            f = 2 * p * r / (p + r) if p + r else 0.0
            assert np.isclose(out["precision"], p) and np.isclose(out["recall"], r)
            assert np.isclose(out["f1"], f)


class TestIncompleteBeta:
    def test_matches_mpmath_grid(self):
        for a in (0.5, 1.0, 2.0, 3.5, 10.0):
            for b in (0.5, 1.5, 4.0):
                for x in (0.001, 0.2, 0.5, 0.77, 0.999):
                    ours = regularized_incomplete_beta(a, b, x)
                    ref = float(mpmath.betainc(a, b, 0, x, regularized=True))
                    assert abs(ours - ref) <= 1e-12 * max(1.0, abs(ref))

    def test_endpoints(self):
        assert regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0
        assert regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0


class TestPairedTTest:
    def test_identical_scores(self):
        out = paired_t_test([0.5, 0.6, 0.7], [0.5, 0.6, 0.7])
        assert out["t"] == 0.0 and out["p"] == 1.0 and out["zero_variance"]

    def test_constant_nonzero_difference_flags(self):
        out = paired_t_test([0.6] * 5, [0.5] * 5)
        assert out["zero_variance"] and out["p"] == 0.0 and out["t"] == math.inf

    def test_derived_case_matches_high_precision_oracle(self):
        b = [0.5, 0.5, 0.5, 0.5, 0.5]
        a = [0.53, 0.51, 0.54, 0.52, 0.55]
        out = paired_t_test(a, b)
        d = np.array(a) - np.array(b)
        t = d.mean() / (d.std(ddof=1) / math.sqrt(5))
        assert np.isclose(out["t"], t, rtol=1e-12)
        assert abs(out["p"] - mpmath_two_sided_p(t, 4)) < 1e-9

    def test_antisymmetry(self):
        a = [0.61, 0.64, 0.58, 0.66, 0.60]
        b = [0.55, 0.59, 0.61, 0.57, 0.56]
        ab = paired_t_test(a, b)
        ba = paired_t_test(b, a)
        assert np.isclose(ab["t"], -ba["t"], rtol=1e-12)
        assert np.isclose(ab["p"], ba["p"], rtol=1e-12)

    def test_random_cases_match_mpmath(self):
        rng = seed_stream(23, "ttest")
        for _ in range(100):
            n = int(rng.integers(2, 12))
            a = rng.random(n)
            b = rng.random(n)
            out = paired_t_test(a, b)
            if out["zero_variance"]:
                continue
            assert abs(out["p"] - mpmath_two_sided_p(out["t"], n - 1)) < 1e-9

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            paired_t_test([0.1, 0.2], [0.1])

    def test_sf_symmetry(self):
        assert student_t_sf_two_sided(0.0, 4) == 1.0


class TestSeedScores:
    def test_mean_std_hand_case(self):
        scores = SeedScores(model="m", task="t", scores=[0.70, 0.72, 0.71, 0.73, 0.74])
        assert np.isclose(scores.mean, 0.72, rtol=1e-12)
        assert np.isclose(scores.std, 0.015811388300841896, rtol=1e-12)

    def test_score_range_validated(self):
        with pytest.raises(DataError):
            SeedScores(model="m", task="t", scores=[1.2])

    def test_report_shape(self):
        ours = SeedScores(model="ours", task="sentiment", scores=[0.7, 0.72, 0.71, 0.7, 0.72])
        base = SeedScores(model="base", task="sentiment", scores=[0.6, 0.62, 0.61, 0.6, 0.62])
        report = metrics_report(ours, [base])
        assert report["model"] == "ours" and report["task"] == "sentiment"
        assert len(report["seeds"]) == 5
        assert report["significance"][0]["baseline"] == "base"
        assert report["significance"][0]["p"] < 0.01

    def test_leaderboard_rows(self):
        reports = [
            {"model": "a", "task": "ner", "mean": 0.5, "std": 0.01},
            {"model": "a", "task": "sentiment", "mean": 0.7, "std": 0.02},
            {"model": "b", "task": "ner", "mean": 0.52, "std": 0.01},
        ]
        header, rows = leaderboard_rows(reports)
        assert header == ["model", "ner", "sentiment"]
        assert rows[0][0] == "a" and "0.700" in rows[0][2]
        assert rows[1][2] == ""  # model b has no sentiment entry
