"""Evaluation metrics for both tasks, computed from prediction records.

A :class:`PredictionRecord` holds one (sentence, target, aspect) query:
the gold label index and the model's probability row. Metrics never
touch the model, so they are testable against brute-force oracles on
hand-built tables.

Conventions, applied consistently and logged here once:

* Presence means "predicted (or gold) label is not ``none``".
* Precision/recall/F1 with an empty denominator are 0.
* ROC-AUC uses midranks, so tied scores count half per pair; an aspect
  whose records are all-positive or all-negative has undefined AUC and
  is excluded from macro averages, as is an aspect absent from gold in
  the macro-F1.
* Sentiment accuracies restrict the argmax to the evaluated label
  subset, never letting ``none`` win on a gold-labeled pair.
"""

from __future__ import annotations

import json
from typing import NamedTuple

import numpy as np

from .errors import UsageError

NONE_LABEL = "none"


class PredictionRecord(NamedTuple):
    example_id: str
    target: str | None
    aspect: str
    gold: int
    probs: np.ndarray


class MetricReport:
    """Named metric values plus text / machine-line serialization."""

    def __init__(self, task: str, values: dict[str, float]):
        self.task = task
        self.values = dict(values)

    def __getitem__(self, key: str) -> float:
        return self.values[key]

    def __repr__(self):
        body = ", ".join(f"{k}={v:.4f}" for k, v in self.values.items())
        return f"MetricReport({self.task}: {body})"

    def format_text(self) -> str:
        lines = [f"task {self.task}"]
        lines += [f"{k} {v:.6f}" for k, v in self.values.items()]
        return "\n".join(lines) + "\n"

    def format_line(self) -> str:
        return json.dumps({"task": self.task, **self.values}, sort_keys=True)


def roc_auc(scores, labels) -> float | None:
    """Midrank ROC-AUC; None when only one class is present.

    Equals the pair-counting definition: ties contribute 0.5 per
    (positive, negative) pair, and any strictly monotone transform of
    the scores leaves the value unchanged.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n = scores.size
    n_pos = int(labels.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j < n and sorted_scores[j] == sorted_scores[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + 1 + j)
        i = j
    rank_sum = float(ranks[labels].sum())
    return (rank_sum - 0.5 * n_pos * (n_pos + 1)) / (n_pos * n_neg)


def _safe_div(num: float, den: float) -> float:
    return num / den if den else 0.0


def precision_recall_f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = _safe_div(tp, tp + fp)
    r = _safe_div(tp, tp + fn)
    f = _safe_div(2.0 * p * r, p + r)
    return p, r, f


def restricted_argmax(probs: np.ndarray, allowed: list[int]) -> int:
    """Index of the highest-probability class among ``allowed``."""
    return allowed[int(np.argmax(np.asarray(probs)[allowed]))]


def overall_accuracy(records: list[PredictionRecord]) -> float:
    """Plain instance accuracy over all records (used for best-dev picks)."""
    if not records:
        raise UsageError("no records to evaluate")
    hits = sum(int(np.argmax(r.probs)) == r.gold for r in records)
    return hits / len(records)


def _macro_mean(parts: list[float]) -> float:
    return sum(parts) / len(parts) if parts else 0.0


def tabsa_metrics(records: list[PredictionRecord], spec) -> MetricReport:
    """Targeted-task report: presence metrics plus binary sentiment metrics.

    Strict accuracy credits a (sentence, target) group only when every
    aspect's presence decision is right. Sentiment metrics cover only
    gold non-none pairs, over the negative/positive label pair.
    """
    if not records:
        raise UsageError("no records to evaluate")
    none_idx = spec.none_index
    neg_idx = spec.label_index("negative")
    pos_idx = spec.label_index("positive")

    pred = [int(np.argmax(r.probs)) for r in records]
    gold_present = [r.gold != none_idx for r in records]
    pred_present = [p != none_idx for p in pred]

    groups: dict[tuple[str, str | None], list[int]] = {}
    for i, r in enumerate(records):
        groups.setdefault((r.example_id, r.target), []).append(i)
    strict = _macro_mean(
        [
            float(all(gold_present[i] == pred_present[i] for i in idxs))
            for idxs in groups.values()
        ]
    )

    f1_parts: list[float] = []
    auc_parts: list[float] = []
    sent_auc_parts: list[float] = []
    for aspect in spec.aspects:
        idxs = [i for i, r in enumerate(records) if r.aspect == aspect]
        if not idxs:
            continue
        tp = sum(1 for i in idxs if gold_present[i] and pred_present[i])
        fp = sum(1 for i in idxs if not gold_present[i] and pred_present[i])
        fn = sum(1 for i in idxs if gold_present[i] and not pred_present[i])
        if any(gold_present[i] for i in idxs):
            f1_parts.append(precision_recall_f1(tp, fp, fn)[2])
        auc = roc_auc(
            [1.0 - records[i].probs[none_idx] for i in idxs],
            [gold_present[i] for i in idxs],
        )
        if auc is not None:
            auc_parts.append(auc)
        sent_idxs = [i for i in idxs if gold_present[i]]
        if sent_idxs:
            sauc = roc_auc(
                [records[i].probs[pos_idx] for i in sent_idxs],
                [records[i].gold == pos_idx for i in sent_idxs],
            )
            if sauc is not None:
                sent_auc_parts.append(sauc)

    sent_records = [
        (r, p) for r, p in zip(records, pred) if r.gold != none_idx
    ]
    sent_hits = [
        int(restricted_argmax(r.probs, [neg_idx, pos_idx]) == r.gold)
        for r, _p in sent_records
    ]
    sentiment_accuracy = _macro_mean([float(h) for h in sent_hits])

    return MetricReport(
        "tabsa",
        {
            "strict_accuracy": strict,
            "macro_f1": _macro_mean(f1_parts),
            "aspect_auc": _macro_mean(auc_parts),
            "sentiment_accuracy": sentiment_accuracy,
            "sentiment_auc": _macro_mean(sent_auc_parts),
        },
    )


def absa_metrics(records: list[PredictionRecord], spec) -> MetricReport:
    """Aspect-task report: micro presence P/R/F1 and subset accuracies."""
    if not records:
        raise UsageError("no records to evaluate")
    none_idx = spec.none_index

    pred = [int(np.argmax(r.probs)) for r in records]
    gold_present = [r.gold != none_idx for r in records]
    pred_present = [p != none_idx for p in pred]
    tp = sum(1 for g, p in zip(gold_present, pred_present) if g and p)
    fp = sum(1 for g, p in zip(gold_present, pred_present) if not g and p)
    fn = sum(1 for g, p in zip(gold_present, pred_present) if g and not p)
    precision, recall, f1 = precision_recall_f1(tp, fp, fn)

    def subset_accuracy(label_names: list[str]) -> float:
        allowed = [spec.label_index(name) for name in label_names]
        hits = [
            float(restricted_argmax(r.probs, allowed) == r.gold)
            for r in records
            if r.gold in allowed
        ]
        return _macro_mean(hits)

    return MetricReport(
        "absa",
        {
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "binary_accuracy": subset_accuracy(["negative", "positive"]),
            "three_class_accuracy": subset_accuracy(
                ["negative", "neutral", "positive"]
            ),
            "four_class_accuracy": subset_accuracy(
                ["negative", "neutral", "positive", "conflict"]
            ),
        },
    )
