"""Binary classification metrics: confusion counts, threshold ROC, trapezoidal AUC."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def normalized(self) -> np.ndarray:
        """Row percentages by true class: [[TN, FP], [FN, TP]] with rows summing to 100."""
        rows = np.array([[self.tn, self.fp], [self.fn, self.tp]], dtype=np.float64)
        sums = rows.sum(axis=1, keepdims=True)
        return np.divide(rows * 100.0, sums, out=np.zeros_like(rows), where=sums > 0)

    def degenerate_metrics(self) -> tuple[str, ...]:
        """Names of metrics whose denominator is zero (reported as 0)."""
        bad = []
        if self.tp + self.fp == 0:
            bad.append("precision")
        if self.tp + self.fn == 0:
            bad.append("recall")
        if "precision" in bad or "recall" in bad or precision(self) + recall(self) == 0:
            bad.append("f1")
        return tuple(bad)


def confusion(pred_labels, true_labels) -> ConfusionMatrix:
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape or pred.ndim != 1:
        raise MetricError(f"prediction/label length mismatch: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise MetricError("cannot build a confusion matrix from empty inputs")
    for name, arr in (("predictions", pred), ("labels", true)):
        if not np.isin(arr, (0, 1)).all():
            raise MetricError(f"{name} must be 0/1")
    return ConfusionMatrix(
        tp=int(np.sum((pred == 1) & (true == 1))),
        fp=int(np.sum((pred == 1) & (true == 0))),
        fn=int(np.sum((pred == 0) & (true == 1))),
        tn=int(np.sum((pred == 0) & (true == 0))),
    )


def _ratio(num, den) -> float:
    return num / den if den else 0.0


def accuracy(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp + cm.tn, cm.total)


def precision(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fp)


def recall(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fn)


def f1_from(p: float, r: float) -> float:
    return _ratio(2 * p * r, p + r)


def f1(cm: ConfusionMatrix) -> float:
    return f1_from(precision(cm), recall(cm))


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fpr", "tpr", "threshold"])
            for x, y, t in zip(self.fpr, self.tpr, self.thresholds):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(t))])


def roc_curve(scores, true_labels) -> RocCurve:
    """Step ROC curve over every distinct score, highest first.

    The first threshold is +inf, giving (0, 0); a sample counts as positive
    when its score is >= the threshold.  The lowest distinct score yields (1, 1).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(true_labels)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricError("scores and labels must be 1-D and equally long")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC needs both classes present")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y == 0)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    fpr = np.r_[0.0, fp[ends] / n_neg]
    tpr = np.r_[0.0, tp[ends] / n_pos]
    thresholds = np.r_[np.inf, s[ends]]
    return RocCurve(fpr, tpr, thresholds)


def roc_auc(curve: RocCurve) -> float:
    """Trapezoidal area under TPR(FPR)."""
    dx = np.diff(curve.fpr)
    return float(np.sum(dx * (curve.tpr[1:] + curve.tpr[:-1]) / 2.0))


def roc_auc_score(scores, true_labels) -> float:
    return roc_auc(roc_curve(scores, true_labels))


def hard_labels(probabilities) -> np.ndarray:
    """Argmax over two columns; ties go to class 0."""
    p = np.asarray(probabilities)
    return (p[:, 1] > p[:, 0]).astype(np.int64)


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    roc_auc: float
    confusion: ConfusionMatrix
    normalized_confusion: np.ndarray
    degenerate: tuple[str, ...] = field(default=())
    roc: RocCurve | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "f1": self.f1,
            "precision": self.precision,
            "recall": self.recall,
            "roc_auc": self.roc_auc,
            "confusion": {"tp": self.confusion.tp, "fp": self.confusion.fp,
                          "fn": self.confusion.fn, "tn": self.confusion.tn},
            "normalized_confusion": self.normalized_confusion.tolist(),
            "degenerate": list(self.degenerate),
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def confusion_to_csv(self, path) -> None:
        """Percentages by true class, the data behind a normalized confusion plot."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["true_label", "pred_0_pct", "pred_1_pct"])
            for label, row in zip((0, 1), self.normalized_confusion):
                w.writerow([label, repr(float(row[0])), repr(float(row[1]))])


def report_from_confusion(cm: ConfusionMatrix, auc: float = float("nan")) -> MetricsReport:
    return MetricsReport(
        accuracy=accuracy(cm), precision=precision(cm), recall=recall(cm), f1=f1(cm),
        roc_auc=auc, confusion=cm, normalized_confusion=cm.normalized(),
        degenerate=cm.degenerate_metrics(),
    )


def evaluate(probabilities, true_labels) -> MetricsReport:
    p = np.asarray(probabilities, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2:
        raise MetricError(f"probabilities must be [B, 2], got {p.shape}")
    y = np.asarray(true_labels)
    cm = confusion(hard_labels(p), y)
    curve = roc_curve(p[:, 1], y)
    rep = report_from_confusion(cm, roc_auc(curve))
    rep.roc = curve
    return rep
