"""Confusion matrices, class-wise and macro F1, incorrect-prediction distributions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import StanceLabel
from .errors import ShapeError

N = len(StanceLabel)
METRICS_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are gold label codes, columns predicted codes."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (N, N) or (counts < 0).any():
            raise ShapeError("confusion matrix must be a non-negative 3x3 count table")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)


def confusion_matrix(gold: Sequence[int], pred: Sequence[int]) -> ConfusionMatrix:
    gold = np.asarray([int(g) for g in gold], dtype=np.int64)
    pred = np.asarray([int(p) for p in pred], dtype=np.int64)
    if gold.shape != pred.shape:
        raise ShapeError(f"gold has {gold.size} items, pred has {pred.size}")
    counts = np.zeros((N, N), dtype=np.int64)
    np.add.at(counts, (gold, pred), 1)
    return ConfusionMatrix(counts)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    # 0/0 is defined as 0
    num = num.astype(float)
    den = den.astype(float)
    return np.divide(num, den, out=np.zeros_like(num), where=den != 0)


def precision_recall_f1(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    c = cm.counts
    tp = np.diag(c)
    precision = _safe_div(tp, c.sum(axis=0))
    recall = _safe_div(tp, c.sum(axis=1))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return precision, recall, f1


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    return precision_recall_f1(cm)[2]


def macro_f1(cm: ConfusionMatrix) -> float:
    return float(per_class_f1(cm).sum() / N)


def micro_f1(cm: ConfusionMatrix) -> float:
    # single-label multi-class: micro P = micro R = accuracy
    return float(np.trace(cm.counts) / cm.total) if cm.total else 0.0


def macro_f1_score(gold: Sequence[int], pred: Sequence[int]) -> float:
    return macro_f1(confusion_matrix(gold, pred))


def incorrect_distribution(cm: ConfusionMatrix) -> np.ndarray:
    off = cm.counts.astype(float)
    np.fill_diagonal(off, 0.0)
    return _safe_div(off, np.broadcast_to(off.sum(axis=1, keepdims=True), off.shape))


@dataclass
class MetricsReport:
    variant: str
    lang: str
    confusion: ConfusionMatrix
    precision: list[float] = field(default_factory=list)
    recall: list[float] = field(default_factory=list)
    f1: list[float] = field(default_factory=list)
    macro_f1: float = 0.0
    micro_f1: float = 0.0
    incorrect: list[list[float]] = field(default_factory=list)
    support: list[int] = field(default_factory=list)

    @classmethod
    def from_predictions(cls, variant: str, lang: str, gold, pred) -> "MetricsReport":
        return cls.from_confusion(variant, lang, confusion_matrix(gold, pred))

    @classmethod
    def from_confusion(cls, variant: str, lang: str, cm: ConfusionMatrix) -> "MetricsReport":
        p, r, f = precision_recall_f1(cm)
        return cls(
            variant=variant, lang=lang, confusion=cm,
            precision=p.tolist(), recall=r.tolist(), f1=f.tolist(),
            macro_f1=float(f.sum() / N), micro_f1=micro_f1(cm),
            incorrect=incorrect_distribution(cm).tolist(),
            support=cm.counts.sum(axis=1).tolist(),
        )

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "lang": self.lang,
            "labels": [lab.text for lab in StanceLabel],
            "confusion": self.confusion.counts.tolist(),
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "incorrect_distribution": self.incorrect,
            "support": self.support,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MetricsReport":
        return cls(
            variant=obj["variant"], lang=obj["lang"],
            confusion=ConfusionMatrix(np.asarray(obj["confusion"])),
            precision=list(obj["precision"]), recall=list(obj["recall"]), f1=list(obj["f1"]),
            macro_f1=obj["macro_f1"], micro_f1=obj["micro_f1"],
            incorrect=[list(row) for row in obj["incorrect_distribution"]],
            support=list(obj["support"]),
        )

    def __eq__(self, other):
        return isinstance(other, MetricsReport) and self.to_json() == other.to_json()


def average_macro_f1(reports: Sequence[MetricsReport]) -> float:
    """Unweighted mean over languages (the "Average" column)."""
    if not reports:
        return 0.0
    return float(sum(r.macro_f1 for r in reports) / len(reports))
