"""Confusion-matrix statistics in the shape of a per-class classification report."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd
from sklearn import metrics

from ..data.labels import CLASS_NAMES, NUM_CLASSES
from ..errors import DataError, ShapeError
from ..utils import format_decimal

log = logging.getLogger("capsulefusion.metrics")

FORMATS = ("text_table", "json")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def predicted(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def true_positives(self) -> np.ndarray:
        return np.diagonal(self.counts)


@dataclass(frozen=True)
class ReportRow:
    label: str
    precision: float
    recall: float
    f1: float
    support: int
    precision_undefined: bool = False
    recall_undefined: bool = False


@dataclass(frozen=True)
class ClassificationReport:
    rows: tuple[ReportRow, ...]
    accuracy: float
    balanced_accuracy: float
    macro_avg: tuple[float, float, float]
    weighted_avg: tuple[float, float, float]
    total_support: int
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "rows": [
                {
                    "class": r.label,
                    "precision": r.precision,
                    "recall": r.recall,
                    "f1": r.f1,
                    "support": r.support,
                    "precision_undefined": r.precision_undefined,
                    "recall_undefined": r.recall_undefined,
                }
                for r in self.rows
            ],
            "accuracy": self.accuracy,
            "balanced_accuracy": self.balanced_accuracy,
            "macro_avg": dict(zip(("precision", "recall", "f1"), self.macro_avg)),
            "weighted_avg": dict(zip(("precision", "recall", "f1"), self.weighted_avg)),
            "total_support": self.total_support,
            **({"extra": self.extra} if self.extra else {}),
        }


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def confusion(labels, predictions, num_classes: int = NUM_CLASSES) -> ConfusionMatrix:
    labels = np.asarray(labels).reshape(-1)
    predictions = np.asarray(predictions).reshape(-1)
    if labels.shape != predictions.shape:
        raise ShapeError(
            f"{labels.size} labels but {predictions.size} predictions",
            labels=labels.size, predictions=predictions.size,
        )
    for name, values in (("label", labels), ("prediction", predictions)):
        if values.size and (values.min() < 0 or values.max() >= num_classes
                            or not np.all(values == np.floor(values))):
            bad = int(np.flatnonzero((values < 0) | (values >= num_classes) | (values != np.floor(values)))[0])
            raise ShapeError(
                f"{name} {values[bad]!r} at position {bad} outside [0, {num_classes})",
                position=bad, value=values[bad].item(),
            )
    if labels.size == 0:
        return ConfusionMatrix(np.zeros((num_classes, num_classes), dtype=np.int64))
    counts = metrics.confusion_matrix(
        labels.astype(np.int64), predictions.astype(np.int64), labels=np.arange(num_classes)
    )
    return ConfusionMatrix(counts.astype(np.int64))


def _require_nonempty(cm: ConfusionMatrix) -> None:
    if cm.total <= 0:
        raise DataError("cannot report on an empty confusion matrix")


def _samples(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray]:
    """(labels, predictions) arrays that reproduce ``cm``."""
    k = cm.counts.shape[0]
    cells = np.repeat(np.arange(k * k), cm.counts.reshape(-1))
    return cells // k, cells % k


def balanced_accuracy(cm: ConfusionMatrix) -> float:
    """Mean recall over classes that have at least one true sample."""
    _require_nonempty(cm)
    labels, predictions = _samples(cm)
    with warnings.catch_warnings():
        # classes that are only ever predicted carry no recall and are skipped
        warnings.simplefilter("ignore", UserWarning)
        return float(metrics.balanced_accuracy_score(labels, predictions))


def _averages(precision, recall, f1, support) -> tuple[tuple[float, ...], tuple[float, ...]]:
    precision, recall, f1 = (np.asarray(a, dtype=np.float64) for a in (precision, recall, f1))
    support = np.asarray(support, dtype=np.float64)
    present = support > 0
    macro = tuple(float(np.mean(a[present])) for a in (precision, recall, f1))
    weighted = tuple(float(np.sum(a * support) / support.sum()) for a in (precision, recall, f1))
    return macro, weighted


def report(cm: ConfusionMatrix, class_names: Sequence[str] = CLASS_NAMES) -> ClassificationReport:
    _require_nonempty(cm)
    labels, predictions = _samples(cm)
    precision, recall, f1, support = metrics.precision_recall_fscore_support(
        labels, predictions, labels=np.arange(cm.counts.shape[0]), zero_division=0
    )
    predicted = cm.predicted
    rows = []
    for c, name in enumerate(class_names):
        p_undef, r_undef = predicted[c] == 0, support[c] == 0
        undefined = [m for m, flag in (("precision", p_undef), ("recall", r_undef)) if flag]
        if undefined:
            log.warning("class %r: %s undefined, reported as 0", name, " and ".join(undefined))
        rows.append(ReportRow(name, float(precision[c]), float(recall[c]), float(f1[c]),
                              int(support[c]), bool(p_undef), bool(r_undef)))
    macro, weighted = _averages(precision, recall, f1, support)
    return ClassificationReport(
        rows=tuple(rows),
        accuracy=float(metrics.accuracy_score(labels, predictions)),
        balanced_accuracy=balanced_accuracy(cm),
        macro_avg=macro,
        weighted_avg=weighted,
        total_support=cm.total,
    )


def summarize(rows: Sequence[tuple[str, float, float, int]]) -> ClassificationReport:
    """Report from published per-class (name, precision, recall, support) values.

    F1 is recomputed from precision and recall. Accuracy is the support-weighted recall,
    which equals trace/total for any confusion matrix with those recalls.
    """
    if not rows:
        raise DataError("no rows to summarize")
    names = [r[0] for r in rows]
    precision = np.array([r[1] for r in rows], dtype=np.float64)
    recall = np.array([r[2] for r in rows], dtype=np.float64)
    support = np.array([r[3] for r in rows], dtype=np.int64)
    if support.sum() <= 0:
        raise DataError("rows carry no support")
    f1 = np.array([f1_score(p, r) for p, r in zip(precision, recall)])
    macro, weighted = _averages(precision, recall, f1, support)
    report_rows = tuple(
        ReportRow(n, float(p), float(r), float(f), int(s))
        for n, p, r, f, s in zip(names, precision, recall, f1, support)
    )
    return ClassificationReport(
        rows=report_rows,
        accuracy=weighted[1],
        balanced_accuracy=macro[1],
        macro_avg=macro,
        weighted_avg=weighted,
        total_support=int(support.sum()),
    )


def _display(name: str) -> str:
    return name.title()


def render_text(rep: ClassificationReport) -> str:
    fmt = format_decimal
    table = [
        {"Class": _display(r.label), "Precision": fmt(r.precision), "Recall": fmt(r.recall),
         "F1-Score": fmt(r.f1), "Support": str(r.support)}
        for r in rep.rows
    ]
    table.append({"Class": "Accuracy", "Precision": fmt(rep.accuracy), "Recall": "", "F1-Score": "",
                  "Support": str(rep.total_support)})
    table.append({"Class": "Balanced Accuracy", "Precision": fmt(rep.balanced_accuracy), "Recall": "",
                  "F1-Score": "", "Support": str(rep.total_support)})
    for label, avg in (("Macro Avg", rep.macro_avg), ("Weighted Avg", rep.weighted_avg)):
        table.append({"Class": label, "Precision": fmt(avg[0]), "Recall": fmt(avg[1]),
                      "F1-Score": fmt(avg[2]), "Support": str(rep.total_support)})
    df = pd.DataFrame(table, columns=["Class", "Precision", "Recall", "F1-Score", "Support"])
    return df.to_string(index=False, justify="left") + "\n"


def render(rep: ClassificationReport, format: str = "text_table") -> str:
    if format == "text_table":
        return render_text(rep)
    if format == "json":
        return json.dumps(rep.to_dict(), indent=2)
    raise ShapeError(f"unknown report format {format!r}", format=format, valid=FORMATS)


def report_from_json(text: str | Mapping[str, Any]) -> ClassificationReport:
    data = json.loads(text) if isinstance(text, str) else text
    try:
        rows = tuple(
            ReportRow(r["class"], r["precision"], r["recall"], r["f1"], r["support"],
                      r.get("precision_undefined", False), r.get("recall_undefined", False))
            for r in data["rows"]
        )
        keys = ("precision", "recall", "f1")
        return ClassificationReport(
            rows=rows,
            accuracy=data["accuracy"],
            balanced_accuracy=data["balanced_accuracy"],
            macro_avg=tuple(data["macro_avg"][k] for k in keys),
            weighted_avg=tuple(data["weighted_avg"][k] for k in keys),
            total_support=data["total_support"],
            extra=data.get("extra", {}),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed report JSON: {exc}") from exc


def variant_table(results: Sequence[tuple[str, float]]) -> str:
    """One accuracy per model variant, as a two-column text table."""
    df = pd.DataFrame(
        [{"Model": name, "Accuracy": format_decimal(acc)} for name, acc in results],
        columns=["Model", "Accuracy"],
    )
    return df.to_string(index=False, justify="left") + "\n"
