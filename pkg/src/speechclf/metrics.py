"""Confusion matrices, per-class metrics and report rendering."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import Label

REPORT_FORMAT_VERSION = 1
CLASS_NAMES = [label.to_string() for label in Label]


class LengthMismatch(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    """Counts with rows = actual class, columns = predicted class."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (len(Label), len(Label)):
            raise ValueError(f"expected a {len(Label)}x{len(Label)} matrix")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ClassMetrics:
    recall: np.ndarray
    precision: np.ndarray
    f1: np.ndarray
    accuracy: float


def confusion(predictions, labels) -> ConfusionMatrix:
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise LengthMismatch(
            f"{predictions.shape[0]} predictions vs {labels.shape[0]} labels")
    n = len(Label)
    if predictions.size and not (
            (0 <= predictions).all() and (predictions < n).all()
            and (0 <= labels).all() and (labels < n).all()):
        raise ValueError("class index out of range")
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    return ConfusionMatrix(counts)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    # Zero denominators score 0 rather than raising.
    out = np.zeros_like(num, dtype=np.float64)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    return out


def metrics(cm: ConfusionMatrix) -> ClassMetrics:
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    recall = _safe_div(tp, counts.sum(axis=1))
    precision = _safe_div(tp, counts.sum(axis=0))
    f1 = _safe_div(2.0 * precision * recall, precision + recall)
    accuracy = float(tp.sum() / counts.sum()) if cm.total else 0.0
    return ClassMetrics(recall, precision, f1, accuracy)


def f1_score(recall: float, precision: float) -> float:
    """Harmonic mean, 0 when both terms vanish."""
    if recall + precision == 0:
        return 0.0
    return 2.0 * recall * precision / (recall + precision)


def _section_dict(cm: ConfusionMatrix, m: ClassMetrics) -> dict:
    return {
        "confusion": cm.counts.tolist(),
        "accuracy": m.accuracy,
        "per_class": {
            name: {
                "recall": float(m.recall[i]),
                "precision": float(m.precision[i]),
                "f1": float(m.f1[i]),
            }
            for i, name in enumerate(CLASS_NAMES)
        },
    }


def _pct(x: float) -> str:
    return f"{100.0 * x:.2f}%"


def _section_text(name: str, cm: ConfusionMatrix, m: ClassMetrics) -> str:
    width = max(len(n) for n in CLASS_NAMES) + 2
    lines = [f"== {name} =="]
    header = " " * width + "".join(f"{n:>{width}}" for n in CLASS_NAMES)
    lines.append(header + "   (predicted)")
    for i, row_name in enumerate(CLASS_NAMES):
        cells = "".join(f"{cm.counts[i, j]:>{width}}" for j in range(len(CLASS_NAMES)))
        lines.append(f"{row_name:>{width}}" + cells)
    lines.append(f"accuracy: {_pct(m.accuracy)}")
    for i, n in enumerate(CLASS_NAMES):
        lines.append(
            f"{n:>{width}}  recall {_pct(m.recall[i])}  "
            f"precision {_pct(m.precision[i])}  f1 {_pct(m.f1[i])}")
    return "\n".join(lines)


def render_report(sections: dict[str, tuple[ConfusionMatrix, ClassMetrics]],
                  metadata: dict | None = None) -> tuple[str, str]:
    """Produce the JSON and plain-text forms of an evaluation report.

    ``sections`` maps a section name ("validation", "test", ...) to its
    matrix and metrics; field order is fixed so identical inputs render
    byte-identical reports.
    """
    doc = {
        "version": REPORT_FORMAT_VERSION,
        "classes": CLASS_NAMES,
        "metadata": metadata or {},
        "sections": {name: _section_dict(cm, m)
                     for name, (cm, m) in sections.items()},
    }
    json_text = json.dumps(doc, indent=2, sort_keys=False) + "\n"
    text = "\n\n".join(_section_text(name, cm, m)
                       for name, (cm, m) in sections.items()) + "\n"
    return json_text, text
