"""Confusion matrix and segmentation metrics.

Per-class accuracy is reported as per-class recall, so mean accuracy is the
mean of recalls. A ratio with a zero denominator is undefined (NaN) and left
out of every mean; a class with support but no hits scores 0 and counts.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

UNDEFINED = float("nan")


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray  # (C, C), row = true class, column = predicted

    @property
    def num_classes(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def confusion(true_labels, predicted_labels, num_classes: int) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64).ravel()
    p = np.asarray(predicted_labels, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.size} true vs {p.size} predicted")
    if t.size == 0:
        raise ValueError("no labels to evaluate")
    for name, a in (("true", t), ("predicted", p)):
        if a.min() < 0 or a.max() >= num_classes:
            raise ValueError(f"{name} label id outside [0, {num_classes})")
    flat = np.bincount(t * num_classes + p, minlength=num_classes * num_classes)
    return ConfusionMatrix(flat.reshape(num_classes, num_classes))


def _ratio(num: int, den: int) -> float:
    return num / den if den else UNDEFINED


def defined_mean(values: Sequence[float]) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return math.fsum(vals) / len(vals) if vals else UNDEFINED


@dataclass(frozen=True)
class MetricsReport:
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    iou: tuple[float, ...]
    accuracy: tuple[float, ...]
    support: tuple[int, ...]
    overall_accuracy: float
    mean_accuracy: float
    mean_iou: float
    mean_precision: float
    mean_recall: float
    class_names: Optional[tuple[str, ...]] = None

    @property
    def num_classes(self) -> int:
        return len(self.support)

    def name(self, c: int) -> str:
        return self.class_names[c] if self.class_names else str(c)

    def same_as(self, other: "MetricsReport", tol: float = 0.0) -> bool:
        def close(a, b):
            if math.isnan(a) or math.isnan(b):
                return math.isnan(a) and math.isnan(b)
            return abs(a - b) <= tol
        seqs = ("precision", "recall", "iou", "accuracy")
        scalars = ("overall_accuracy", "mean_accuracy", "mean_iou", "mean_precision", "mean_recall")
        return (
            self.support == other.support
            and self.class_names == other.class_names
            and all(len(getattr(self, s)) == len(getattr(other, s)) for s in seqs)
            and all(close(a, b) for s in seqs for a, b in zip(getattr(self, s), getattr(other, s)))
            and all(close(getattr(self, s), getattr(other, s)) for s in scalars)
        )


def report(cm: ConfusionMatrix, class_names: Optional[Sequence[str]] = None) -> MetricsReport:
    counts = np.asarray(cm.counts, dtype=np.int64)
    total = int(counts.sum())
    if counts.size == 0 or total == 0:
        raise ValueError("empty confusion matrix")
    C = counts.shape[0]
    if class_names is not None and len(class_names) != C:
        raise ValueError(f"{len(class_names)} class names for {C} classes")
    tp = [int(counts[c, c]) for c in range(C)]
    fp = [int(counts[:, c].sum()) - tp[c] for c in range(C)]
    fn = [int(counts[c, :].sum()) - tp[c] for c in range(C)]
    precision = tuple(_ratio(tp[c], tp[c] + fp[c]) for c in range(C))
    recall = tuple(_ratio(tp[c], tp[c] + fn[c]) for c in range(C))
    iou = tuple(_ratio(tp[c], tp[c] + fp[c] + fn[c]) for c in range(C))
    return MetricsReport(
        precision=precision,
        recall=recall,
        iou=iou,
        accuracy=recall,
        support=tuple(tp[c] + fn[c] for c in range(C)),
        overall_accuracy=sum(tp) / total,
        mean_accuracy=defined_mean(recall),
        mean_iou=defined_mean(iou),
        mean_precision=defined_mean(precision),
        mean_recall=defined_mean(recall),
        class_names=tuple(class_names) if class_names is not None else None,
    )


# -- rendering ---------------------------------------------------------------

FORMATS = ("human_table", "json_lines", "csv")
_PER_CLASS = ("precision", "recall", "iou", "accuracy")
_SUMMARY = ("overall_accuracy", "mean_accuracy", "mean_iou", "mean_precision", "mean_recall")
_CSV_FIELDS = ("class", "name", "support") + _PER_CLASS


def _num(v: float):
    return None if math.isnan(v) else v


def _unnum(v) -> float:
    return UNDEFINED if v is None else float(v)


def render(rep: MetricsReport, fmt: str = "human_table") -> str:
    if fmt == "human_table":
        return _render_table(rep)
    if fmt == "json_lines":
        lines = []
        for c in range(rep.num_classes):
            row = {"type": "class", "class": c, "name": rep.name(c), "support": rep.support[c]}
            row.update({k: _num(getattr(rep, k)[c]) for k in _PER_CLASS})
            lines.append(json.dumps(row))
        summary = {"type": "summary", "named": rep.class_names is not None}
        summary.update({k: _num(getattr(rep, k)) for k in _SUMMARY})
        lines.append(json.dumps(summary))
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(_CSV_FIELDS + _SUMMARY[:1])
        for c in range(rep.num_classes):
            w.writerow([c, rep.name(c), rep.support[c]]
                       + [_csv(getattr(rep, k)[c]) for k in _PER_CLASS] + [""])
        # the means row carries mean precision/recall/IoU/accuracy in the class columns
        w.writerow(["mean", "named" if rep.class_names else "", sum(rep.support),
                    _csv(rep.mean_precision), _csv(rep.mean_recall), _csv(rep.mean_iou),
                    _csv(rep.mean_accuracy), _csv(rep.overall_accuracy)])
        return buf.getvalue()
    raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")


def _csv(v: float) -> str:
    return "" if math.isnan(v) else repr(v)


def _render_table(rep: MetricsReport) -> str:
    def cell(v):
        return "n/a" if math.isnan(v) else f"{v:.4f}"

    width = max([5] + [len(rep.name(c)) for c in range(rep.num_classes)])
    head = f"{'class':<{width}}  {'support':>9}  {'precision':>9}  {'recall':>9}  {'IoU':>9}  {'accuracy':>9}"
    lines = [head, "-" * len(head)]
    for c in range(rep.num_classes):
        lines.append(
            f"{rep.name(c):<{width}}  {rep.support[c]:>9d}  {cell(rep.precision[c]):>9}  "
            f"{cell(rep.recall[c]):>9}  {cell(rep.iou[c]):>9}  {cell(rep.accuracy[c]):>9}"
        )
    lines.append("-" * len(head))
    lines.append(
        f"{'mean':<{width}}  {sum(rep.support):>9d}  {cell(rep.mean_precision):>9}  "
        f"{cell(rep.mean_recall):>9}  {cell(rep.mean_iou):>9}  {cell(rep.mean_accuracy):>9}"
    )
    lines.append(f"overall accuracy: {cell(rep.overall_accuracy)}")
    lines.append(f"mean IoU:         {cell(rep.mean_iou)}")
    return "\n".join(lines) + "\n"


def parse_json_lines(text: str) -> MetricsReport:
    classes, summary = [], None
    for line in text.splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        if row["type"] == "class":
            classes.append(row)
        else:
            summary = row
    if summary is None:
        raise ValueError("json_lines report has no summary line")
    classes.sort(key=lambda r: r["class"])
    return MetricsReport(
        **{k: tuple(_unnum(r[k]) for r in classes) for k in _PER_CLASS},
        support=tuple(int(r["support"]) for r in classes),
        **{k: _unnum(summary[k]) for k in _SUMMARY},
        class_names=tuple(r["name"] for r in classes) if summary["named"] else None,
    )


def parse_csv(text: str) -> MetricsReport:
    rows = list(csv.DictReader(io.StringIO(text)))
    classes = [r for r in rows if r["class"] != "mean"]
    mean = next(r for r in rows if r["class"] == "mean")
    f = lambda s: UNDEFINED if s == "" else float(s)
    return MetricsReport(
        **{k: tuple(f(r[k]) for r in classes) for k in _PER_CLASS},
        support=tuple(int(r["support"]) for r in classes),
        overall_accuracy=f(mean["overall_accuracy"]),
        mean_accuracy=f(mean["accuracy"]),
        mean_iou=f(mean["iou"]),
        mean_precision=f(mean["precision"]),
        mean_recall=f(mean["recall"]),
        class_names=tuple(r["name"] for r in classes) if mean["name"] == "named" else None,
    )
