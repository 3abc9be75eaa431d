"""Confusion-matrix accumulation and precision/recall/f1 reporting.

Per-class metrics come from one-vs-rest reduction of a K x K counts matrix
indexed [true][pred]. In single-label multiclass, micro precision, micro
recall, and accuracy coincide exactly; that identity is load-bearing here
and is property-tested.
"""

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

AGGREGATION_MODES = ("micro", "macro", "weighted")


class ConfusionMatrix:
    def __init__(self, num_classes: int):
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def _check(self, label, what):
        label = int(label)
        if not 0 <= label < self.num_classes:
            raise ValueError(f"{what} {label} out of range [0, {self.num_classes})")
        return label

    def update(self, true_label, predicted_label):
        t = self._check(true_label, "true label")
        p = self._check(predicted_label, "predicted label")
        self.counts[t, p] += 1
        return self

    def update_many(self, true_labels, predicted_labels):
        t = np.asarray(true_labels, dtype=np.int64)
        p = np.asarray(predicted_labels, dtype=np.int64)
        if t.shape != p.shape:
            raise ValueError("label arrays must have equal length")
        if t.size and (t.min() < 0 or t.max() >= self.num_classes):
            raise ValueError("true label out of range")
        if p.size and (p.min() < 0 or p.max() >= self.num_classes):
            raise ValueError("predicted label out of range")
        np.add.at(self.counts, (t, p), 1)
        return self

    def merge(self, other: "ConfusionMatrix"):
        """Elementwise addition; shards evaluated in parallel merge this way."""
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge matrices of different sizes")
        self.counts += other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _safe_div(num, den):
    return num / den if den else 0.0


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean, 0 when both inputs are 0."""
    s = precision + recall
    return 2.0 * precision * recall / s if s else 0.0


def per_class(cm: ConfusionMatrix, k: int):
    """One-vs-rest (precision, recall, f1, support) for class k."""
    if not 0 <= k < cm.num_classes:
        raise ValueError(f"class index {k} out of range [0, {cm.num_classes})")
    tp = int(cm.counts[k, k])
    fp = int(cm.counts[:, k].sum()) - tp
    fn = int(cm.counts[k, :].sum()) - tp
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    return precision, recall, f1_score(precision, recall), tp + fn


def overall(cm: ConfusionMatrix, mode: str = "micro"):
    """(accuracy, precision, recall, f1) aggregated over all classes.

    micro pools counts (so precision == recall == accuracy); macro averages
    the per-class values unweighted; weighted averages them by support.
    """
    if mode not in AGGREGATION_MODES:
        raise ValueError(f"mode must be one of {AGGREGATION_MODES}, got {mode!r}")
    total = cm.total
    if total == 0:
        raise ValueError("confusion matrix is empty")
    accuracy = float(np.trace(cm.counts)) / total
    if mode == "micro":
        return accuracy, accuracy, accuracy, accuracy
    rows = [per_class(cm, k) for k in range(cm.num_classes)]
    if mode == "macro":
        w = [1.0 / cm.num_classes] * cm.num_classes
    else:
        w = [support / total for _, _, _, support in rows]
    agg = [sum(wk * row[i] for wk, row in zip(w, rows)) for i in range(3)]
    return accuracy, agg[0], agg[1], agg[2]


@dataclass
class MetricsReport:
    per_class: list  # of (class_name, precision, recall, f1, support)
    overall: tuple  # (accuracy, precision, recall, f1)
    aggregation_mode: str
    total: int = 0

    def rounded(self) -> "MetricsReport":
        """Copy with every metric quantized to the rendered 4-decimal form."""
        q = lambda v: float(_fmt(v))
        rows = [(n, q(p), q(r), q(f), s) for n, p, r, f, s in self.per_class]
        return MetricsReport(rows, tuple(q(v) for v in self.overall),
                             self.aggregation_mode, self.total)


def build_report(cm: ConfusionMatrix, class_names, mode: str = "weighted") -> MetricsReport:
    if len(class_names) != cm.num_classes:
        raise ValueError(f"{len(class_names)} class names for a "
                         f"{cm.num_classes}-class matrix")
    rows = [(str(name),) + per_class(cm, k) for k, name in enumerate(class_names)]
    return MetricsReport(rows, overall(cm, mode), mode, cm.total)


def _fmt(v) -> str:
    """Four decimal places, ties away from zero: 0.99025 -> '0.9903'."""
    return str(Decimal(repr(float(v))).quantize(Decimal("0.0001"), rounding=ROUND_HALF_UP))


OVERALL_KEY = "__overall__"


def render_report(report: MetricsReport, fmt: str = "csv", destination=None,
                  accuracy_column: bool = False) -> str:
    """Serialize a report; write to ``destination`` (path) when given.

    CSV: header ``class,precision,recall,f1,support``, one row per class,
    then a final ``__overall__`` row. ``accuracy_column`` switches to a
    layout with a leading per-class accuracy column; in one-vs-rest terms
    that column numerically duplicates precision, but some report layouts
    expect it anyway. JSON mirrors the same fields. All metrics print with
    4 decimals.
    """
    acc, prec, rec, f1 = report.overall
    if fmt == "csv":
        lines = []
        if accuracy_column:
            lines.append("class,accuracy,recall,precision,f1,support")
            for name, p, r, f, s in report.per_class:
                lines.append(f"{name},{_fmt(p)},{_fmt(r)},{_fmt(p)},{_fmt(f)},{s}")
            lines.append(f"{OVERALL_KEY},{_fmt(acc)},{_fmt(rec)},{_fmt(prec)},{_fmt(f1)},{report.total}")
        else:
            lines.append("class,precision,recall,f1,support")
            for name, p, r, f, s in report.per_class:
                lines.append(f"{name},{_fmt(p)},{_fmt(r)},{_fmt(f)},{s}")
            lines.append(f"{OVERALL_KEY},{_fmt(prec)},{_fmt(rec)},{_fmt(f1)},{report.total}")
        text = "\n".join(lines) + "\n"
    elif fmt == "json":
        doc = {
            "aggregation_mode": report.aggregation_mode,
            "per_class": [
                {"class": name, "precision": float(_fmt(p)), "recall": float(_fmt(r)),
                 "f1": float(_fmt(f)), "support": s}
                for name, p, r, f, s in report.per_class
            ],
            "overall": {"accuracy": float(_fmt(acc)), "precision": float(_fmt(prec)),
                        "recall": float(_fmt(rec)), "f1": float(_fmt(f1)),
                        "support": report.total},
        }
        text = json.dumps(doc, indent=2) + "\n"
    else:
        raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")
    if destination is not None:
        with open(destination, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text


def parse_report(text: str) -> MetricsReport:
    """Inverse of render_report(fmt='json') at rendered (4-decimal) precision."""
    doc = json.loads(text)
    rows = [(d["class"], d["precision"], d["recall"], d["f1"], d["support"])
            for d in doc["per_class"]]
    o = doc["overall"]
    return MetricsReport(rows, (o["accuracy"], o["precision"], o["recall"], o["f1"]),
                         doc["aggregation_mode"], o["support"])


def render_confusion(cm: ConfusionMatrix, class_names, destination=None) -> str:
    """CSV grid, one row per true class: ``class,<pred counts...>``."""
    if len(class_names) != cm.num_classes:
        raise ValueError("class name count does not match matrix size")
    lines = ["class," + ",".join(str(n) for n in class_names)]
    for k, name in enumerate(class_names):
        lines.append(f"{name}," + ",".join(str(int(c)) for c in cm.counts[k]))
    text = "\n".join(lines) + "\n"
    if destination is not None:
        with open(destination, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text
