"""
Confusion matrices, imbalance-aware scores and STL/MTL comparison reports.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from tabulate import tabulate

from .errors import DimensionError, EvaluationError, LabelError

METRIC_COLUMNS = (
    ("accuracy", "Acc."),
    ("precision", "Pr."),
    ("recall", "Recall"),
    ("f1_macro", "F1(m)"),
    ("f1_weighted", "F1(w)"),
)


@dataclass
class ConfusionMatrix:
    "Rows are true classes, columns predicted classes."

    counts: np.ndarray
    label_names: tuple

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def to_frame(self):
        names = list(self.label_names)
        return pd.DataFrame(
            self.counts,
            index=pd.Index(names, name="true"),
            columns=pd.Index(names, name="predicted"),
        )

    def to_csv(self, path):
        self.to_frame().to_csv(path)


@dataclass
class ClassScores:
    label: str
    precision: float
    recall: float
    f1: float
    support: int
    false_positive_rate: float
    false_negative_rate: float
    precision_undefined: bool = False
    recall_undefined: bool = False


@dataclass
class EvalReport:
    task: str
    model: str
    confusion: ConfusionMatrix
    accuracy: float
    precision: float
    recall: float
    f1_macro: float
    f1_weighted: float
    per_class: list = field(default_factory=list)

    def metrics(self):
        return {key: getattr(self, key) for key, _ in METRIC_COLUMNS}

    def to_dict(self):
        rows, empty = normalized_rows(self.confusion)
        return {
            "task": self.task,
            "model": self.model,
            "metrics": self.metrics(),
            "per_class": [vars(scores).copy() for scores in self.per_class],
            "labels": list(self.confusion.label_names),
            "confusion": self.confusion.counts.tolist(),
            "normalized": rows.tolist(),
            "empty_rows": empty,
        }

    @classmethod
    def from_dict(cls, document):
        confusion = ConfusionMatrix(
            counts=np.asarray(document["confusion"], dtype=np.int64),
            label_names=tuple(document["labels"]),
        )
        return cls(
            task=document["task"],
            model=document["model"],
            confusion=confusion,
            per_class=[ClassScores(**row) for row in document["per_class"]],
            **document["metrics"],
        )

    def to_text(self):
        header = f"{self.model} / {self.task}"
        summary = tabulate(
            [[self.model] + [self.metrics()[key] for key, _ in METRIC_COLUMNS]],
            headers=["model"] + [title for _, title in METRIC_COLUMNS],
            tablefmt="simple",
            floatfmt=".4f",
        )
        per_class = tabulate(
            [
                [c.label, c.precision, c.recall, c.f1, c.support,
                 c.false_positive_rate, c.false_negative_rate]
                for c in self.per_class
            ],
            headers=["class", "precision", "recall", "f1", "support", "FPR", "FNR"],
            tablefmt="simple",
            floatfmt=".4f",
        )
        return "\n\n".join(
            [header, summary, per_class, render_confusion(self.confusion)]
        ) + "\n"

    def write(self, out_dir, stem=None):
        "Write ``<stem>.report.json``, ``.report.txt`` and ``.confusion.csv``."
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = stem or self.task.lower()
        paths = {
            "json": out_dir / f"{stem}.report.json",
            "text": out_dir / f"{stem}.report.txt",
            "csv": out_dir / f"{stem}.confusion.csv",
        }
        with open(paths["json"], "w", encoding="utf-8") as file:
            json.dump(self.to_dict(), file, indent=2)
        with open(paths["text"], "w", encoding="utf-8") as file:
            file.write(self.to_text())
        self.confusion.to_csv(paths["csv"])
        return paths


def confusion(y_true, y_pred, num_classes, label_names=None):
    y_true = np.asarray(y_true, dtype=np.int64).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=np.int64).reshape(-1)
    if y_true.shape != y_pred.shape:
        raise DimensionError(
            f"{y_true.size} true labels but {y_pred.size} predicted labels"
        )
    for kind, labels in (("true", y_true), ("predicted", y_pred)):
        bad = np.flatnonzero((labels < 0) | (labels >= num_classes))
        if bad.size:
            raise LabelError(
                f"{kind} label {int(labels[bad[0]])} at index {int(bad[0])} "
                f"is outside [0, {num_classes})"
            )
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    if label_names is None:
        label_names = [str(i) for i in range(num_classes)]
    return ConfusionMatrix(counts=counts, label_names=tuple(label_names))


def scores(cm, task="", model=""):
    """
    Accuracy, macro precision/recall/F1 and support-weighted F1.

    A zero denominator scores 0 and sets the matching ``*_undefined`` flag on
    the class; no NaN is ever produced.

    Raises
    ------
    EvaluationError
        If the matrix counts no examples.
    """
    counts = cm.counts.astype(np.float64)
    total = counts.sum()
    if total == 0:
        raise EvaluationError(f"cannot score an empty confusion matrix for task {task!r}")

    true_positive = np.diag(counts)
    predicted = counts.sum(axis=0)
    support = counts.sum(axis=1)
    false_positive = predicted - true_positive
    false_negative = support - true_positive
    true_negative = total - true_positive - false_positive - false_negative

    per_class = []
    for c, label in enumerate(cm.label_names):
        precision = true_positive[c] / predicted[c] if predicted[c] else 0.0
        recall = true_positive[c] / support[c] if support[c] else 0.0
        denominator = precision + recall
        f1 = 2 * precision * recall / denominator if denominator else 0.0
        negatives = false_positive[c] + true_negative[c]
        per_class.append(
            ClassScores(
                label=label,
                precision=float(precision),
                recall=float(recall),
                f1=float(f1),
                support=int(support[c]),
                false_positive_rate=float(false_positive[c] / negatives) if negatives else 0.0,
                false_negative_rate=float(false_negative[c] / support[c]) if support[c] else 0.0,
                precision_undefined=not predicted[c],
                recall_undefined=not support[c],
            )
        )

    f1s = np.array([c.f1 for c in per_class])
    return EvalReport(
        task=task,
        model=model,
        confusion=cm,
        accuracy=float(true_positive.sum() / total),
        precision=float(np.mean([c.precision for c in per_class])),
        recall=float(np.mean([c.recall for c in per_class])),
        f1_macro=float(f1s.mean()),
        f1_weighted=float((support / total * f1s).sum()),
        per_class=per_class,
    )


def normalized_rows(cm):
    """
    Row-normalised confusion matrix.

    Returns
    -------
    rows : ndarray of float
        Each row sums to 1, or is all zeros for a class with no examples.
    empty : list of bool
        True where the row had no examples.
    """
    counts = cm.counts.astype(np.float64)
    support = counts.sum(axis=1, keepdims=True)
    empty = (support[:, 0] == 0).tolist()
    rows = np.divide(counts, support, out=np.zeros_like(counts), where=support > 0)
    return rows, empty


def render_confusion(cm, normalized=True):
    if normalized:
        rows, _ = normalized_rows(cm)
        cells = [[f"{100 * value:.2f}%" for value in row] for row in rows]
    else:
        cells = cm.counts.tolist()
    body = [[label] + list(row) for label, row in zip(cm.label_names, cells)]
    return tabulate(body, headers=["true \\ predicted"] + list(cm.label_names), tablefmt="simple")


def comparison_report(reports):
    """
    Collect (model label, EvalReport) pairs into one comparison document.

    The document holds one row per model and task with the metric columns in
    the fixed order Acc., Pr., Recall, F1(m), F1(w), plus each model's
    row-normalised confusion matrix and per-class error rates.
    """
    reports = list(reports)
    if not reports:
        raise EvaluationError("comparison needs at least one report")
    rows = []
    matrices = []
    for label, report in reports:
        row = {"model": label, "task": report.task}
        row.update({title: report.metrics()[key] for key, title in METRIC_COLUMNS})
        rows.append(row)
        normalized, _ = normalized_rows(report.confusion)
        matrices.append(
            {
                "model": label,
                "task": report.task,
                "labels": list(report.confusion.label_names),
                "normalized": normalized.tolist(),
                "false_positive_rate": {
                    c.label: c.false_positive_rate for c in report.per_class
                },
                "false_negative_rate": {
                    c.label: c.false_negative_rate for c in report.per_class
                },
            }
        )
    return {
        "columns": ["model", "task"] + [title for _, title in METRIC_COLUMNS],
        "rows": rows,
        "confusion": matrices,
    }


def comparison_frame(document):
    return pd.DataFrame(document["rows"], columns=document["columns"])


def render_comparison(document):
    "Aligned plain-text rendering: a pipe table followed by the matrices."
    table = tabulate(
        comparison_frame(document),
        headers="keys",
        tablefmt="pipe",
        floatfmt=".4f",
        showindex=False,
    )
    blocks = [table]
    for entry in document["confusion"]:
        rows = [
            [label] + [f"{100 * v:.2f}%" for v in row]
            for label, row in zip(entry["labels"], entry["normalized"])
        ]
        blocks.append(
            f"{entry['model']} / {entry['task']}\n"
            + tabulate(rows, headers=["true \\ predicted"] + entry["labels"])
        )
    return "\n\n".join(blocks) + "\n"


def parse_comparison_table(text):
    "Read the pipe table of :func:`render_comparison` back into row dicts."
    lines = [line for line in text.splitlines() if line.startswith("|")]
    header = [cell.strip() for cell in lines[0].strip("|").split("|")]
    rows = []
    for line in lines[2:]:
        cells = [cell.strip() for cell in line.strip("|").split("|")]
        row = dict(zip(header, cells))
        for _, title in METRIC_COLUMNS:
            row[title] = float(row[title])
        rows.append(row)
    return rows


def write_comparison(document, out_dir, stem="comparison"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{stem}.json"
    text_path = out_dir / f"{stem}.txt"
    with open(json_path, "w", encoding="utf-8") as file:
        json.dump(document, file, indent=2)
    with open(text_path, "w", encoding="utf-8") as file:
        file.write(render_comparison(document))
    return {"json": json_path, "text": text_path}


def load_report(path):
    with open(path, encoding="utf-8") as file:
        return EvalReport.from_dict(json.load(file))
