"""Macro-F1 scoring, per-task aggregation, and comparison report tables."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import data as dat
from .errors import EvaluationError

# Organizer baseline released with the shared task.
BASELINE_SCORES = {"A": 0.218, "B": 0.500, "C": 0.301}

PREDICTION_COLUMNS = ["id", "sentiment", "humor", "sarcasm", "offence", "motivation",
                      "humor_scale", "sarcasm_scale", "offence_scale"]


def macro_f1(y_true, y_pred, num_classes: int) -> float:
    """Unweighted mean of per-class F1 over all num_classes classes; 0/0 counts as 0."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError(f"shape mismatch: y_true {y_true.shape}, y_pred {y_pred.shape}")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} contains labels outside [0, {num_classes})")
    f1_sum = 0.0
    for c in range(num_classes):
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1_sum += 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return f1_sum / num_classes


@dataclass
class TaskScore:
    task: str                       # "A", "B" or "C"
    subtask_scores: dict[str, float] = field(default_factory=dict)

    @property
    def aggregate(self) -> float:
        return sum(self.subtask_scores.values()) / len(self.subtask_scores)


def task_score(task: str, predictions: Mapping[str, Mapping[str, int]],
               gold: Sequence[dat.MemeSample]) -> TaskScore:
    """Shared-task score: macro F1 per subtask, arithmetic mean across the task's subtasks.

    predictions maps subtask name -> {sample id -> predicted class}.
    """
    if task not in dat.TASK_GROUPS:
        raise EvaluationError(f"unknown task {task!r}; expected one of A, B, C")
    scores = {}
    for sub_name in dat.TASK_GROUPS[task]:
        if sub_name not in predictions:
            raise EvaluationError(f"missing predictions for subtask {sub_name!r}")
        preds = predictions[sub_name]
        missing = [s.id for s in gold if s.id not in preds]
        if missing:
            raise EvaluationError(
                f"subtask {sub_name!r}: no prediction for ids {missing[:5]}"
                + ("..." if len(missing) > 5 else "")
            )
        y_true = [dat.task_label(s, sub_name) for s in gold]
        y_pred = [preds[s.id] for s in gold]
        scores[sub_name] = macro_f1(y_true, y_pred, dat.SUBTASKS[sub_name].num_classes)
    return TaskScore(task=task, subtask_scores=scores)


# ---------------------------------------------------------------------------
# Prediction files
# ---------------------------------------------------------------------------

def write_predictions(path: "str | os.PathLike", ids: Sequence[str],
                      predictions: Mapping[str, Sequence[int]]) -> None:
    """Delimited prediction table; only the subtask columns present are written."""
    subtasks = [c for c in PREDICTION_COLUMNS[1:] if c in predictions]
    unknown = set(predictions) - set(subtasks)
    if unknown:
        raise EvaluationError(f"unknown prediction columns: {sorted(unknown)}")
    for name in subtasks:
        if len(predictions[name]) != len(ids):
            raise EvaluationError(f"column {name!r} has {len(predictions[name])} rows "
                                  f"for {len(ids)} ids")
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["id"] + subtasks)
        for i, sample_id in enumerate(ids):
            writer.writerow([sample_id] + [int(predictions[name][i]) for name in subtasks])


def load_predictions(path: "str | os.PathLike") -> tuple[list[str], dict[str, dict[str, int]]]:
    """Inverse of write_predictions: returns (ids, {subtask: {id: class}})."""
    if not os.path.isfile(path):
        raise EvaluationError(f"prediction file not found: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if not reader.fieldnames or reader.fieldnames[0] != "id":
            raise EvaluationError(f"{path}: first column must be 'id'")
        unknown = [c for c in reader.fieldnames[1:] if c not in PREDICTION_COLUMNS]
        if unknown:
            raise EvaluationError(f"{path}: unknown columns {unknown}")
        subtasks = reader.fieldnames[1:]
        ids = []
        table: dict[str, dict[str, int]] = {name: {} for name in subtasks}
        for row in reader:
            ids.append(row["id"])
            for name in subtasks:
                table[name][row["id"]] = int(row[name])
    return ids, table


# ---------------------------------------------------------------------------
# Report tables
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    model: str
    modality: str
    fusion: str                         # "-" when not applicable
    scores: dict[str, float]            # task group -> aggregate macro F1


def report_table(runs: Sequence[RunResult],
                 baseline: "Mapping[str, float] | None" = None) -> dict:
    """Comparison table over runs plus the baseline row, best score per column flagged.

    Returns {"rows": [...], "text": str}; every row carries a `best` set naming
    the task columns it wins (ties share the flag).
    """
    if baseline is None:
        baseline = BASELINE_SCORES
    table = [{"model": "Baseline", "modality": "-", "fusion": "-",
              "scores": dict(baseline)}]
    for run in runs:
        table.append({"model": run.model, "modality": run.modality,
                      "fusion": run.fusion, "scores": dict(run.scores)})
    best = {}
    for col in ("A", "B", "C"):
        values = [row["scores"][col] for row in table if col in row["scores"]]
        if values:
            best[col] = max(values)
    for row in table:
        row["best"] = sorted(col for col, v in row["scores"].items()
                             if col in best and v == best[col])

    headers = ["Model", "Modality", "Fusion", "Task A", "Task B", "Task C"]
    lines = []
    rendered = []
    for row in table:
        cells = [row["model"], row["modality"], row["fusion"]]
        for col in ("A", "B", "C"):
            if col in row["scores"]:
                mark = "*" if col in row["best"] else ""
                cells.append(f"{row['scores'][col]:.3f}{mark}")
            else:
                cells.append("-")
        rendered.append(cells)
    widths = [max(len(h), *(len(r[i]) for r in rendered)) for i, h in enumerate(headers)]
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)))
    lines.append("  ".join("-" * w for w in widths))
    for cells in rendered:
        lines.append("  ".join(cells[i].ljust(widths[i]) for i in range(len(cells))))
    lines.append("* best score in column")
    return {"rows": table, "text": "\n".join(lines) + "\n"}


def write_report(report: dict, out_prefix: "str | os.PathLike") -> None:
    """Emit a report as aligned text, delimited data, and JSON."""
    prefix = os.fspath(out_prefix)
    with open(prefix + ".txt", "w", encoding="utf-8") as f:
        f.write(report["text"])
    with open(prefix + ".csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["model", "modality", "fusion", "task_a", "task_b", "task_c", "best"])
        for row in report["rows"]:
            writer.writerow([
                row["model"], row["modality"], row["fusion"],
                *(row["scores"].get(c, "") for c in ("A", "B", "C")),
                " ".join(row["best"]),
            ])
    with open(prefix + ".json", "w", encoding="utf-8") as f:
        json.dump(report["rows"], f, indent=2, sort_keys=True)
        f.write("\n")
