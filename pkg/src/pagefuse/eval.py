"""Task metrics, validation splits, and comparison tables."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import DateInterval, EmptyInput, LabelSet, PageFuseError, PageRecord

CLASS_TASKS = ("font", "script", "location")
TASKS = CLASS_TASKS + ("date",)


class LengthMismatch(PageFuseError):
    pass


class InsufficientPages(PageFuseError):
    pass


def _check_pair(preds, labels) -> None:
    if len(preds) != len(labels):
        raise LengthMismatch(f"{len(preds)} predictions for {len(labels)} labels")
    if len(preds) == 0:
        raise EmptyInput("nothing to evaluate")


def page_correct(pred, label: LabelSet) -> bool:
    return int(np.argmax(np.asarray(pred, dtype=np.float64))) in label


def interval_distance(y: float, iv: DateInterval) -> float:
    return max(0.0, iv.a - y, y - iv.b)


def accuracy(preds: Sequence, labels: Sequence[LabelSet]) -> float:
    """Fraction of pages whose argmax class is one of the page labels."""
    _check_pair(preds, labels)
    return sum(page_correct(p, t) for p, t in zip(preds, labels)) / len(preds)


def date_mae(preds: Sequence[float], labels: Sequence[DateInterval]) -> float:
    _check_pair(preds, labels)
    return math.fsum(interval_distance(float(y), iv) for y, iv in zip(preds, labels)) / len(preds)


def task_error(task: str, preds: Sequence, labels: Sequence) -> float:
    """Lower-is-better metric: error rate for classification, MAE for dating."""
    if task == "date":
        return date_mae(preds, labels)
    return 1.0 - accuracy(preds, labels)


@dataclass
class TaskMetricReport:
    """Per-page outcomes and the summary value derived from them.

    ``metric_value`` is accuracy for classification tasks and MAE in years for
    dating; ``per_page`` holds ``(page_id, correct)`` or ``(page_id, distance)``.
    """

    task: str
    metric_value: float
    per_page: list[tuple[str, bool | float]] = field(default_factory=list)

    @property
    def higher_is_better(self) -> bool:
        return self.task != "date"

    @classmethod
    def build(cls, task: str, page_ids: Sequence[str], preds: Sequence, labels: Sequence):
        _check_pair(preds, labels)
        if len(page_ids) != len(preds):
            raise LengthMismatch("page ids and predictions differ in length")
        if task not in TASKS:
            raise PageFuseError(f"unknown task {task!r}")
        if task == "date":
            rows = [(pid, interval_distance(float(y), iv)) for pid, y, iv in zip(page_ids, preds, labels)]
            value = math.fsum(d for _, d in rows) / len(rows)
        else:
            rows = [(pid, page_correct(p, t)) for pid, p, t in zip(page_ids, preds, labels)]
            value = sum(c for _, c in rows) / len(rows)
        return cls(task, value, rows)

    def recompute(self) -> float:
        if self.task == "date":
            return math.fsum(float(d) for _, d in self.per_page) / len(self.per_page)
        return sum(bool(c) for _, c in self.per_page) / len(self.per_page)

    def summary(self) -> dict:
        out = {"task": self.task, "pages": len(self.per_page), "metric_value": self.metric_value}
        if self.task == "date":
            out["mae_years"] = self.metric_value
        else:
            out["accuracy_percent"] = 100.0 * self.metric_value
            out["error_rate_percent"] = 100.0 * (1.0 - self.metric_value)
        return out

    def page_lines(self) -> list[str]:
        key = "distance" if self.task == "date" else "correct"
        return [json.dumps({"page_id": pid, key: v}) for pid, v in self.per_page]


def split_uniform_validation(
    pages: Sequence[PageRecord], per_class: int, seed: int = 0
) -> tuple[list[PageRecord], list[PageRecord]]:
    """Draw ``per_class`` single-label pages of every class for validation.

    Multi-label pages never enter the validation draw and stay in train.
    """
    pools: dict[int, list[int]] = {}
    for i, p in enumerate(pages):
        if not isinstance(p.label, LabelSet):
            raise PageFuseError("uniform validation split needs classification pages")
        for c in p.label.classes:
            pools.setdefault(c, [])
        if len(p.label) == 1:
            pools[next(iter(p.label.classes))].append(i)
    rng = np.random.default_rng(seed)
    chosen: set[int] = set()
    for c in sorted(pools):
        pool = pools[c]
        if len(pool) < per_class:
            raise InsufficientPages(
                f"class {c} has {len(pool)} single-label pages, {per_class} requested"
            )
        chosen.update(int(pool[j]) for j in rng.choice(len(pool), size=per_class, replace=False))
    train = [p for i, p in enumerate(pages) if i not in chosen]
    val = [p for i, p in enumerate(pages) if i in chosen]
    return train, val


def split_random(pages: Sequence[PageRecord], n: int, seed: int = 0):
    if not 0 <= n <= len(pages):
        raise InsufficientPages(f"cannot draw {n} validation pages from {len(pages)}")
    picked = set(np.random.default_rng(seed).choice(len(pages), size=n, replace=False).tolist())
    train = [p for i, p in enumerate(pages) if i not in picked]
    val = [p for i, p in enumerate(pages) if i in picked]
    return train, val


def compare_methods(results: Mapping[str, TaskMetricReport]) -> list[tuple[str, float]]:
    """Rank methods best first; equal metrics fall back to name order."""
    if not results:
        raise EmptyInput("no methods to compare")
    rows = sorted(results.items(), key=lambda kv: kv[0])
    rows.sort(key=lambda kv: -kv[1].metric_value if kv[1].higher_is_better else kv[1].metric_value)
    return [(name, rep.metric_value) for name, rep in rows]


def format_table(results: Mapping[str, TaskMetricReport]) -> str:
    """Plain-text table; classification rows show error rate in percent."""
    ranking = compare_methods(results)
    width = max(len("method"), *(len(n) for n, _ in ranking))
    task = next(iter(results.values())).task
    header = "MAE [years]" if task == "date" else "error [%]"
    lines = [f"{'method':<{width}}  {header:>11}"]
    for name, value in ranking:
        shown = value if task == "date" else 100.0 * (1.0 - value)
        lines.append(f"{name:<{width}}  {shown:>11.2f}")
    return "\n".join(lines)
