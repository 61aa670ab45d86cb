"""Page-level aggregation of per-cutout outputs.

Patch pages use per-scale top-k averaging followed by a most-confident-scale
pick (P, R) or an average over all scale aggregates (P+R). Textline pages use
mean / count / probs for classification and mean / median for dating. Means
are accumulated with ``math.fsum`` so the result does not depend on cutout
order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .core import ClassProbs, CutoutKind, EmptyInput, PageFuseError, ShapeMismatch

DEFAULT_TOP_K = 10
MIN_LENGTH_CLASSIFY = 64
MIN_LENGTH_DATE = 128


class EmptyScale(EmptyInput):
    pass


class NoPatches(EmptyInput):
    pass


class NoLines(EmptyInput):
    pass


class PatchApproach(str, Enum):
    P = "P"
    R = "R"
    PplusR = "P+R"


class LineAggMethod(str, Enum):
    MEAN = "mean"
    COUNT = "count"
    PROBS = "probs"
    MEDIAN = "median"


CLASSIFY_METHODS = (LineAggMethod.MEAN, LineAggMethod.COUNT, LineAggMethod.PROBS)
DATE_METHODS = (LineAggMethod.MEAN, LineAggMethod.MEDIAN)


@dataclass(frozen=True)
class ScoredCutout:
    """A cutout's model output together with the metadata aggregation needs."""

    cutout_id: str
    kind: CutoutKind
    output: ClassProbs | float
    scale: int | None = None
    in_text_region: bool | None = None
    length_px: int | None = None


@dataclass(frozen=True)
class PageScores:
    page_id: str
    cutouts: tuple[ScoredCutout, ...] = field(default_factory=tuple)

    def patches(self) -> list[ScoredCutout]:
        return [c for c in self.cutouts if c.kind is CutoutKind.PATCH]

    def lines(self) -> list[ScoredCutout]:
        return [c for c in self.cutouts if c.kind is CutoutKind.TEXTLINE]


def _mean_rows(rows: Sequence[np.ndarray]) -> np.ndarray:
    stacked = np.asarray([np.asarray(r, dtype=np.float64) for r in rows])
    if stacked.ndim != 2:
        raise ShapeMismatch("probability vectors differ in length")
    n = len(stacked)
    return np.array([math.fsum(stacked[:, j]) / n for j in range(stacked.shape[1])])


def patch_scale_aggregate(
    patches: Sequence, k: int = DEFAULT_TOP_K, ids: Sequence[str] | None = None
) -> ClassProbs:
    """Average the ``k`` most confident patches of one scale.

    Confidence is the max class probability. Equal confidences are ordered by
    cutout id (``ids``), falling back to input order when ids are absent.
    """
    if len(patches) == 0:
        raise EmptyScale("no patches on this scale")
    if k < 1:
        raise PageFuseError("k must be at least 1")
    probs = [np.asarray(p, dtype=np.float64) for p in patches]
    keys = list(ids) if ids is not None else [""] * len(probs)
    order = sorted(range(len(probs)), key=lambda i: (-float(probs[i].max()), keys[i]))
    return ClassProbs(_mean_rows([probs[i] for i in order[:k]]))


def _scale_groups(patches: list[ScoredCutout]) -> dict[int, list[ScoredCutout]]:
    groups: dict[int, list[ScoredCutout]] = {}
    for p in patches:
        groups.setdefault(int(p.scale), []).append(p)
    return dict(sorted(groups.items()))


def _classify_scales(groups, k) -> list[np.ndarray]:
    return [
        patch_scale_aggregate([c.output for c in g], k, [c.cutout_id for c in g]).values
        for g in groups.values()
    ]


def _date_scales(groups) -> list[float]:
    return [math.fsum(float(c.output) for c in g) / len(g) for g in groups.values()]


def _most_confident(aggs: list[np.ndarray]) -> np.ndarray:
    # aggs are in ascending scale order; strict > keeps the lowest scale on ties
    best = aggs[0]
    for a in aggs[1:]:
        if a.max() > best.max():
            best = a
    return best


def patch_page_aggregate(
    page: PageScores,
    approach: PatchApproach = PatchApproach.P,
    task: str = "classify",
    k: int = DEFAULT_TOP_K,
) -> ClassProbs | float:
    approach = PatchApproach(approach)
    patches = page.patches()
    if not patches:
        raise NoPatches(f"page {page.page_id!r} has no patches")
    every = _scale_groups(patches)
    region = _scale_groups([p for p in patches if p.in_text_region])
    if approach is PatchApproach.R and not region:
        approach = PatchApproach.P

    if task == "date":
        if approach is PatchApproach.P:
            aggs = _date_scales(every)
        elif approach is PatchApproach.R:
            aggs = _date_scales(region)
        else:
            aggs = _date_scales(every) + _date_scales(region)
        return math.fsum(aggs) / len(aggs)

    if approach is PatchApproach.P:
        return ClassProbs(_most_confident(_classify_scales(every, k)))
    if approach is PatchApproach.R:
        return ClassProbs(_most_confident(_classify_scales(region, k)))
    return ClassProbs(_mean_rows(_classify_scales(every, k) + _classify_scales(region, k)))


def _surviving(lines, min_length: int):
    kept = [(out, length) for out, length in lines if length >= min_length]
    if not kept:
        raise NoLines(f"no textline reaches {min_length} px")
    return kept


def line_page_classify(
    lines: Sequence[tuple], method: LineAggMethod = LineAggMethod.MEAN, min_length: int = MIN_LENGTH_CLASSIFY
) -> ClassProbs:
    """Aggregate textline distributions into one page distribution.

    ``lines`` holds ``(probs, length_px)`` pairs; lines shorter than
    ``min_length`` are dropped. count and probs return normalised vote counts
    and normalised winning-probability mass respectively.
    """
    method = LineAggMethod(method)
    kept = [np.asarray(p, dtype=np.float64) for p, _ in _surviving(lines, min_length)]
    if method is LineAggMethod.MEAN:
        return ClassProbs(_mean_rows(kept))
    if method not in CLASSIFY_METHODS:
        raise PageFuseError(f"{method.value} is not a classification aggregation")
    num_classes = len(kept[0])
    bins: list[list[float]] = [[] for _ in range(num_classes)]
    for p in kept:
        c = int(np.argmax(p))
        bins[c].append(1.0 if method is LineAggMethod.COUNT else float(p[c]))
    total = math.fsum(v for b in bins for v in b)
    return ClassProbs(np.array([math.fsum(b) for b in bins]) / total)


def median(values: Sequence[float]) -> float:
    s = sorted(float(v) for v in values)
    n = len(s)
    if n == 0:
        raise EmptyInput("median of nothing")
    mid = n // 2
    return s[mid] if n % 2 else (s[mid - 1] + s[mid]) / 2.0


def line_page_date(
    lines: Sequence[tuple], method: LineAggMethod = LineAggMethod.MEDIAN, min_length: int = MIN_LENGTH_DATE
) -> float:
    method = LineAggMethod(method)
    years = [float(y) for y, _ in _surviving(lines, min_length)]
    if method is LineAggMethod.MEAN:
        return math.fsum(years) / len(years)
    if method is LineAggMethod.MEDIAN:
        return median(years)
    raise PageFuseError(f"{method.value} is not a dating aggregation")


@dataclass(frozen=True)
class PageOutput:
    page_id: str
    output: ClassProbs | float
    method: str
    fallback_used: bool = False


def aggregate_page(
    page: PageScores,
    task: str,
    *,
    approach: PatchApproach = PatchApproach.P,
    method: LineAggMethod | None = None,
    min_length: int | None = None,
    num_classes: int | None = None,
    fallback_year: float | None = None,
) -> PageOutput:
    """System-level aggregation for one page with the empty-page fallback.

    Pages with textlines go through the textline rules, pages with patches
    through the patch rules. When nothing survives, the page gets a uniform
    distribution (classification) or ``fallback_year`` (dating) and is flagged.
    """
    lines = page.lines()
    if lines or not page.patches():
        if method is None:
            method = LineAggMethod.MEDIAN if task == "date" else LineAggMethod.MEAN
        method = LineAggMethod(method)
        if min_length is None:
            min_length = MIN_LENGTH_DATE if task == "date" else MIN_LENGTH_CLASSIFY
        pairs = [(c.output, c.length_px) for c in lines]
        try:
            if task == "date":
                out = line_page_date(pairs, method, min_length)
            else:
                out = line_page_classify(pairs, method, min_length)
            return PageOutput(page.page_id, out, method.value)
        except NoLines:
            if task == "date":
                if fallback_year is None:
                    raise
                return PageOutput(page.page_id, float(fallback_year), method.value, True)
            if num_classes is None:
                if not lines:
                    raise
                num_classes = len(lines[0].output)
            uniform = ClassProbs(np.full(num_classes, 1.0 / num_classes))
            return PageOutput(page.page_id, uniform, method.value, True)
    approach = PatchApproach(approach)
    out = patch_page_aggregate(page, approach, task)
    return PageOutput(page.page_id, out, approach.value)
