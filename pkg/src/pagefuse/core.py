"""Domain types shared by every module: probability vectors, page labels,
cutout and page records, and the error hierarchy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Union

import numpy as np

PROB_TOL = 1e-9


class PageFuseError(ValueError):
    """Base class for all input/validation errors raised by the library."""


class NotNormalized(PageFuseError):
    pass


class OutOfRange(PageFuseError):
    pass


class NonFinite(PageFuseError):
    pass


class IndexOutOfRange(PageFuseError):
    pass


class InvalidInterval(PageFuseError):
    pass


class DimensionMismatch(PageFuseError):
    pass


class ShapeMismatch(PageFuseError):
    pass


class EmptyInput(PageFuseError):
    pass


class InvalidRecord(PageFuseError):
    pass


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ClassProbs:
    """A categorical distribution over the task classes."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        object.__setattr__(self, "values", _frozen(arr))

    def __len__(self) -> int:
        return len(self.values)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def argmax(self) -> int:
        return int(np.argmax(self.values))

    def tolist(self) -> list[float]:
        return [float(v) for v in self.values]


def validate_probs(values: Sequence[float]) -> ClassProbs:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptyInput("probability vector is empty")
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"non-finite probability in {arr.tolist()}")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise OutOfRange(f"probability outside [0, 1] in {arr.tolist()}")
    total = math.fsum(arr)
    if abs(total - 1.0) > PROB_TOL:
        raise NotNormalized(f"probabilities sum to {total!r}")
    return ClassProbs(arr)


@dataclass(frozen=True)
class LabelSet:
    classes: frozenset[int]

    def __post_init__(self):
        classes = frozenset(int(c) for c in self.classes)
        if not classes:
            raise EmptyInput("label set must be non-empty")
        if min(classes) < 0:
            raise IndexOutOfRange(f"negative class index in {sorted(classes)}")
        object.__setattr__(self, "classes", classes)

    @classmethod
    def of(cls, *classes: int) -> "LabelSet":
        return cls(frozenset(classes))

    def check(self, num_classes: int) -> None:
        if max(self.classes) >= num_classes:
            raise IndexOutOfRange(
                f"label {max(self.classes)} out of range for {num_classes} classes"
            )

    def sorted(self) -> list[int]:
        return sorted(self.classes)

    def __contains__(self, c) -> bool:
        return c in self.classes

    def __len__(self) -> int:
        return len(self.classes)


@dataclass(frozen=True)
class DateInterval:
    a: float
    b: float

    def __post_init__(self):
        a, b = float(self.a), float(self.b)
        if not (math.isfinite(a) and math.isfinite(b)):
            raise InvalidInterval(f"non-finite interval <{a}; {b}>")
        if a > b:
            raise InvalidInterval(f"interval start {a} exceeds end {b}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def midpoint(self) -> float:
        return (self.a + self.b) / 2.0

    @property
    def radius(self) -> float:
        return self.midpoint - self.a


def interval_midpoint_radius(iv: DateInterval) -> tuple[float, float]:
    m = (iv.a + iv.b) / 2.0
    return m, m - iv.a


PageLabel = Union[LabelSet, DateInterval]


class CutoutKind(str, Enum):
    PATCH = "patch"
    TEXTLINE = "textline"


@dataclass(frozen=True)
class CutoutRecord:
    """One patch or textline of a page.

    ``score`` holds a precomputed model output: a :class:`ClassProbs` for the
    classification tasks or a float year for dating.
    """

    page_id: str
    cutout_id: str
    kind: CutoutKind
    scale: int | None = None
    in_text_region: bool | None = None
    length_px: int | None = None
    features: np.ndarray | None = None
    score: ClassProbs | float | None = None

    def __post_init__(self):
        kind = CutoutKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is CutoutKind.PATCH:
            if self.scale is None or self.in_text_region is None:
                raise InvalidRecord(
                    f"patch {self.cutout_id!r} needs scale and in_text_region"
                )
            if not 1 <= int(self.scale) <= 4:
                raise InvalidRecord(f"patch {self.cutout_id!r}: scale {self.scale} not in 1..4")
        elif self.length_px is None:
            raise InvalidRecord(f"textline {self.cutout_id!r} needs length_px")
        elif int(self.length_px) < 0:
            raise InvalidRecord(f"textline {self.cutout_id!r}: negative length")
        if self.features is None and self.score is None:
            raise InvalidRecord(f"cutout {self.cutout_id!r} has neither features nor score")
        if self.features is not None:
            feats = np.array(self.features, dtype=np.float64).ravel()
            object.__setattr__(self, "features", _frozen(feats))


@dataclass(frozen=True)
class PageRecord:
    page_id: str
    label: PageLabel
    cutouts: tuple[CutoutRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        cutouts = tuple(self.cutouts)
        for c in cutouts:
            if c.page_id != self.page_id:
                raise InvalidRecord(
                    f"cutout {c.cutout_id!r} belongs to page {c.page_id!r}, not {self.page_id!r}"
                )
        object.__setattr__(self, "cutouts", cutouts)

    @property
    def is_date(self) -> bool:
        return isinstance(self.label, DateInterval)
