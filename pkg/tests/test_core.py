import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pagefuse.core import (
    ClassProbs,
    CutoutRecord,
    DateInterval,
    IndexOutOfRange,
    InvalidInterval,
    InvalidRecord,
    LabelSet,
    NotNormalized,
    OutOfRange,
    PageRecord,
    interval_midpoint_radius,
    validate_probs,
)


@pytest.mark.parametrize("values", [[0.5, 0.3, 0.2], [1.0, 0.0]])
def test_validate_probs_accepts(values):
    p = validate_probs(values)
    assert isinstance(p, ClassProbs)
    assert p.tolist() == values


def test_validate_probs_not_normalized():
    with pytest.raises(NotNormalized):
        validate_probs([0.5, 0.6])


def test_validate_probs_out_of_range():
    with pytest.raises(OutOfRange):
        validate_probs([1.5, -0.5])


def test_class_probs_is_immutable():
    p = validate_probs([0.5, 0.5])
    with pytest.raises(ValueError):
        p.values[0] = 1.0


@given(st.lists(st.floats(0.01, 100.0), min_size=1, max_size=12))
def test_normalized_vectors_validate(raw):
    arr = np.array(raw) / math.fsum(raw)
    p = validate_probs(arr)
    assert abs(math.fsum(p.values) - 1.0) <= 1e-9


@pytest.mark.parametrize(
    "a, b, m, r", [(1400, 1450, 1425, 25), (1500, 1500, 1500, 0), (0, 100, 50, 50)]
)
def test_midpoint_radius(a, b, m, r):
    assert interval_midpoint_radius(DateInterval(a, b)) == (m, r)


@given(st.floats(-5000, 5000), st.floats(0, 1000))
def test_interval_reconstructs(a, width):
    iv = DateInterval(a, a + width)
    m, r = interval_midpoint_radius(iv)
    assert r >= 0
    assert abs((m - r) - iv.a) <= 1e-12 * max(1.0, abs(iv.a))
    assert abs((m + r) - iv.b) <= 1e-12 * max(1.0, abs(iv.b))


def test_reversed_interval_rejected():
    with pytest.raises(InvalidInterval):
        DateInterval(1500, 1400)


def test_label_set_checks_range():
    with pytest.raises(IndexOutOfRange):
        LabelSet.of(0, 3).check(3)
    with pytest.raises(ValueError):
        LabelSet(frozenset())


def test_cutout_record_invariants():
    CutoutRecord("p", "c", "patch", scale=2, in_text_region=True, features=[1.0])
    CutoutRecord("p", "c", "textline", length_px=100, score=0.5)
    with pytest.raises(InvalidRecord):
        CutoutRecord("p", "c", "patch", features=[1.0])
    with pytest.raises(InvalidRecord):
        CutoutRecord("p", "c", "textline", features=[1.0])
    with pytest.raises(InvalidRecord):
        CutoutRecord("p", "c", "textline", length_px=10)


def test_page_record_rejects_foreign_cutouts():
    c = CutoutRecord("other", "c", "textline", length_px=10, score=0.0)
    with pytest.raises(InvalidRecord):
        PageRecord("p", LabelSet.of(0), (c,))
