import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pagefuse.core import CutoutKind, DateInterval, LabelSet
from pagefuse.synthgen import (
    InvalidConfig,
    SynthConfig,
    class_means,
    generate,
    normalize_year,
    oracle_bayes_batch,
    oracle_bayes_classify,
    year_direction,
)


def test_noise_free_features_sit_on_class_means():
    cfg = SynthConfig(pages=20, noise_sigma=0.0, num_classes=3, seed=2)
    means = class_means(cfg)
    for page in generate(cfg):
        (c,) = page.label.classes
        for cut in page.cutouts:
            np.testing.assert_array_equal(cut.features, means[c])


def test_means_are_orthogonal_with_requested_norm():
    means = class_means(SynthConfig(num_classes=4, feature_dim=6, class_separation=3.0))
    np.testing.assert_allclose(means @ means.T, 9.0 * np.eye(4), atol=1e-12)


def test_single_label_pages_without_mixing():
    pages = generate(SynthConfig(pages=100, mixed_label_fraction=0.0))
    assert all(isinstance(p.label, LabelSet) and len(p.label) == 1 for p in pages)


def test_mixed_pages_carry_two_distinct_labels():
    pages = generate(SynthConfig(pages=200, num_classes=4, mixed_label_fraction=1.0, seed=1))
    assert all(len(p.label) == 2 for p in pages)


def test_fixed_seed_is_bit_identical():
    cfg = SynthConfig(pages=30, mixed_label_fraction=0.3, seed=4)
    a, b = generate(cfg), generate(cfg)
    assert [p.label for p in a] == [p.label for p in b]
    for pa, pb in zip(a, b):
        for ca, cb in zip(pa.cutouts, pb.cutouts):
            assert ca.cutout_id == cb.cutout_id and ca.length_px == cb.length_px
            assert ca.features.tobytes() == cb.features.tobytes()
    other = generate(SynthConfig(pages=30, mixed_label_fraction=0.3, seed=5))
    assert any(pa.cutouts[0].features.tobytes() != pb.cutouts[0].features.tobytes() for pa, pb in zip(a, other))


def test_cutout_counts_and_lengths_within_ranges():
    cfg = SynthConfig(pages=50, cutouts_per_page=(2, 4), length_range=(100, 120))
    for p in generate(cfg):
        assert 2 <= len(p.cutouts) <= 4
        assert all(c.kind is CutoutKind.TEXTLINE and 100 <= c.length_px <= 120 for c in p.cutouts)


def test_patch_mode_scales_and_regions():
    pages = generate(SynthConfig(pages=200, cutout_kind="patch", text_region_fraction=0.6, seed=3))
    cuts = [c for p in pages for c in p.cutouts]
    assert all(c.kind is CutoutKind.PATCH and c.scale in (1, 2, 3, 4) for c in cuts)
    share = np.mean([c.in_text_region for c in cuts])
    assert abs(share - 0.6) < 0.05


def test_date_mode_intervals_contain_integer_true_year():
    cfg = SynthConfig(pages=100, date_mode=True, noise_sigma=0.0, seed=6)
    direction = year_direction(cfg)
    for p in generate(cfg):
        assert isinstance(p.label, DateInterval)
        a, b = p.label.a, p.label.b
        assert a == math.floor(a) and b == math.floor(b) and b - a <= 50
        # with zero noise the year is recoverable from the features
        t = float(p.cutouts[0].features @ direction / (direction @ direction))
        year = t * 200.0 + 1500.0
        assert a - 1e-6 <= year <= b + 1e-6


def test_noise_free_dates_are_linearly_exact():
    cfg = SynthConfig(pages=80, date_mode=True, noise_sigma=0.0, interval_halfwidth=(0, 0), seed=1)
    pages = generate(cfg)
    X = np.stack([c.features for p in pages for c in p.cutouts])
    y = np.array([p.label.a for p in pages for _ in p.cutouts])
    A = np.hstack([X, np.ones((len(X), 1))])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    assert np.max(np.abs(A @ coef - y)) < 1e-6


def test_normalize_year_maps_range_to_unit_interval():
    cfg = SynthConfig(date_mode=True)
    np.testing.assert_allclose(normalize_year(cfg, [1300, 1500, 1700]), [-1.0, 0.0, 1.0])


def test_oracle_posterior_examples():
    cfg = SynthConfig(num_classes=2, class_separation=4.0, noise_sigma=1.0)
    means = class_means(cfg)
    assert oracle_bayes_classify(cfg, means[0]).values[0] > 0.999
    mid = 0.5 * (means[0] + means[1])
    np.testing.assert_allclose(oracle_bayes_classify(cfg, mid).values, [0.5, 0.5], atol=1e-12)
    with pytest.raises(InvalidConfig):
        oracle_bayes_classify(SynthConfig(noise_sigma=0.0), means[0])


@given(st.lists(st.floats(-5, 5), min_size=8, max_size=8), st.integers(2, 5))
def test_oracle_posterior_is_a_distribution(x, C):
    cfg = SynthConfig(num_classes=C)
    post = oracle_bayes_batch(cfg, np.array([x]))[0]
    assert np.all(post >= 0) and abs(math.fsum(post) - 1.0) <= 1e-12


def test_oracle_matches_generative_likelihood_ratio():
    cfg = SynthConfig(num_classes=3, noise_sigma=1.5, seed=8)
    means = class_means(cfg)
    x = np.linspace(-1, 1, 8)
    loglik = np.array([-np.sum((x - m) ** 2) / (2 * 1.5**2) for m in means])
    expected = np.exp(loglik - loglik.max())
    np.testing.assert_allclose(oracle_bayes_batch(cfg, x[None])[0], expected / expected.sum(), rtol=1e-12)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"num_classes": 1},
        {"pages": 0},
        {"num_classes": 5, "feature_dim": 3},
        {"cutouts_per_page": (3, 2)},
        {"cutouts_per_page": (0, 2)},
        {"mixed_label_fraction": 1.5},
        {"noise_sigma": -1.0},
        {"year_range": (1500, 1400)},
        {"interval_halfwidth": (10, 5)},
        {"cutout_kind": "word"},
    ],
)
def test_invalid_configs(kwargs):
    with pytest.raises(InvalidConfig):
        SynthConfig(**kwargs)


def test_to_dict_round_trips():
    cfg = SynthConfig(pages=7, cutouts_per_page=(1, 3), seed=11)
    assert SynthConfig(**cfg.to_dict()) == cfg
