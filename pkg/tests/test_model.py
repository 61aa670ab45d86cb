import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pagefuse.core import CutoutRecord, DateInterval, DimensionMismatch, LabelSet, PageRecord
from pagefuse.eval import date_mae, split_random
from pagefuse.model import (
    Checkpoint,
    EmptyClass,
    EmptyTrainingSet,
    InsufficientCheckpoints,
    LinearModel,
    MissingCheckpoint,
    TrainConfig,
    average_checkpoints,
    class_weights,
    forward,
    select_checkpoints_patch,
    select_checkpoints_textline,
    train,
)
from pagefuse.synthgen import SynthConfig, generate


def pages_with_counts(counts):
    pages = []
    for c, n in enumerate(counts):
        cutouts = tuple(
            CutoutRecord(f"p{c}", f"p{c}-{i}", "textline", length_px=200, features=[0.0]) for i in range(n)
        )
        pages.append(PageRecord(f"p{c}", LabelSet.of(c), cutouts))
    return pages


def test_forward_examples():
    m = LinearModel.zeros("classify", 3, 4)
    np.testing.assert_allclose(forward(m, [1, 2, 3, 4]).values, [1 / 3] * 3)
    d = LinearModel.zeros("date", 1, 2, year_offset=1500.0, year_scale=100.0)
    assert forward(d, [7.0, -3.0]) == 1500.0
    m = LinearModel([[1, 0], [0, 0]], [0, 0])
    np.testing.assert_allclose(forward(m, [math.log(2), 0]).values, [2 / 3, 1 / 3], rtol=1e-15)
    with pytest.raises(DimensionMismatch):
        forward(m, [1.0, 2.0, 3.0])


@given(
    st.lists(st.floats(-3, 3), min_size=3, max_size=3),
    st.floats(-2, 2),
    st.floats(1000, 2000),
    st.floats(1, 300),
    st.floats(1000, 2000),
    st.floats(1, 300),
)
def test_forward_scale_consistent(w, b, o1, s1, o2, s2):
    x = np.array([0.3, -1.2, 2.0])
    m1 = LinearModel([w], [b], "date", o1, s1)
    w2 = np.array(w) * s1 / s2
    b2 = (o1 + s1 * b - o2) / s2
    m2 = LinearModel([w2], [b2], "date", o2, s2)
    assert abs(forward(m1, x) - forward(m2, x)) <= 1e-9 * max(1.0, abs(forward(m1, x)))


def test_class_weights_examples():
    np.testing.assert_allclose(class_weights(pages_with_counts([50, 50])), [1.0, 1.0])
    np.testing.assert_allclose(class_weights(pages_with_counts([75, 25])), [2 / 3, 2.0], rtol=1e-15)
    with pytest.raises(EmptyClass):
        class_weights(pages_with_counts([10]), num_classes=2)


def test_class_weights_per_sample_mean_is_one():
    w = class_weights(pages_with_counts([30, 50, 20]))
    counts = np.array([30, 50, 20])
    assert math.isclose(float((w * counts).sum() / counts.sum()), 1.0, rel_tol=1e-15)


def test_class_weights_count_multi_label_once_per_label():
    c = lambda pid, i: CutoutRecord(pid, f"{pid}-{i}", "textline", length_px=200, features=[0.0])
    pages = [
        PageRecord("a", LabelSet.of(0, 1), (c("a", 0), c("a", 1))),
        PageRecord("b", LabelSet.of(0), (c("b", 0), c("b", 1))),
    ]
    # N_0 = 4, N_1 = 2, N = 6
    np.testing.assert_allclose(class_weights(pages), [6 / 8, 6 / 4])


def test_train_rejects_zero_iterations():
    with pytest.raises(ValueError):
        TrainConfig(iterations=0)


def test_train_rejects_empty():
    with pytest.raises(EmptyTrainingSet):
        train([], TrainConfig(loss="cross_entropy"))
    with pytest.raises(EmptyTrainingSet):
        train(pages_with_counts([5, 5]), TrainConfig(loss="cross_entropy", min_length_px=1000))


def test_separable_training_accuracy():
    cfg = SynthConfig(pages=200, class_separation=6.0, noise_sigma=0.5, seed=3)
    pages = generate(cfg)
    res = train(pages, TrainConfig(loss="cross_entropy", iterations=2000, seed=0))
    X = np.stack([c.features for p in pages for c in p.cutouts])
    y = np.array([next(iter(p.label.classes)) for p in pages for _ in p.cutouts])
    acc = float((res.model.predict_batch(X).argmax(axis=1) == y).mean())
    assert acc >= 0.99


def test_training_loss_decreases():
    pages = generate(SynthConfig(pages=200, mixed_label_fraction=0.3, seed=1))
    for loss in ("hard", "soft"):
        res = train(pages, TrainConfig(loss=loss, iterations=1000, seed=0))
        losses = [l for _, l in res.history]
        assert all(math.isfinite(l) for l in losses)
        assert np.mean(losses[-3:]) < losses[0]


def test_date_training_beats_constant_predictor():
    pages = generate(SynthConfig(pages=300, date_mode=True, seed=2))
    tr, va = split_random(pages, 60, 0)
    res = train(tr, TrainConfig(loss="interval_huber", iterations=2000, seed=0))
    labels = [p.label for p in va]
    preds = [float(np.median(res.model.predict_batch(np.stack([c.features for c in p.cutouts])))) for p in va]
    const = float(np.mean([p.label.midpoint for p in tr]))
    assert date_mae(preds, labels) < date_mae([const] * len(va), labels)


def test_year_normalization_uses_midpoint_statistics():
    pages = generate(SynthConfig(pages=50, date_mode=True, seed=4))
    res = train(pages, TrainConfig(loss="mse_midpoint", iterations=5, seed=0))
    mids = np.array([p.label.midpoint for p in pages for _ in p.cutouts])
    assert res.model.year_offset == pytest.approx(mids.mean())
    assert res.model.year_scale == pytest.approx(max(1.0, mids.std()))


def test_training_is_bit_reproducible():
    pages = generate(SynthConfig(pages=60, mixed_label_fraction=0.2, seed=9))
    cfg = TrainConfig(loss="soft", iterations=300, seed=5, checkpoint_stride=50)
    a, b = train(pages, cfg), train(pages, cfg)
    assert len(a.checkpoints) == len(b.checkpoints) == 7
    for ca, cb in zip(a.checkpoints, b.checkpoints):
        assert ca.iteration == cb.iteration
        assert ca.parameters.tobytes() == cb.parameters.tobytes()


def test_checkpoints_recorded_on_stride_and_final():
    pages = generate(SynthConfig(pages=20, seed=0))
    res = train(pages, TrainConfig(loss="cross_entropy", iterations=250, checkpoint_stride=100))
    assert [c.iteration for c in res.checkpoints] == [0, 100, 200, 250]


def test_average_checkpoints_examples():
    base = LinearModel([[1.0, 2.0], [3.0, -4.0]], [0.5, -0.5])
    same = [Checkpoint(i, base) for i in range(5)]
    assert average_checkpoints(same).flat().tolist() == base.flat().tolist()
    neg = base.with_flat(-base.flat())
    assert np.all(average_checkpoints([Checkpoint(0, base), Checkpoint(1, neg)]).flat() == 0)
    d = [Checkpoint(i, LinearModel([[v]], [0.0], "date")) for i, v in enumerate([2.0, 4.0, 6.0])]
    assert average_checkpoints(d).weights.tolist() == [[4.0]]


def test_average_checkpoints_errors():
    with pytest.raises(ValueError):
        average_checkpoints([])
    a = Checkpoint(0, LinearModel.zeros("classify", 2, 1))
    b = Checkpoint(1, LinearModel.zeros("classify", 2, 3))
    with pytest.raises(ValueError):
        average_checkpoints([a, b])


@given(st.permutations(list(range(6))))
def test_average_checkpoints_permutation_invariant(order):
    rng = np.random.default_rng(0)
    base = LinearModel.zeros("classify", 3, 2)
    ckpts = [Checkpoint(i, base.with_flat(rng.normal(size=9))) for i in range(6)]
    ref = average_checkpoints(ckpts).flat()
    assert average_checkpoints([ckpts[i] for i in order]).flat().tobytes() == ref.tobytes()


def grid(last=100_000, stride=1000):
    base = LinearModel.zeros("classify", 2, 1)
    return [Checkpoint(it, base) for it in range(0, last + 1, stride)]


def test_select_checkpoints_patch():
    its = lambda cs: [c.iteration for c in cs]
    assert its(select_checkpoints_patch(grid(), 50_000)) == list(range(47_000, 53_001, 1000))
    assert its(select_checkpoints_patch(grid(), 1000)) == [0, 1000, 2000, 3000, 4000]
    assert its(select_checkpoints_patch(grid(), 0)) == [0, 1000, 2000, 3000]
    assert its(select_checkpoints_patch(grid(), 100_000)) == [97_000, 98_000, 99_000, 100_000]
    with pytest.raises(MissingCheckpoint):
        select_checkpoints_patch(grid(), 500)


def test_select_checkpoints_textline_argmin_and_ties():
    base = LinearModel.zeros("date", 1, 1)
    ckpts = [Checkpoint(i, base.with_flat([float(i), 0.0])) for i in range(10)]
    # error depends on the averaged weight; last N average = 9 - (N-1)/2
    target = 9 - (5 - 1) / 2
    chosen = select_checkpoints_textline(ckpts, lambda m: abs(m.weights[0, 0] - target))
    assert len(chosen) == 5
    assert [c.iteration for c in chosen] == [5, 6, 7, 8, 9]
    flat = select_checkpoints_textline(ckpts, lambda m: 1.0)
    assert len(flat) == 2
    with pytest.raises(InsufficientCheckpoints):
        select_checkpoints_textline(ckpts[:1], lambda m: 0.0)
