"""Weakly supervised classification losses, interval date-regression losses,
their analytic gradients, and a central-difference gradient checker.

The scalar functions operate on one cutout. The ``*_batch`` variants are the
vectorised forms used by the trainer; tests assert both agree.
"""

from __future__ import annotations

from enum import Enum
from typing import Callable

import numpy as np

from .core import (
    ClassProbs,
    DateInterval,
    IndexOutOfRange,
    InvalidInterval,
    LabelSet,
    NonFinite,
    PageFuseError,
)

PROB_FLOOR = 1e-12


class MultiLabelUnsupported(PageFuseError):
    pass


class ClassLossKind(str, Enum):
    CROSS_ENTROPY = "cross_entropy"
    HARD = "hard"
    SOFT = "soft"


class DateLossKind(str, Enum):
    MSE_MIDPOINT = "mse_midpoint"
    MAE_MIDPOINT = "mae_midpoint"
    EVAL_METRIC = "eval_metric"
    INTERVAL_HUBER = "interval_huber"


def softmax(logits) -> ClassProbs:
    z = np.asarray(logits, dtype=np.float64).ravel()
    if z.size == 0:
        raise IndexOutOfRange("softmax of an empty vector")
    if not np.all(np.isfinite(z)):
        raise NonFinite(f"non-finite logits {z.tolist()}")
    return ClassProbs(_softmax_rows(z[None, :])[0])


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _clamped_log(p):
    return np.log(np.clip(p, PROB_FLOOR, 1.0))


def _label_indices(T: LabelSet, num_classes: int) -> np.ndarray:
    T.check(num_classes)
    return np.array(T.sorted(), dtype=np.int64)


def loss_hard(f, T: LabelSet) -> float:
    """Cross entropy against the most probable page label."""
    p = np.asarray(f, dtype=np.float64)
    idx = _label_indices(T, len(p))
    return float(np.min(-_clamped_log(p[idx])))


def loss_soft(f, T: LabelSet) -> float:
    """Cross entropy against every page label, each weighted by its probability."""
    p = np.asarray(f, dtype=np.float64)
    idx = _label_indices(T, len(p))
    return float(np.sum(-_clamped_log(p[idx]) * p[idx]))


def _selected_label(p: np.ndarray, idx: np.ndarray) -> int:
    # idx is sorted, so argmax returns the lowest class index on ties
    return int(idx[np.argmax(p[idx])])


def loss_class_grad(kind: ClassLossKind, logits, T: LabelSet) -> tuple[float, np.ndarray]:
    kind = ClassLossKind(kind)
    f = softmax(logits).values
    idx = _label_indices(T, len(f))
    if kind is ClassLossKind.CROSS_ENTROPY and len(idx) > 1:
        raise MultiLabelUnsupported(f"cross entropy needs one label, got {T.sorted()}")
    if kind is ClassLossKind.SOFT:
        s = np.zeros_like(f)
        s[idx] = -(_clamped_log(f[idx]) + 1.0) * f[idx]
        grad = s - f * s.sum()
        return loss_soft(f, T), grad
    i_star = _selected_label(f, idx)
    grad = f.copy()
    grad[i_star] -= 1.0
    return float(-_clamped_log(f[i_star])), grad


def class_loss_grad_batch(
    kind: ClassLossKind, logits: np.ndarray, mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise losses and logit gradients for a batch.

    ``mask`` is a boolean [batch x classes] label-membership matrix. Returns
    ``(losses, grads, probs)``.
    """
    kind = ClassLossKind(kind)
    f = _softmax_rows(np.asarray(logits, dtype=np.float64))
    logf = _clamped_log(f)
    if kind is ClassLossKind.SOFT:
        s = np.where(mask, -(logf + 1.0) * f, 0.0)
        losses = np.where(mask, -logf * f, 0.0).sum(axis=1)
        grads = s - f * s.sum(axis=1, keepdims=True)
        return losses, grads, f
    if kind is ClassLossKind.CROSS_ENTROPY and np.any(mask.sum(axis=1) > 1):
        raise MultiLabelUnsupported("cross entropy batch contains a multi-label row")
    masked = np.where(mask, f, -np.inf)
    i_star = np.argmax(masked, axis=1)
    rows = np.arange(len(f))
    losses = -logf[rows, i_star]
    grads = f.copy()
    grads[rows, i_star] -= 1.0
    return losses, grads, f


def _check_interval(iv: DateInterval) -> tuple[float, float, float, float]:
    if not isinstance(iv, DateInterval):
        raise InvalidInterval(f"expected a DateInterval, got {iv!r}")
    m = (iv.a + iv.b) / 2.0
    return iv.a, iv.b, m, m - iv.a


def loss_date(kind: DateLossKind, y: float, iv: DateInterval) -> float:
    return loss_date_grad(kind, y, iv)[0]


def loss_date_grad(kind: DateLossKind, y: float, iv: DateInterval) -> tuple[float, float]:
    a, b, m, r = _check_interval(iv)
    loss, grad = date_loss_grad_batch(
        kind, np.array([float(y)]), np.array([a]), np.array([b])
    )
    return float(loss[0]), float(grad[0])


def date_loss_grad_batch(
    kind: DateLossKind, y: np.ndarray, a: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise date losses and derivatives with respect to the predicted year."""
    kind = DateLossKind(kind)
    y = np.asarray(y, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.any(a > b):
        raise InvalidInterval("interval start exceeds end")
    m = (a + b) / 2.0
    r = m - a
    d = y - m
    if kind is DateLossKind.MSE_MIDPOINT:
        return d * d, 2.0 * d
    if kind is DateLossKind.MAE_MIDPOINT:
        return np.abs(d), np.sign(d)
    if kind is DateLossKind.EVAL_METRIC:
        below, above = y < a, y > b
        loss = np.maximum(0.0, np.maximum(a - y, y - b))
        grad = np.where(below, -1.0, np.where(above, 1.0, 0.0))
        return loss, grad
    below, above = y <= a, y >= b
    point = r == 0.0
    safe_r = np.where(point, 1.0, r)
    inner = d * d / (2.0 * safe_r)
    loss = np.where(below, a - y + r / 2.0, np.where(above, y - b + r / 2.0, inner))
    grad = np.where(below, -1.0, np.where(above, 1.0, d / safe_r))
    # r == 0 degenerates to |y - a|
    loss = np.where(point, np.abs(y - a), loss)
    grad = np.where(point, np.sign(y - a), grad)
    return loss, grad


def grad_check(
    fn: Callable[[np.ndarray], float],
    grad_fn: Callable[[np.ndarray], np.ndarray],
    point,
    eps: float = 1e-6,
) -> float:
    """Max relative error between ``grad_fn`` and central differences of ``fn``.

    The error per coordinate is ``|g - n| / max(1, |g|, |n|)``.
    """
    if eps <= 0:
        raise PageFuseError("eps must be positive")
    x = np.array(point, dtype=np.float64).ravel()
    analytic = np.asarray(grad_fn(x.copy()), dtype=np.float64).ravel()
    if analytic.shape != x.shape:
        raise PageFuseError(f"gradient shape {analytic.shape} does not match point {x.shape}")
    worst = 0.0
    for k in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[k] += eps
        xm[k] -= eps
        fp, fm = float(fn(xp)), float(fn(xm))
        if not (np.isfinite(fp) and np.isfinite(fm) and np.isfinite(analytic[k])):
            raise NonFinite(f"non-finite evaluation at coordinate {k}")
        numeric = (fp - fm) / (2.0 * eps)
        err = abs(analytic[k] - numeric) / max(1.0, abs(analytic[k]), abs(numeric))
        worst = max(worst, err)
    return worst


def _random_class_point(rng, kind: ClassLossKind):
    """Random logits and label set away from argmax ties among the labels."""
    while True:
        C = int(rng.integers(2, 7))
        z = rng.normal(0.0, 2.0, size=C)
        if kind is ClassLossKind.CROSS_ENTROPY:
            T = LabelSet.of(int(rng.integers(C)))
        else:
            size = int(rng.integers(1, C + 1))
            T = LabelSet(frozenset(rng.choice(C, size=size, replace=False).tolist()))
        if kind is ClassLossKind.HARD and len(T) > 1:
            zt = np.sort(z[T.sorted()])
            if zt[-1] - zt[-2] < 1e-3:
                continue
        return z, T


def _random_date_point(rng):
    """Random year and interval with the year away from a, b and the midpoint."""
    while True:
        a = rng.uniform(1000.0, 1900.0)
        b = a + rng.uniform(1.0, 100.0)
        y = rng.uniform(a - 100.0, b + 100.0)
        m = (a + b) / 2.0
        if min(abs(y - a), abs(y - b), abs(y - m)) > 1e-3:
            return y, DateInterval(a, b)


def gradient_suite(
    kinds=None, trials: int = 100, seed: int = 0, eps: float = 1e-6, corrupt: float = 0.0
) -> dict[str, float]:
    """Max relative gradient error per loss over ``trials`` seeded random points.

    ``corrupt`` is added to every analytic gradient; it exists so tests can
    confirm the checker fires.
    """
    if kinds is None:
        kinds = list(ClassLossKind) + list(DateLossKind)
    rng = np.random.default_rng(seed)
    report = {}
    for kind in kinds:
        worst = 0.0
        for _ in range(trials):
            if isinstance(kind, ClassLossKind):
                z, T = _random_class_point(rng, kind)
                fn = lambda v, T=T: loss_class_grad(kind, v, T)[0]
                gfn = lambda v, T=T: loss_class_grad(kind, v, T)[1] + corrupt
                point = z
            else:
                y, iv = _random_date_point(rng)
                fn = lambda v, iv=iv: loss_date(kind, float(v[0]), iv)
                gfn = lambda v, iv=iv: np.array([loss_date_grad(kind, float(v[0]), iv)[1] + corrupt])
                point = np.array([y])
            worst = max(worst, grad_check(fn, gfn, point, eps))
        report[kind.value] = worst
    return report
