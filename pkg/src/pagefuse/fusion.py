"""Page-level fusion of two systems: convex interpolation with a tuned
coefficient, and log-linear (multiclass logistic regression) fusion
regularized toward plain averaging."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ClassProbs, EmptyInput, LabelSet, PageFuseError, ShapeMismatch
from .eval import interval_distance
from .losses import _softmax_rows, class_loss_grad_batch, ClassLossKind

DEFAULT_LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)


class AlphaOutOfRange(PageFuseError):
    pass


class TooFewExamples(PageFuseError):
    pass


@dataclass(frozen=True)
class LinearFusion:
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise AlphaOutOfRange(f"alpha {self.alpha} outside [0, 1]")

    def __call__(self, y1, y2):
        return fuse_linear(y1, y2, self.alpha)


@dataclass(frozen=True)
class LogLinearFusion:
    W: np.ndarray
    b: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64)
        b = np.array(self.b, dtype=np.float64).ravel()
        C = b.size
        if W.shape != (C, 2 * C):
            raise ShapeMismatch(f"W has shape {W.shape}, expected ({C}, {2 * C})")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise PageFuseError("non-finite fusion parameters")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def num_classes(self) -> int:
        return self.b.size

    @classmethod
    def averaging(cls, num_classes: int, lam: float = 0.0) -> "LogLinearFusion":
        return cls(averaging_weights(num_classes), np.zeros(num_classes), lam)

    def __call__(self, y1, y2) -> ClassProbs:
        return fuse_loglinear(self, y1, y2)


def averaging_weights(num_classes: int) -> np.ndarray:
    """``[I | I]``: each class logit is the sum of both systems' probabilities."""
    eye = np.eye(num_classes)
    return np.hstack([eye, eye])


def fuse_linear(y1, y2, alpha: float):
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha {alpha} outside [0, 1]")
    if np.ndim(y1) == 0 and np.ndim(y2) == 0:
        return alpha * float(y1) + (1.0 - alpha) * float(y2)
    a1 = np.asarray(y1, dtype=np.float64)
    a2 = np.asarray(y2, dtype=np.float64)
    if a1.shape != a2.shape:
        raise ShapeMismatch(f"cannot fuse shapes {a1.shape} and {a2.shape}")
    if alpha == 1.0:
        return ClassProbs(a1)
    if alpha == 0.0:
        return ClassProbs(a2)
    return ClassProbs(alpha * a1 + (1.0 - alpha) * a2)


def alpha_grid(step: float = 0.01) -> np.ndarray:
    steps = int(round(1.0 / step))
    if steps < 1 or not math.isclose(steps * step, 1.0, rel_tol=1e-9):
        raise PageFuseError(f"grid step {step} does not divide [0, 1]")
    return np.arange(steps + 1) / steps


def tune_alpha(pairs: Sequence[tuple], task: str = "classify", grid_step: float = 0.01) -> float:
    """Pick the interpolation coefficient with the lowest validation error.

    ``pairs`` holds ``(y1, y2, label)``. Ties prefer the alpha closest to 0.5,
    then the smaller alpha.
    """
    if not pairs:
        raise EmptyInput("no validation pairs")
    grid = alpha_grid(grid_step)
    errors = []
    if task == "date":
        y1 = np.array([float(p[0]) for p in pairs])
        y2 = np.array([float(p[1]) for p in pairs])
        ivs = [p[2] for p in pairs]
        for a in grid:
            fused = a * y1 + (1.0 - a) * y2
            errors.append(math.fsum(interval_distance(y, iv) for y, iv in zip(fused, ivs)) / len(ivs))
    else:
        P1 = np.stack([np.asarray(p[0], dtype=np.float64) for p in pairs])
        P2 = np.stack([np.asarray(p[1], dtype=np.float64) for p in pairs])
        if P1.shape != P2.shape:
            raise ShapeMismatch("the two systems disagree on the class count")
        mask = _label_mask([p[2] for p in pairs], P1.shape[1])
        rows = np.arange(len(pairs))
        for a in grid:
            pred = np.argmax(a * P1 + (1.0 - a) * P2, axis=1)
            errors.append(1.0 - int(mask[rows, pred].sum()) / len(pairs))
    best = min(range(len(grid)), key=lambda i: (errors[i], abs(grid[i] - 0.5), grid[i]))
    return float(grid[best])


def fuse_loglinear(model: LogLinearFusion, y1, y2) -> ClassProbs:
    a1 = np.asarray(y1, dtype=np.float64).ravel()
    a2 = np.asarray(y2, dtype=np.float64).ravel()
    C = model.num_classes
    if a1.size != C or a2.size != C:
        raise ShapeMismatch(f"fusion expects {C} classes, got {a1.size} and {a2.size}")
    z = model.W @ np.concatenate([a1, a2]) + model.b
    return ClassProbs(_softmax_rows(z[None, :])[0])


def _label_mask(labels: Sequence[LabelSet], C: int) -> np.ndarray:
    mask = np.zeros((len(labels), C), dtype=bool)
    for i, lab in enumerate(labels):
        lab.check(C)
        mask[i, list(lab.classes)] = True
    return mask


def _stack_pairs(pairs) -> tuple[np.ndarray, np.ndarray]:
    if not pairs:
        raise EmptyInput("no training pairs")
    P1 = np.stack([np.asarray(p[0], dtype=np.float64).ravel() for p in pairs])
    P2 = np.stack([np.asarray(p[1], dtype=np.float64).ravel() for p in pairs])
    if P1.shape != P2.shape:
        raise ShapeMismatch("the two systems disagree on the class count")
    C = P1.shape[1]
    if C < 2:
        raise PageFuseError("log-linear fusion needs at least two classes")
    return np.hstack([P1, P2]), _label_mask([p[2] for p in pairs], C)


def loglinear_objective(W, b, U, mask, lam) -> tuple[float, np.ndarray, np.ndarray]:
    """Summed L_hard plus ``lam * (||W - [I|I]||^2 + ||b||^2)`` and its gradient."""
    C = b.size
    losses, g, _ = class_loss_grad_batch(ClassLossKind.HARD, U @ W.T + b, mask)
    D = W - averaging_weights(C)
    value = math.fsum(losses) + lam * (float(np.sum(D * D)) + float(b @ b))
    return value, g.T @ U + 2.0 * lam * D, g.sum(axis=0) + 2.0 * lam * b


def train_loglinear(
    pairs: Sequence[tuple], lam: float, tol: float = 1e-6, max_steps: int = 10_000
) -> LogLinearFusion:
    """Full-batch gradient descent from ``([I|I], 0)`` with Armijo backtracking."""
    if lam < 0:
        raise PageFuseError("lambda must be non-negative")
    U, mask = _stack_pairs(pairs)
    C = mask.shape[1]
    W, b = averaging_weights(C), np.zeros(C)
    value, gW, gb = loglinear_objective(W, b, U, mask, lam)
    step = 1.0 / (0.5 * float(np.sum(U * U) + len(U)) + 2.0 * lam)
    for _ in range(max_steps):
        gnorm2 = float(np.sum(gW * gW) + gb @ gb)
        if math.sqrt(gnorm2) < tol:
            break
        while True:
            W_new, b_new = W - step * gW, b - step * gb
            new_value, new_gW, new_gb = loglinear_objective(W_new, b_new, U, mask, lam)
            if new_value <= value - 0.5 * step * gnorm2:
                break
            step *= 0.5
            if step < 1e-300:
                return LogLinearFusion(W, b, lam)
        W, b, value, gW, gb = W_new, b_new, new_value, new_gW, new_gb
        step *= 2.0
    return LogLinearFusion(W, b, lam)


def fold_indices(n: int, folds: int, seed: int = 0) -> list[np.ndarray]:
    """Shuffled, near-equal folds; sizes differ by at most one."""
    if folds < 2:
        raise PageFuseError("need at least two folds")
    if n < folds:
        raise TooFewExamples(f"{n} examples cannot fill {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def fusion_error(model: LogLinearFusion, pairs: Sequence[tuple]) -> float:
    U, mask = _stack_pairs(pairs)
    pred = np.argmax(U @ model.W.T + model.b, axis=1)
    return 1.0 - int(mask[np.arange(len(U)), pred].sum()) / len(U)


@dataclass(frozen=True)
class CrossValResult:
    lam: float
    model: LogLinearFusion
    cv_error: float
    errors: dict[float, float]


def crossval_lambda(
    pairs: Sequence[tuple],
    folds: int = 10,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    seed: int = 0,
) -> CrossValResult:
    """Choose lambda by k-fold held-out error rate, then refit on all pairs.

    Equal errors prefer the larger lambda (closer to plain averaging).
    """
    if not lambda_grid:
        raise EmptyInput("empty lambda grid")
    parts = fold_indices(len(pairs), folds, seed)
    errors: dict[float, float] = {}
    for lam in lambda_grid:
        fold_errs = []
        for held in parts:
            held_set = set(held.tolist())
            train_pairs = [p for i, p in enumerate(pairs) if i not in held_set]
            test_pairs = [pairs[i] for i in held]
            fold_errs.append(fusion_error(train_loglinear(train_pairs, lam), test_pairs))
        errors[float(lam)] = math.fsum(fold_errs) / len(fold_errs)
    best = min(errors, key=lambda lam: (errors[lam], -lam))
    return CrossValResult(best, train_loglinear(pairs, best), errors[best], errors)
