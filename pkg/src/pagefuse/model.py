"""Linear softmax classifier / linear year regressor over cutout features,
with a seeded mini-batch trainer and checkpoint averaging."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .core import (
    ClassProbs,
    CutoutKind,
    DateInterval,
    DimensionMismatch,
    EmptyInput,
    LabelSet,
    PageFuseError,
    PageRecord,
    ShapeMismatch,
)
from .losses import (
    ClassLossKind,
    DateLossKind,
    _softmax_rows,
    class_loss_grad_batch,
    date_loss_grad_batch,
)

log = logging.getLogger(__name__)


class EmptyClass(PageFuseError):
    pass


class EmptyTrainingSet(EmptyInput):
    pass


class MissingCheckpoint(PageFuseError):
    pass


class InsufficientCheckpoints(PageFuseError):
    pass


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    bias: np.ndarray
    task: str = "classify"
    year_offset: float = 0.0
    year_scale: float = 1.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, ndmin=2)
        b = np.array(self.bias, dtype=np.float64).ravel()
        if self.task not in ("classify", "date"):
            raise PageFuseError(f"unknown task {self.task!r}")
        if w.shape[0] != b.shape[0]:
            raise ShapeMismatch(f"weights {w.shape} and bias {b.shape} disagree")
        if self.task == "classify" and w.shape[0] < 2:
            raise PageFuseError("a classifier needs at least two classes")
        if self.task == "date" and w.shape[0] != 1:
            raise PageFuseError("a date regressor has one output")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise PageFuseError("non-finite model parameters")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @classmethod
    def zeros(cls, task: str, num_outputs: int, feature_dim: int, **kw) -> "LinearModel":
        return cls(np.zeros((num_outputs, feature_dim)), np.zeros(num_outputs), task, **kw)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])

    def with_flat(self, params: np.ndarray) -> "LinearModel":
        params = np.asarray(params, dtype=np.float64).ravel()
        n = self.weights.size
        if params.size != n + self.bias.size:
            raise ShapeMismatch(f"expected {n + self.bias.size} parameters, got {params.size}")
        return replace(self, weights=params[:n].reshape(self.weights.shape), bias=params[n:])

    def raw_outputs(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.feature_dim:
            raise DimensionMismatch(
                f"features have dimension {X.shape[1]}, model expects {self.feature_dim}"
            )
        return X @ self.weights.T + self.bias

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        """Rows of class probabilities, or a vector of years for the date task."""
        z = self.raw_outputs(X)
        if self.task == "classify":
            return _softmax_rows(z)
        return self.year_offset + self.year_scale * z[:, 0]


def forward(model: LinearModel, features) -> ClassProbs | float:
    out = model.predict_batch(np.asarray(features, dtype=np.float64).ravel())
    if model.task == "classify":
        return ClassProbs(out[0])
    return float(out[0])


@dataclass
class TrainConfig:
    loss: ClassLossKind | DateLossKind = ClassLossKind.SOFT
    learning_rate: float = 1e-3
    batch_size: int = 32
    iterations: int = 2000
    seed: int = 0
    class_weighting: bool = True
    min_length_px: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_stride: int = 100

    def __post_init__(self):
        try:
            self.loss = ClassLossKind(self.loss)
        except ValueError:
            self.loss = DateLossKind(self.loss)
        if not self.learning_rate > 0:
            raise PageFuseError("learning_rate must be positive")
        if self.batch_size < 1:
            raise PageFuseError("batch_size must be at least 1")
        if self.iterations < 1:
            raise PageFuseError("iterations must be at least 1")
        if self.checkpoint_stride < 1:
            raise PageFuseError("checkpoint_stride must be at least 1")
        if self.optimizer not in ("sgd", "adam"):
            raise PageFuseError(f"unknown optimizer {self.optimizer!r}")

    @property
    def task(self) -> str:
        return "date" if isinstance(self.loss, DateLossKind) else "classify"


@dataclass(frozen=True)
class Checkpoint:
    iteration: int
    model: LinearModel

    @property
    def parameters(self) -> np.ndarray:
        return self.model.flat()


@dataclass
class TrainResult:
    model: LinearModel
    checkpoints: list[Checkpoint]
    history: list[tuple[int, float]] = field(default_factory=list)


def _training_cutouts(pages: Sequence[PageRecord], min_length_px: int):
    """Cutouts that survive the textline length filter, with their page labels."""
    kept = []
    for page in pages:
        for c in page.cutouts:
            if c.kind is CutoutKind.TEXTLINE and c.length_px < min_length_px:
                continue
            kept.append((c, page.label))
    return kept


def _label_counts(pages: Sequence[PageRecord], num_classes: int, min_length_px: int = 0):
    counts = np.zeros(num_classes)
    for c, label in _training_cutouts(pages, min_length_px):
        for k in label.classes:
            counts[k] += 1
    return counts


def class_weights(
    pages: Sequence[PageRecord], num_classes: int | None = None, min_length_px: int = 0
) -> np.ndarray:
    """Inverse-frequency class weights ``N / (C * N_c)``.

    ``N_c`` counts cutouts whose page label set contains ``c`` and ``N`` is the
    sum of those counts, so the per-sample mean weight is exactly 1.
    """
    if num_classes is None:
        num_classes = 1 + max(max(p.label.classes) for p in pages)
    counts = _label_counts(pages, num_classes, min_length_px)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise EmptyClass(f"no training cutouts for class {int(empty[0])}")
    return counts.sum() / (num_classes * counts)


def _year_normalization(labels: Sequence[DateInterval]) -> tuple[float, float]:
    mids = np.array([iv.midpoint for iv in labels])
    return float(mids.mean()), max(1.0, float(mids.std()))


def train(
    pages: Sequence[PageRecord],
    cfg: TrainConfig,
    num_classes: int | None = None,
    on_checkpoint: Callable[[Checkpoint, float], None] | None = None,
) -> TrainResult:
    """Mini-batch training from zero initialisation.

    Batches are drawn uniformly with replacement from the surviving cutouts.
    A checkpoint is recorded at iteration 0, every ``checkpoint_stride``
    updates, and at the final iteration. ``on_checkpoint`` receives each
    checkpoint with the mean training loss since the previous one.
    """
    samples = _training_cutouts(pages, cfg.min_length_px)
    if not samples:
        raise EmptyTrainingSet("no training cutouts survive the length filter")
    for c, _ in samples:
        if c.features is None:
            raise DimensionMismatch(f"cutout {c.cutout_id!r} of page {c.page_id!r} has no features")
    dims = {c.features.size for c, _ in samples}
    if len(dims) > 1:
        raise DimensionMismatch(f"inconsistent feature dimensions {sorted(dims)}")
    X = np.stack([c.features for c, _ in samples])
    labels = [lab for _, lab in samples]
    task = cfg.task

    if task == "classify":
        if not all(isinstance(lab, LabelSet) for lab in labels):
            raise PageFuseError("classification training needs label sets")
        if num_classes is None:
            num_classes = 1 + max(max(lab.classes) for lab in labels)
        mask = np.zeros((len(labels), num_classes), dtype=bool)
        for i, lab in enumerate(labels):
            lab.check(num_classes)
            mask[i, list(lab.classes)] = True
        weights = (
            class_weights(pages, num_classes, cfg.min_length_px)
            if cfg.class_weighting
            else np.ones(num_classes)
        )
        model = LinearModel.zeros("classify", num_classes, X.shape[1])
    else:
        if not all(isinstance(lab, DateInterval) for lab in labels):
            raise PageFuseError("date training needs interval labels")
        lo = np.array([iv.a for iv in labels])
        hi = np.array([iv.b for iv in labels])
        offset, scale = _year_normalization(labels)
        model = LinearModel.zeros("date", 1, X.shape[1], year_offset=offset, year_scale=scale)

    rng = np.random.default_rng(cfg.seed)
    W = model.weights.copy()
    b = model.bias.copy()
    m_w, v_w = np.zeros_like(W), np.zeros_like(W)
    m_b, v_b = np.zeros_like(b), np.zeros_like(b)

    def snapshot(it: int) -> Checkpoint:
        return Checkpoint(it, replace(model, weights=W.copy(), bias=b.copy()))

    checkpoints = [snapshot(0)]
    history: list[tuple[int, float]] = []
    window: list[float] = []
    if on_checkpoint:
        on_checkpoint(checkpoints[0], math.nan)

    for it in range(1, cfg.iterations + 1):
        idx = rng.integers(0, len(X), size=cfg.batch_size)
        xb = X[idx]
        z = xb @ W.T + b
        if task == "classify":
            losses, g, f = class_loss_grad_batch(cfg.loss, z, mask[idx])
            if cfg.class_weighting:
                sw = _sample_weights(cfg.loss, f, mask[idx], weights)
                losses, g = losses * sw, g * sw[:, None]
        else:
            years = model.year_offset + model.year_scale * z[:, 0]
            losses, dy = date_loss_grad_batch(cfg.loss, years, lo[idx], hi[idx])
            g = (dy * model.year_scale)[:, None]
        g = g / cfg.batch_size
        gW = g.T @ xb
        gb = g.sum(axis=0)
        if cfg.optimizer == "adam":
            m_w = cfg.beta1 * m_w + (1 - cfg.beta1) * gW
            v_w = cfg.beta2 * v_w + (1 - cfg.beta2) * gW * gW
            m_b = cfg.beta1 * m_b + (1 - cfg.beta1) * gb
            v_b = cfg.beta2 * v_b + (1 - cfg.beta2) * gb * gb
            c1 = 1 - cfg.beta1**it
            c2 = 1 - cfg.beta2**it
            W -= cfg.learning_rate * (m_w / c1) / (np.sqrt(v_w / c2) + cfg.adam_eps)
            b -= cfg.learning_rate * (m_b / c1) / (np.sqrt(v_b / c2) + cfg.adam_eps)
        else:
            W -= cfg.learning_rate * gW
            b -= cfg.learning_rate * gb
        window.append(float(losses.mean()))
        if it % cfg.checkpoint_stride == 0 or it == cfg.iterations:
            avg = math.fsum(window) / len(window)
            if not math.isfinite(avg):
                raise PageFuseError(f"training diverged at iteration {it}")
            window.clear()
            history.append((it, avg))
            checkpoints.append(snapshot(it))
            if on_checkpoint:
                on_checkpoint(checkpoints[-1], avg)
            log.debug("iteration %d loss %.6f", it, avg)

    return TrainResult(checkpoints[-1].model, checkpoints, history)


def _sample_weights(kind, f: np.ndarray, mask: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-sample class weight; held constant in the gradient.

    Hard and cross entropy use the weight of the selected label, soft uses the
    probability-weighted mean of the label weights.
    """
    if ClassLossKind(kind) is ClassLossKind.SOFT:
        pf = np.where(mask, f, 0.0)
        denom = pf.sum(axis=1)
        mean_w = (pf * weights).sum(axis=1) / np.where(denom > 0, denom, 1.0)
        plain = (mask * weights).sum(axis=1) / mask.sum(axis=1)
        return np.where(denom > 0, mean_w, plain)
    i_star = np.argmax(np.where(mask, f, -np.inf), axis=1)
    return weights[i_star]


def average_checkpoints(ckpts: Sequence[Checkpoint]) -> LinearModel:
    if not ckpts:
        raise EmptyInput("no checkpoints to average")
    n = ckpts[0].parameters.size
    if any(c.parameters.size != n for c in ckpts):
        raise ShapeMismatch("checkpoints have different parameter counts")
    stacked = np.stack([c.parameters for c in ckpts])
    # shifting by the column minimum keeps identical snapshots exact
    low = stacked.min(axis=0)
    mean = np.array([lo + math.fsum(col - lo) / len(ckpts) for col, lo in zip(stacked.T, low)])
    return ckpts[0].model.with_flat(mean)


def select_checkpoints_patch(
    ckpts: Sequence[Checkpoint], best_iteration: int, stride: int = 1000, reach: int = 3
) -> list[Checkpoint]:
    """The best checkpoint plus those ``±stride .. ±reach*stride`` updates away."""
    by_it = {c.iteration: c for c in ckpts}
    if best_iteration not in by_it:
        raise MissingCheckpoint(f"no checkpoint at iteration {best_iteration}")
    wanted = [best_iteration + j * stride for j in range(-reach, reach + 1)]
    return [by_it[it] for it in wanted if it in by_it]


def select_checkpoints_textline(
    ckpts: Sequence[Checkpoint],
    validation_error: Callable[[LinearModel], float],
    n_range: range = range(2, 10),
) -> list[Checkpoint]:
    """Average the last N checkpoints for each N and keep the N with the lowest
    validation error (ties go to the smaller N)."""
    ordered = sorted(ckpts, key=lambda c: c.iteration)
    if len(ordered) < 2:
        raise InsufficientCheckpoints("need at least two checkpoints")
    best_n, best_err = None, math.inf
    for n in n_range:
        if n > len(ordered):
            break
        err = float(validation_error(average_checkpoints(ordered[-n:])))
        if err < best_err:
            best_n, best_err = n, err
    if best_n is None:
        raise InsufficientCheckpoints("no candidate N fits the recorded checkpoints")
    return ordered[-best_n:]
