"""Weakly supervised page classification and interval dating: losses,
cutout-to-page aggregation, and two-system fusion over a linear surrogate model."""

from .core import (
    ClassProbs,
    CutoutKind,
    CutoutRecord,
    DateInterval,
    LabelSet,
    PageFuseError,
    PageRecord,
    interval_midpoint_radius,
    validate_probs,
)
from .losses import (
    ClassLossKind,
    DateLossKind,
    grad_check,
    loss_class_grad,
    loss_date,
    loss_date_grad,
    loss_hard,
    loss_soft,
    softmax,
)

__version__ = "0.1.0"
