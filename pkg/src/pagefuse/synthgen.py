"""Deterministic synthetic pages standing in for CNN cutout features.

Classification features are drawn from isotropic Gaussians around orthogonal
class means, so the Bayes posterior is exactly a linear softmax and the
trained model's optimum is known. Dating features carry the normalised true
year along a fixed direction.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import (
    ClassProbs,
    CutoutKind,
    CutoutRecord,
    DateInterval,
    LabelSet,
    PageFuseError,
    PageRecord,
)
from .losses import _softmax_rows


class InvalidConfig(PageFuseError):
    pass


@dataclass
class SynthConfig:
    num_classes: int = 2
    feature_dim: int = 8
    pages: int = 100
    cutouts_per_page: tuple[int, int] = (6, 12)
    mixed_label_fraction: float = 0.0
    class_separation: float = 2.0
    noise_sigma: float = 1.0
    date_mode: bool = False
    year_range: tuple[float, float] = (1300.0, 1700.0)
    interval_halfwidth: tuple[float, float] = (0.0, 25.0)
    cutout_kind: str = "textline"
    length_range: tuple[int, int] = (32, 640)
    text_region_fraction: float = 0.6
    seed: int = 0

    def __post_init__(self):
        for name in ("cutouts_per_page", "year_range", "interval_halfwidth", "length_range"):
            setattr(self, name, tuple(getattr(self, name)))
        lo, hi = self.cutouts_per_page
        if self.num_classes < 2 or self.feature_dim < 1 or self.pages < 1:
            raise InvalidConfig("num_classes >= 2, feature_dim >= 1 and pages >= 1 required")
        if not self.date_mode and self.feature_dim < self.num_classes:
            raise InvalidConfig("feature_dim must be at least num_classes for orthogonal means")
        if not 1 <= lo <= hi:
            raise InvalidConfig(f"bad cutouts_per_page {self.cutouts_per_page}")
        if not 0.0 <= self.mixed_label_fraction <= 1.0:
            raise InvalidConfig("mixed_label_fraction must lie in [0, 1]")
        if self.noise_sigma < 0 or self.class_separation < 0:
            raise InvalidConfig("noise_sigma and class_separation must be non-negative")
        if not self.year_range[0] < self.year_range[1]:
            raise InvalidConfig(f"year_range {self.year_range} must satisfy lo < hi")
        if not 0 <= self.interval_halfwidth[0] <= self.interval_halfwidth[1]:
            raise InvalidConfig(f"bad interval_halfwidth {self.interval_halfwidth}")
        if not 0 <= self.length_range[0] <= self.length_range[1]:
            raise InvalidConfig(f"bad length_range {self.length_range}")
        if self.cutout_kind not in ("textline", "patch"):
            raise InvalidConfig(f"unknown cutout_kind {self.cutout_kind!r}")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def class_means(cfg: SynthConfig) -> np.ndarray:
    """[num_classes x feature_dim] orthogonal means of norm ``class_separation``."""
    rng = np.random.default_rng([cfg.seed, 0])
    q, _ = np.linalg.qr(rng.standard_normal((cfg.feature_dim, cfg.num_classes)))
    return cfg.class_separation * q.T


def year_direction(cfg: SynthConfig) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 0])
    v = rng.standard_normal(cfg.feature_dim)
    return cfg.class_separation * v / np.linalg.norm(v)


def normalize_year(cfg: SynthConfig, t):
    lo, hi = cfg.year_range
    return (np.asarray(t, dtype=np.float64) - (lo + hi) / 2.0) / ((hi - lo) / 2.0)


def _cutout_meta(cfg: SynthConfig, rng, j: int) -> dict:
    if cfg.cutout_kind == "patch":
        return {
            "kind": CutoutKind.PATCH,
            "scale": j % 4 + 1,
            "in_text_region": bool(rng.random() < cfg.text_region_fraction),
        }
    lo, hi = cfg.length_range
    return {"kind": CutoutKind.TEXTLINE, "length_px": int(rng.integers(lo, hi + 1))}


def generate(cfg: SynthConfig) -> list[PageRecord]:
    rng = np.random.default_rng([cfg.seed, 1])
    means = class_means(cfg)
    direction = year_direction(cfg)
    pages = []
    for i in range(cfg.pages):
        page_id = f"p{i:05d}"
        n = int(rng.integers(cfg.cutouts_per_page[0], cfg.cutouts_per_page[1] + 1))
        if cfg.date_mode:
            t = float(rng.integers(int(cfg.year_range[0]), int(cfg.year_range[1]) + 1))
            w1, w2 = (float(np.round(w)) for w in rng.uniform(*cfg.interval_halfwidth, size=2))
            label = DateInterval(t - w1, t + w2)
            centre = direction * normalize_year(cfg, t)
            source = [centre] * n
        else:
            c1 = int(rng.integers(cfg.num_classes))
            classes = [c1]
            if rng.random() < cfg.mixed_label_fraction:
                c2 = int(rng.integers(cfg.num_classes - 1))
                classes.append(c2 + (c2 >= c1))
            label = LabelSet(frozenset(classes))
            source = [means[classes[int(rng.integers(len(classes)))]] for _ in range(n)]
        cutouts = []
        for j, mu in enumerate(source):
            meta = _cutout_meta(cfg, rng, j)
            feats = mu + cfg.noise_sigma * rng.standard_normal(cfg.feature_dim)
            cutouts.append(CutoutRecord(page_id, f"{page_id}-c{j:03d}", features=feats, **meta))
        pages.append(PageRecord(page_id, label, tuple(cutouts)))
    return pages


def oracle_bayes_classify(cfg: SynthConfig, features) -> ClassProbs:
    """Exact posterior under the generating mixture with equal priors."""
    if cfg.date_mode or cfg.noise_sigma <= 0:
        raise InvalidConfig("the Bayes oracle needs a classification config with noise_sigma > 0")
    return ClassProbs(oracle_bayes_batch(cfg, np.asarray(features, dtype=np.float64)[None, :])[0])


def oracle_bayes_batch(cfg: SynthConfig, X: np.ndarray) -> np.ndarray:
    means = class_means(cfg)
    s2 = cfg.noise_sigma**2
    z = X @ means.T / s2 - 0.5 * np.sum(means * means, axis=1) / s2
    return _softmax_rows(z)
