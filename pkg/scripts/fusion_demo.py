"""Fuse two synthetic systems of different strength, linearly and log-linearly.

    python3 scripts/fusion_demo.py --pages 400 --seed 0

System 1 sees well-separated features, system 2 noisier ones. Fusion weights
are fitted on a held-out half and reported on the other half.
"""

from __future__ import annotations

import argparse

import numpy as np

from pagefuse.eval import TaskMetricReport, format_table
from pagefuse.fusion import crossval_lambda, fuse_linear, fuse_loglinear, tune_alpha
from pagefuse.synthgen import SynthConfig, generate, oracle_bayes_batch


def page_posteriors(cfg, pages, extra_noise=0.0, rng=None):
    """Mean cutout posterior from the generating model, optionally on degraded features."""
    out = []
    for p in pages:
        X = np.stack([c.features for c in p.cutouts])
        if extra_noise:
            X = X + extra_noise * rng.standard_normal(X.shape)
        out.append(oracle_bayes_batch(cfg, X).mean(axis=0))
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--pages", type=int, default=400)
    parser.add_argument("--classes", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    strong = SynthConfig(num_classes=args.classes, pages=args.pages, cutouts_per_page=(1, 2), class_separation=1.5, seed=args.seed)
    # the weak system sees the same cutouts through independent extra noise
    extra = 1.5
    weak = SynthConfig(**{**strong.to_dict(), "noise_sigma": float(np.hypot(1.0, extra))})
    pages = generate(strong)
    y1 = page_posteriors(strong, pages)
    y2 = page_posteriors(weak, pages, extra, np.random.default_rng([args.seed, 2]))
    labels = [p.label for p in pages]
    half = len(pages) // 2
    fit = list(zip(y1[:half], y2[:half], labels[:half]))
    ids = [p.page_id for p in pages[half:]]
    test_labels = labels[half:]

    alpha = tune_alpha(fit)
    cv = crossval_lambda(fit, folds=10, seed=args.seed)
    reports = {
        "system 1": TaskMetricReport.build("font", ids, y1[half:], test_labels),
        "system 2": TaskMetricReport.build("font", ids, y2[half:], test_labels),
        f"linear a={alpha:.2f}": TaskMetricReport.build(
            "font", ids, [fuse_linear(a, b, alpha) for a, b in zip(y1[half:], y2[half:])], test_labels
        ),
        f"loglinear l={cv.lam:g}": TaskMetricReport.build(
            "font", ids, [fuse_loglinear(cv.model, a, b) for a, b in zip(y1[half:], y2[half:])], test_labels
        ),
    }
    print(format_table(reports))


if __name__ == "__main__":
    main()
