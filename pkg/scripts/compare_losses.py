"""Compare training losses and textline aggregations on synthetic pages.

    python3 scripts/compare_losses.py --pages 500 --seed 0

Prints a classification table (loss x aggregation, page error %) and a dating
table (loss, MAE-to-interval in years) next to the Bayes oracle and the
constant mean-midpoint baseline.
"""

from __future__ import annotations

import argparse
import math

import numpy as np

from pagefuse.aggregate import PageScores, ScoredCutout, aggregate_page
from pagefuse.core import ClassProbs
from pagefuse.eval import TaskMetricReport, format_table, split_random
from pagefuse.model import TrainConfig, train
from pagefuse.synthgen import SynthConfig, generate, oracle_bayes_batch


def page_outputs(pages, outputs, task, method, min_length, **kw):
    res, i = [], 0
    for page in pages:
        scored = []
        for c in page.cutouts:
            out = ClassProbs(outputs[i]) if task == "classify" else float(outputs[i])
            scored.append(ScoredCutout(c.cutout_id, c.kind, out, length_px=c.length_px))
            i += 1
        res.append(aggregate_page(PageScores(page.page_id, tuple(scored)), task, method=method, min_length=min_length, **kw).output)
    return res


def classification(args):
    cfg = SynthConfig(
        pages=args.pages,
        mixed_label_fraction=args.mixed,
        cutouts_per_page=(2, 6),
        seed=args.seed,
    )
    pages = generate(cfg)
    tr, va = split_random(pages, max(1, len(pages) // 5), args.seed)
    X = np.stack([c.features for p in va for c in p.cutouts])
    labels = [p.label for p in va]
    ids = [p.page_id for p in va]
    reports = {}
    kw = {"num_classes": cfg.num_classes}
    for method in ("mean", "count", "probs"):
        bayes = page_outputs(va, oracle_bayes_batch(cfg, X), "classify", method, 64, **kw)
        reports[f"bayes/{method}"] = TaskMetricReport.build("font", ids, bayes, labels)
    for loss in ("hard", "soft"):
        model = train(tr, TrainConfig(loss=loss, iterations=args.iterations, seed=args.seed, min_length_px=64)).model
        probs = model.predict_batch(X)
        for method in ("mean", "count", "probs"):
            preds = page_outputs(va, probs, "classify", method, 64, **kw)
            reports[f"{loss}/{method}"] = TaskMetricReport.build("font", ids, preds, labels)
    print(format_table(reports))


def dating(args):
    pages = generate(SynthConfig(pages=args.pages, date_mode=True, seed=args.seed))
    tr, va = split_random(pages, max(1, len(pages) // 5), args.seed)
    labels = [p.label for p in va]
    ids = [p.page_id for p in va]
    const = math.fsum(p.label.midpoint for p in tr) / len(tr)
    reports = {"constant": TaskMetricReport.build("date", ids, [const] * len(va), labels)}
    X = np.stack([c.features for p in va for c in p.cutouts])
    for loss in ("mse_midpoint", "mae_midpoint", "eval_metric", "interval_huber"):
        model = train(tr, TrainConfig(loss=loss, iterations=args.iterations, seed=args.seed, min_length_px=128)).model
        preds = page_outputs(va, model.predict_batch(X), "date", "median", 128, fallback_year=model.year_offset)
        reports[loss] = TaskMetricReport.build("date", ids, preds, labels)
    print(format_table(reports))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--pages", type=int, default=500)
    parser.add_argument("--mixed", type=float, default=0.2)
    parser.add_argument("--iterations", type=int, default=3000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    print("classification (page error %)")
    classification(args)
    print("\ndating (MAE to interval)")
    dating(args)


if __name__ == "__main__":
    main()
