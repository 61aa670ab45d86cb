"""Command-line entry point.

    pagefuse synth    --config synth.json --out DIR
    pagefuse train    --dataset pages.jsonl --out DIR [--config train.json]
    pagefuse predict  --dataset pages.jsonl --model model.json --out preds.jsonl
    pagefuse fuse     --preds1 A.jsonl --preds2 B.jsonl --labels pages.jsonl --mode linear --out DIR
    pagefuse evaluate --preds preds.jsonl --labels pages.jsonl --task font --out DIR
    pagefuse gradcheck [--loss huber ...] [--trials 100]

Exit codes: 0 success, 1 metric/gradient gate failure, 2 input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .aggregate import (
    LineAggMethod,
    PageScores,
    PatchApproach,
    ScoredCutout,
    aggregate_page,
)
from .core import ClassProbs, DateInterval, LabelSet, PageFuseError
from .eval import TaskMetricReport, format_table, split_random, task_error
from .fusion import (
    DEFAULT_LAMBDA_GRID,
    LinearFusion,
    crossval_lambda,
    fuse_linear,
    fuse_loglinear,
    tune_alpha,
)
from .losses import ClassLossKind, DateLossKind, gradient_suite
from .model import (
    LinearModel,
    TrainConfig,
    average_checkpoints,
    select_checkpoints_patch,
    select_checkpoints_textline,
    train,
)
from .synthgen import SynthConfig, generate

log = logging.getLogger("pagefuse")

EXIT_OK, EXIT_GATE, EXIT_INPUT = 0, 1, 2
GRAD_TOL = 1e-5

LOSS_NAMES = {
    "ce": ClassLossKind.CROSS_ENTROPY,
    "hard": ClassLossKind.HARD,
    "soft": ClassLossKind.SOFT,
    "mse": DateLossKind.MSE_MIDPOINT,
    "mae": DateLossKind.MAE_MIDPOINT,
    "eval": DateLossKind.EVAL_METRIC,
    "huber": DateLossKind.INTERVAL_HUBER,
}


class PageIdMismatch(PageFuseError):
    pass


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("PAGEFUSE_THREADS", "1")))
    except ValueError:
        return 1


def _parallel_map(fn, items):
    n = worker_count()
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _loss_kind(name: str):
    if name in LOSS_NAMES:
        return LOSS_NAMES[name]
    try:
        return ClassLossKind(name)
    except ValueError:
        return DateLossKind(name)


# ---------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    raw = io.load_json(args.config)
    try:
        cfg = SynthConfig(**raw)
    except TypeError as exc:
        raise PageFuseError(f"bad synth config {args.config}: {exc}") from exc
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pages = generate(cfg)
    n = io.write_dataset(out / "pages.jsonl", pages)
    _write_json(
        out / "manifest.json",
        {"format": io.FORMAT, "kind": "dataset", "pages": n, "generator": cfg.to_dict(), "seed": cfg.seed},
    )
    print(f"wrote {n} pages to {out / 'pages.jsonl'}")
    return EXIT_OK


# ---------------------------------------------------------------- shared scoring


def score_page(page, model: LinearModel | None) -> PageScores:
    """Run the model over a page's cutouts; precomputed scores are used as-is."""
    scored = []
    feats = [c for c in page.cutouts if c.features is not None and model is not None]
    outputs = {}
    if feats:
        preds = model.predict_batch(np.stack([c.features for c in feats]))
        for c, p in zip(feats, preds):
            outputs[c.cutout_id] = ClassProbs(p) if model.task == "classify" else float(p)
    for c in page.cutouts:
        if c.cutout_id in outputs:
            out = outputs[c.cutout_id]
        elif c.score is not None:
            out = c.score
        else:
            raise PageFuseError(f"cutout {c.cutout_id!r} of page {page.page_id!r} has no features")
        scored.append(ScoredCutout(c.cutout_id, c.kind, out, c.scale, c.in_text_region, c.length_px))
    return PageScores(page.page_id, tuple(scored))


def predict_pages(pages, model, task, approach, method, min_length, fallback_year=None):
    num_classes = model.num_classes if (model is not None and task != "date") else None

    def one(page):
        return aggregate_page(
            score_page(page, model),
            task,
            approach=approach,
            method=method,
            min_length=min_length,
            num_classes=num_classes,
            fallback_year=fallback_year,
        )

    return sorted(_parallel_map(one, pages), key=lambda o: o.page_id)


def prediction_record(out) -> dict:
    rec = {"page_id": out.page_id}
    if isinstance(out.output, ClassProbs):
        rec["probs"] = out.output.tolist()
    else:
        rec["year"] = float(out.output)
    rec["method"] = out.method
    rec["flags"] = {"fallback_used": out.fallback_used}
    return rec


# ---------------------------------------------------------------- train


def _train_config(args) -> tuple[TrainConfig, dict]:
    raw = io.load_json(args.config) if args.config else {}
    extra = {k: raw.pop(k) for k in ("approach", "agg", "eval_min_length", "average", "num_classes", "validation_pages") if k in raw}
    if args.loss:
        raw["loss"] = args.loss
    if "loss" in raw:
        raw["loss"] = _loss_kind(raw["loss"])
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.iterations is not None:
        raw["iterations"] = args.iterations
    if args.min_length is not None:
        raw["min_length_px"] = args.min_length
    try:
        cfg = TrainConfig(**raw)
    except TypeError as exc:
        raise PageFuseError(f"bad train config: {exc}") from exc
    if args.approach:
        extra["approach"] = args.approach
    if args.agg:
        extra["agg"] = args.agg
    if args.average:
        extra["average"] = args.average
    return cfg, extra


def cmd_train(args) -> int:
    cfg, extra = _train_config(args)
    pages = io.read_dataset(args.dataset)
    if args.val:
        train_pages, val_pages = pages, io.read_dataset(args.val)
    else:
        n_val = int(extra.get("validation_pages", max(1, len(pages) // 5)))
        train_pages, val_pages = split_random(pages, n_val, cfg.seed) if len(pages) > 1 else (pages, pages)
    for page in train_pages:
        for c in page.cutouts:
            if c.features is None:
                raise PageFuseError(f"cutout {c.cutout_id!r} of page {page.page_id!r} has no features")
    task = cfg.task
    approach = PatchApproach(extra.get("approach", "P"))
    method = extra.get("agg")
    eval_min = extra.get("eval_min_length")
    num_classes = extra.get("num_classes")
    if task == "classify" and num_classes is None:
        num_classes = 1 + max(max(p.label.classes) for p in pages)
    labels = [p.label for p in val_pages]

    def validation_error(model: LinearModel) -> float:
        outs = predict_pages(val_pages, model, task, approach, method, eval_min, fallback_year=model.year_offset)
        by_id = {o.page_id: o.output for o in outs}
        return task_error(task, [by_id[p.page_id] for p in val_pages], labels)

    out = Path(args.out)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    metric = "mae_to_interval" if task == "date" else "error_rate"
    log_rows = []
    val_by_iteration = {}

    def on_checkpoint(ckpt, loss):
        io.save_checkpoint(ckpt_dir, ckpt)
        err = validation_error(ckpt.model)
        val_by_iteration[ckpt.iteration] = err
        log_rows.append({"iteration": ckpt.iteration, "train_loss": None if math.isnan(loss) else loss, metric: err})

    result = train(train_pages, cfg, num_classes=num_classes, on_checkpoint=on_checkpoint)
    final = result.model
    averaging = extra.get("average", "none")
    if averaging == "patch":
        best = min(val_by_iteration, key=lambda it: (val_by_iteration[it], it))
        final = average_checkpoints(select_checkpoints_patch(result.checkpoints, best, cfg.checkpoint_stride))
    elif averaging == "textline":
        final = average_checkpoints(select_checkpoints_textline(result.checkpoints, validation_error))
    elif averaging != "none":
        raise PageFuseError(f"unknown checkpoint averaging {averaging!r}")
    io.save_model(out / "model.json", final)
    io.write_jsonl(out / "train_log.jsonl", log_rows)
    summary = {
        "task": task,
        "loss": cfg.loss.value,
        "iterations": cfg.iterations,
        "seed": cfg.seed,
        "average": averaging,
        "initial_" + metric: log_rows[0][metric],
        "final_" + metric: validation_error(final),
    }
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------- predict


def cmd_predict(args) -> int:
    pages = io.read_dataset(args.dataset)
    model = io.load_model(args.model) if args.model else None
    if model is not None:
        task = model.task
    else:
        task = "date" if pages and pages[0].is_date else "classify"
    fallback = args.fallback_year
    if fallback is None and model is not None and task == "date":
        fallback = model.year_offset
    outs = predict_pages(pages, model, task, PatchApproach(args.approach), args.agg, args.min_length, fallback)
    io.write_jsonl(args.out, (prediction_record(o) for o in outs))
    flagged = sum(o.fallback_used for o in outs)
    print(f"wrote {len(outs)} page predictions to {args.out} ({flagged} fallback)")
    return EXIT_OK


# ---------------------------------------------------------------- fuse / evaluate


def _aligned(preds_a: list[dict], preds_b: list[dict], name_a: str, name_b: str) -> None:
    ids_a = sorted(r["page_id"] for r in preds_a)
    ids_b = sorted(r["page_id"] for r in preds_b)
    for x, y in zip(ids_a, ids_b):
        if x != y:
            raise PageIdMismatch(f"page ids differ: {x!r} in {name_a} vs {y!r} in {name_b}")
    if len(ids_a) != len(ids_b):
        longer, name = (ids_a, name_a) if len(ids_a) > len(ids_b) else (ids_b, name_b)
        raise PageIdMismatch(f"page {longer[min(len(ids_a), len(ids_b))]!r} only in {name}")


def _labels_for(records: list[dict], labels_path) -> list:
    by_id = {p.page_id: p.label for p in io.read_dataset(labels_path)}
    missing = [r["page_id"] for r in records if r["page_id"] not in by_id]
    if missing:
        raise PageIdMismatch(f"page {missing[0]!r} has no label in {labels_path}")
    return [by_id[r["page_id"]] for r in records]


def cmd_fuse(args) -> int:
    p1 = sorted(io.read_jsonl(args.preds1), key=lambda r: r["page_id"])
    p2 = sorted(io.read_jsonl(args.preds2), key=lambda r: r["page_id"])
    _aligned(p1, p2, args.preds1, args.preds2)
    labels = _labels_for(p1, args.labels)
    y1 = [io.prediction_output(r) for r in p1]
    y2 = [io.prediction_output(r) for r in p2]
    task = "date" if isinstance(labels[0], DateInterval) else "classify"
    pairs = list(zip(y1, y2, labels))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.mode == "linear":
        fusion = LinearFusion(tune_alpha(pairs, task, args.alpha_step))
        fused = [fuse_linear(a, b, fusion.alpha) for a, b in zip(y1, y2)]
        info = {"alpha": fusion.alpha}
    else:
        if task == "date":
            raise PageFuseError("log-linear fusion is classification-only")
        grid = args.lambda_grid or list(DEFAULT_LAMBDA_GRID)
        cv = crossval_lambda(pairs, args.folds, grid, args.seed)
        fusion = cv.model
        fused = [fuse_loglinear(fusion, a, b) for a, b in zip(y1, y2)]
        info = {"lambda": cv.lam, "cv_error": cv.cv_error, "cv_errors": {repr(k): v for k, v in cv.errors.items()}}

    (out / "fusion.json").write_text(io.dumps(io.fusion_to_json(fusion)) + "\n", encoding="utf-8")
    records = []
    for rec, value in zip(p1, fused):
        rec = dict(rec)  # keeps unknown fields
        rec.pop("probs", None)
        rec.pop("year", None)
        if isinstance(value, ClassProbs):
            rec["probs"] = value.tolist()
        else:
            rec["year"] = float(value)
        rec["method"] = f"{args.mode}_fusion"
        rec["flags"] = dict(rec.get("flags", {}), fallback_used=bool(rec.get("flags", {}).get("fallback_used")))
        records.append(rec)
    io.write_jsonl(out / "fused.jsonl", records)
    print(json.dumps({"mode": args.mode, **info}, sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    preds = sorted(io.read_jsonl(args.preds), key=lambda r: r["page_id"])
    labels = _labels_for(preds, args.labels)
    outputs = [io.prediction_output(r) for r in preds]
    if args.task == "date":
        if not all(isinstance(iv, DateInterval) for iv in labels):
            raise PageFuseError("date evaluation needs interval labels")
    elif not all(isinstance(t, LabelSet) for t in labels):
        raise PageFuseError(f"{args.task} evaluation needs label sets")
    report = TaskMetricReport.build(args.task, [r["page_id"] for r in preds], outputs, labels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "per_page.jsonl").write_text("".join(line + "\n" for line in report.page_lines()), encoding="utf-8")
    _write_json(out / "summary.json", report.summary())
    name = Path(args.preds).stem
    table = format_table({name: report})
    (out / "table.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


# ---------------------------------------------------------------- gradcheck


def cmd_gradcheck(args) -> int:
    kinds = [_loss_kind(n) for n in args.loss] if args.loss else None
    report = gradient_suite(kinds, args.trials, args.seed, args.eps, corrupt=args.corrupt_gradient)
    failed = False
    for name, err in report.items():
        ok = err < GRAD_TOL
        failed |= not ok
        print(f"{name:16s} max_rel_err={err:.3e} {'PASS' if ok else 'FAIL'}")
    if not report:
        print("no trials run")
    return EXIT_GATE if failed else EXIT_OK


# ---------------------------------------------------------------- parser


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pagefuse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the linear cutout model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--val", help="validation dataset (default: random 20%% hold-out)")
    p.add_argument("--loss", choices=sorted(LOSS_NAMES))
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--min-length", type=int, help="drop training textlines shorter than this")
    p.add_argument("--approach", choices=[a.value for a in PatchApproach])
    p.add_argument("--agg", choices=[m.value for m in LineAggMethod])
    p.add_argument("--average", choices=["none", "patch", "textline"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score cutouts and aggregate them per page")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model")
    p.add_argument("--out", required=True)
    p.add_argument("--approach", choices=[a.value for a in PatchApproach], default="P")
    p.add_argument("--agg", choices=[m.value for m in LineAggMethod])
    p.add_argument("--min-length", type=int)
    p.add_argument("--fallback-year", type=float)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("fuse", help="fuse two page-level prediction files")
    p.add_argument("--preds1", required=True)
    p.add_argument("--preds2", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--mode", choices=["linear", "loglinear"], default="linear")
    p.add_argument("--out", required=True)
    p.add_argument("--alpha-step", type=float, default=0.01)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--lambda-grid", type=_float_list)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", help="score page predictions against labels")
    p.add_argument("--preds", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--task", choices=["font", "script", "location", "date"], required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss gradient")
    p.add_argument("--loss", nargs="*", choices=sorted(LOSS_NAMES))
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--corrupt-gradient", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (PageFuseError, OSError) as exc:
        print(f"pagefuse {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
