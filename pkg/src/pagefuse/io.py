"""JSON-lines datasets and predictions, and the model containers.

Every file carries or sits next to a ``format: "pagefuse/1"`` marker. Model
parameters are stored as base64 of little-endian float64 in row-major order
so they round-trip exactly.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .core import (
    ClassProbs,
    CutoutRecord,
    DateInterval,
    InvalidRecord,
    LabelSet,
    PageFuseError,
    PageRecord,
)
from .fusion import LinearFusion, LogLinearFusion
from .model import Checkpoint, LinearModel

FORMAT = "pagefuse/1"


class FormatError(PageFuseError):
    pass


def encode_array(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def decode_array(text: str, count: int) -> np.ndarray:
    arr = np.frombuffer(base64.b64decode(text), dtype="<f8").astype(np.float64)
    if arr.size != count:
        raise FormatError(f"expected {count} parameters, payload holds {arr.size}")
    return arr


def dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def read_jsonl(path) -> Iterator[dict]:
    path = Path(path)
    try:
        fh = path.open(encoding="utf-8")
    except OSError as exc:
        raise FileNotFoundError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{path}:{n}: {exc.msg}") from exc


def write_jsonl(path, records: Iterable[dict]) -> int:
    n = 0
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")
            n += 1
    return n


def label_to_json(label) -> dict:
    if isinstance(label, DateInterval):
        return {"interval": [label.a, label.b]}
    return {"classes": label.sorted()}


def label_from_json(obj: dict):
    if "interval" in obj:
        a, b = obj["interval"]
        return DateInterval(a, b)
    if "classes" in obj:
        return LabelSet(frozenset(obj["classes"]))
    raise FormatError(f"label needs 'classes' or 'interval': {obj}")


def cutout_to_json(c: CutoutRecord) -> dict:
    out = {"cutout_id": c.cutout_id, "kind": c.kind.value}
    for key in ("scale", "in_text_region", "length_px"):
        value = getattr(c, key)
        if value is not None:
            out[key] = value
    if c.features is not None:
        out["features"] = [float(v) for v in c.features]
    if isinstance(c.score, ClassProbs):
        out["score"] = c.score.tolist()
    elif c.score is not None:
        out["score"] = float(c.score)
    return out


def cutout_from_json(page_id: str, obj: dict) -> CutoutRecord:
    score = obj.get("score")
    if isinstance(score, list):
        score = ClassProbs(score)
    return CutoutRecord(
        page_id=page_id,
        cutout_id=str(obj["cutout_id"]),
        kind=obj["kind"],
        scale=obj.get("scale"),
        in_text_region=obj.get("in_text_region"),
        length_px=obj.get("length_px"),
        features=obj.get("features"),
        score=score,
    )


def page_to_json(page: PageRecord) -> dict:
    return {
        "page_id": page.page_id,
        "label": label_to_json(page.label),
        "cutouts": [cutout_to_json(c) for c in page.cutouts],
    }


def page_from_json(obj: dict) -> PageRecord:
    try:
        pid = str(obj["page_id"])
        return PageRecord(
            pid,
            label_from_json(obj["label"]),
            tuple(cutout_from_json(pid, c) for c in obj.get("cutouts", [])),
        )
    except KeyError as exc:
        raise FormatError(f"page record missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, PageFuseError):
            raise
        raise InvalidRecord(f"bad page record {obj.get('page_id')!r}: {exc}") from exc


def read_dataset(path) -> list[PageRecord]:
    return [page_from_json(obj) for obj in read_jsonl(path)]


def write_dataset(path, pages: Iterable[PageRecord]) -> int:
    return write_jsonl(path, (page_to_json(p) for p in pages))


def model_to_json(model: LinearModel, **extra) -> dict:
    return {
        "format": FORMAT,
        "kind": "linear_model",
        "task": model.task,
        "num_classes": model.num_classes,
        "feature_dim": model.feature_dim,
        "year_scale": {"offset": model.year_offset, "scale": model.year_scale},
        "dtype": "<f8",
        "params": encode_array(model.flat()),
        **extra,
    }


def model_from_json(obj: dict) -> LinearModel:
    if obj.get("format") != FORMAT or obj.get("kind") != "linear_model":
        raise FormatError("not a pagefuse linear model container")
    k, d = int(obj["num_classes"]), int(obj["feature_dim"])
    ys = obj.get("year_scale", {"offset": 0.0, "scale": 1.0})
    template = LinearModel.zeros(
        obj["task"], k, d, year_offset=float(ys["offset"]), year_scale=float(ys["scale"])
    )
    return template.with_flat(decode_array(obj["params"], k * d + k))


def save_model(path, model: LinearModel, **extra) -> None:
    Path(path).write_text(dumps(model_to_json(model, **extra)) + "\n", encoding="utf-8")


def load_model(path) -> LinearModel:
    return model_from_json(_load_json(path))


def save_checkpoint(directory, ckpt: Checkpoint) -> Path:
    path = Path(directory) / f"ckpt_{ckpt.iteration:08d}.json"
    save_model(path, ckpt.model, iteration=ckpt.iteration)
    return path


def load_checkpoints(directory) -> list[Checkpoint]:
    out = []
    for path in sorted(Path(directory).glob("ckpt_*.json")):
        obj = _load_json(path)
        out.append(Checkpoint(int(obj["iteration"]), model_from_json(obj)))
    return out


def fusion_to_json(fusion) -> dict:
    if isinstance(fusion, LinearFusion):
        return {"format": FORMAT, "kind": "linear_fusion", "alpha": fusion.alpha}
    return {
        "format": FORMAT,
        "kind": "loglinear_fusion",
        "num_classes": fusion.num_classes,
        "lambda": fusion.lam,
        "dtype": "<f8",
        "params": encode_array(np.concatenate([fusion.W.ravel(), fusion.b])),
    }


def fusion_from_json(obj: dict):
    if obj.get("format") != FORMAT:
        raise FormatError("not a pagefuse fusion container")
    if obj.get("kind") == "linear_fusion":
        return LinearFusion(float(obj["alpha"]))
    if obj.get("kind") == "loglinear_fusion":
        C = int(obj["num_classes"])
        params = decode_array(obj["params"], 2 * C * C + C)
        return LogLinearFusion(params[: 2 * C * C].reshape(C, 2 * C), params[2 * C * C :], obj["lambda"])
    raise FormatError(f"unknown fusion kind {obj.get('kind')!r}")


def _load_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise FileNotFoundError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc.msg}") from exc


def load_json(path) -> dict:
    return _load_json(path)


def prediction_output(rec: dict):
    if "probs" in rec:
        return ClassProbs(rec["probs"])
    if "year" in rec:
        return float(rec["year"])
    raise FormatError(f"prediction for {rec.get('page_id')!r} has neither probs nor year")
