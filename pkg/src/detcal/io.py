"""On-disk formats: COCO-style detections/annotations, loss batches,
MC-pass files, and report writing.

All JSON is UTF-8. Boxes arrive in COCO (x, y, width, height) order and are
converted to corner form on load. Unknown fields are ignored; missing or
malformed required fields raise :class:`ParseError` with the offending key
path (or byte offset for the binary batch format). Writes go through a
temp file and rename, so readers never observe partial output.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .geometry import BBox
from .matching import Detection, GroundTruthBox, ImageId
from .tcd import TcdBatch
from .uncertainty import McPass

TCD_MAGIC = b"TCB1"


class ParseError(ValueError):
    """A file failed to parse; message carries the path and key context."""

    def __init__(self, path, message: str):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


def _read_json(path) -> object:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ParseError(path, "file not found")
    except json.JSONDecodeError as exc:
        raise ParseError(path, f"malformed JSON: {exc}")


def _get(obj: dict, key: str, path, ctx: str):
    if key not in obj:
        raise ParseError(path, f"missing required key {ctx}.{key}")
    return obj[key]


def _box_from_coco(bbox, path, ctx: str) -> BBox:
    if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
        raise ParseError(path, f"{ctx}.bbox must be [x, y, width, height]")
    x, y, w, h = (float(v) for v in bbox)
    if w < 0 or h < 0:
        raise ParseError(path, f"{ctx}.bbox has negative width or height")
    try:
        return BBox.from_xywh(x, y, w, h)
    except ValueError as exc:
        raise ParseError(path, f"{ctx}.bbox: {exc}")


# ---------------------------------------------------------------------------
# COCO-style detections and annotations

def load_coco_detections(path) -> list[Detection]:
    """Load a COCO-style results file: a JSON array of detection records,
    or an object holding one under "detections"."""
    data = _read_json(path)
    if isinstance(data, dict) and "detections" in data:
        data = data["detections"]
    if not isinstance(data, list):
        raise ParseError(path, "expected a JSON array of detections")
    out = []
    for i, rec in enumerate(data):
        ctx = f"detections[{i}]"
        if not isinstance(rec, dict):
            raise ParseError(path, f"{ctx} is not an object")
        score = float(_get(rec, "score", path, ctx))
        if not 0.0 <= score <= 1.0:
            raise ParseError(path, f"{ctx}.score {score} outside [0, 1]")
        out.append(
            Detection(
                image_id=_get(rec, "image_id", path, ctx),
                box=_box_from_coco(_get(rec, "bbox", path, ctx), path, ctx),
                class_id=int(_get(rec, "category_id", path, ctx)),
                score=score,
            )
        )
    return out


class AnnotationSet(NamedTuple):
    ground_truth: list[GroundTruthBox]
    categories: dict[int, str]
    image_dims: dict[ImageId, tuple[int, int]]


def load_coco_annotations(path) -> AnnotationSet:
    data = _read_json(path)
    if not isinstance(data, dict):
        raise ParseError(path, "expected a JSON object")

    image_dims: dict[ImageId, tuple[int, int]] = {}
    for i, img in enumerate(_get(data, "images", path, "$")):
        ctx = f"images[{i}]"
        w = int(_get(img, "width", path, ctx))
        h = int(_get(img, "height", path, ctx))
        if w < 0 or h < 0:
            raise ParseError(path, f"{ctx} has negative dimensions")
        image_dims[_get(img, "id", path, ctx)] = (w, h)

    categories: dict[int, str] = {}
    for i, cat in enumerate(_get(data, "categories", path, "$")):
        ctx = f"categories[{i}]"
        categories[int(_get(cat, "id", path, ctx))] = str(cat.get("name", ""))

    ground_truth = []
    for i, ann in enumerate(_get(data, "annotations", path, "$")):
        ctx = f"annotations[{i}]"
        image_id = _get(ann, "image_id", path, ctx)
        if image_id not in image_dims:
            raise ParseError(path, f"{ctx}.image_id {image_id!r} not in images")
        class_id = int(_get(ann, "category_id", path, ctx))
        if class_id not in categories:
            raise ParseError(path, f"{ctx}.category_id {class_id} not in categories")
        ground_truth.append(
            GroundTruthBox(
                image_id=image_id,
                box=_box_from_coco(_get(ann, "bbox", path, ctx), path, ctx),
                class_id=class_id,
            )
        )
    return AnnotationSet(ground_truth, categories, image_dims)


@dataclass
class DatasetBundle:
    """Detections joined with their annotation set, references validated."""

    detections: list[Detection]
    ground_truth: list[GroundTruthBox]
    categories: dict[int, str]
    image_dims: dict[ImageId, tuple[int, int]]

    @classmethod
    def build(
        cls, detections: list[Detection], annotations: AnnotationSet, source=""
    ) -> DatasetBundle:
        for i, det in enumerate(detections):
            if det.image_id not in annotations.image_dims:
                raise ParseError(
                    source, f"detections[{i}].image_id {det.image_id!r} not in images"
                )
            if det.class_id not in annotations.categories:
                raise ParseError(
                    source,
                    f"detections[{i}].category_id {det.class_id} not in categories",
                )
        return cls(
            detections=detections,
            ground_truth=annotations.ground_truth,
            categories=annotations.categories,
            image_dims=annotations.image_dims,
        )


def write_coco_detections(path, detections: list[Detection], metadata: dict | None = None):
    records = [
        {
            "image_id": d.image_id,
            "category_id": d.class_id,
            "bbox": list(d.box.as_xywh()),
            "score": d.score,
        }
        for d in detections
    ]
    payload: dict = {"detections": records}
    if metadata is not None:
        payload["info"] = metadata
    _atomic_write_text(path, _dump_json(payload))


def write_coco_annotations(
    path,
    ground_truth: list[GroundTruthBox],
    categories: dict[int, str],
    image_dims: dict[ImageId, tuple[int, int]],
    metadata: dict | None = None,
):
    payload: dict = {
        "images": [
            {"id": image_id, "width": w, "height": h}
            for image_id, (w, h) in image_dims.items()
        ],
        "annotations": [
            {
                "id": i + 1,
                "image_id": g.image_id,
                "category_id": g.class_id,
                "bbox": list(g.box.as_xywh()),
            }
            for i, g in enumerate(ground_truth)
        ],
        "categories": [{"id": k, "name": v} for k, v in categories.items()],
    }
    if metadata is not None:
        payload["info"] = metadata
    _atomic_write_text(path, _dump_json(payload))


# ---------------------------------------------------------------------------
# Loss batches (JSON and binary)

def load_tcd_batch(path) -> TcdBatch:
    """Load a loss batch; the binary format is detected by its magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == TCD_MAGIC:
        return _load_tcd_binary(path)
    return _load_tcd_json(path)


def _load_tcd_json(path) -> TcdBatch:
    data = _read_json(path)
    if not isinstance(data, dict):
        raise ParseError(path, "expected a JSON object")
    L = int(_get(data, "L", path, "$"))
    R = int(_get(data, "R", path, "$"))
    K = int(_get(data, "K", path, "$"))
    s = np.asarray(_get(data, "s", path, "$"), dtype=float)
    q = np.asarray(_get(data, "q", path, "$"), dtype=float)
    if s.size != L * R * K:
        raise ParseError(path, f"$.s has {s.size} values, expected L*R*K = {L * R * K}")
    if q.size != L * R * K:
        raise ParseError(path, f"$.q has {q.size} values, expected L*R*K = {L * R * K}")
    positives_raw = _get(data, "positives", path, "$")
    if len(positives_raw) != L:
        raise ParseError(path, f"$.positives has {len(positives_raw)} images, expected {L}")
    positives = []
    for l, rows in enumerate(positives_raw):
        pairs = []
        for n, rec in enumerate(rows):
            ctx = f"positives[{l}][{n}]"
            pairs.append(
                (float(_get(rec, "iou", path, ctx)), float(_get(rec, "shat", path, ctx)))
            )
        positives.append(np.array(pairs, dtype=float).reshape(-1, 2))
    try:
        return TcdBatch(s=s.reshape(L, R, K), q=q.reshape(L, R, K), positives=positives)
    except ValueError as exc:
        raise ParseError(path, str(exc))


def _load_tcd_binary(path) -> TcdBatch:
    blob = Path(path).read_bytes()

    def need(offset: int, count: int) -> None:
        if offset + count > len(blob):
            raise ParseError(
                path, f"truncated binary batch: need {count} bytes at offset {offset}"
            )

    offset = 4  # past magic
    need(offset, 12)
    L, R, K = struct.unpack_from("<III", blob, offset)
    offset += 12
    n = L * R * K
    need(offset, 4 * n)
    s = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).astype(float)
    offset += 4 * n
    need(offset, n)
    q = np.frombuffer(blob, dtype=np.uint8, count=n, offset=offset).astype(float)
    offset += n
    positives = []
    for l in range(L):
        need(offset, 4)
        (count,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        need(offset, 8 * count)
        pairs = np.frombuffer(blob, dtype="<f4", count=2 * count, offset=offset)
        offset += 8 * count
        positives.append(pairs.astype(float).reshape(-1, 2))
    if offset != len(blob):
        raise ParseError(path, f"{len(blob) - offset} trailing bytes at offset {offset}")
    try:
        return TcdBatch(s=s.reshape(L, R, K), q=q.reshape(L, R, K), positives=positives)
    except ValueError as exc:
        raise ParseError(path, str(exc))


def write_tcd_batch_json(path, batch: TcdBatch):
    L, R, K = batch.dims
    payload = {
        "L": L,
        "R": R,
        "K": K,
        "s": [float(v) for v in batch.s.ravel()],
        "q": [int(v) for v in batch.q.ravel()],
        "positives": [
            [{"iou": float(iou), "shat": float(shat)} for iou, shat in p]
            for p in batch.positives
        ],
    }
    _atomic_write_text(path, _dump_json(payload))


def write_tcd_batch_binary(path, batch: TcdBatch):
    L, R, K = batch.dims
    parts = [TCD_MAGIC, struct.pack("<III", L, R, K)]
    parts.append(batch.s.astype("<f4").tobytes())
    parts.append(batch.q.astype(np.uint8).tobytes())
    for p in batch.positives:
        parts.append(struct.pack("<I", len(p)))
        parts.append(p.astype("<f4").tobytes())
    _atomic_write_bytes(path, b"".join(parts))


# ---------------------------------------------------------------------------
# MC-pass files

class McPassFile(NamedTuple):
    passes: list[McPass]
    image_id: ImageId
    width: int
    height: int


def load_mc_passes(path) -> McPassFile:
    return mc_passes_from_dict(_read_json(path), source=path)


def mc_passes_from_dict(data, source="<memory>") -> McPassFile:
    path = source
    if not isinstance(data, dict):
        raise ParseError(path, "expected a JSON object")
    image_id = _get(data, "image_id", path, "$")
    width = int(_get(data, "width", path, "$"))
    height = int(_get(data, "height", path, "$"))
    if width <= 0 or height <= 0:
        raise ParseError(path, "$.width and $.height must be positive")
    passes = []
    for i, rec in enumerate(_get(data, "passes", path, "$")):
        ctx = f"passes[{i}]"
        detections = []
        for j, d in enumerate(_get(rec, "detections", path, ctx)):
            dctx = f"{ctx}.detections[{j}]"
            score = float(_get(d, "score", path, dctx))
            if not 0.0 <= score <= 1.0:
                raise ParseError(path, f"{dctx}.score {score} outside [0, 1]")
            detections.append(
                Detection(
                    image_id=image_id,
                    box=_box_from_coco(_get(d, "bbox", path, dctx), path, dctx),
                    class_id=int(_get(d, "class", path, dctx)),
                    score=score,
                )
            )
        passes.append(McPass(index=int(_get(rec, "n", path, ctx)), detections=tuple(detections)))
    return McPassFile(passes, image_id, width, height)


def write_mc_passes(path, mc: McPassFile):
    payload = {
        "image_id": mc.image_id,
        "width": mc.width,
        "height": mc.height,
        "passes": [
            {
                "n": p.index,
                "detections": [
                    {
                        "bbox": list(d.box.as_xywh()),
                        "class": d.class_id,
                        "score": d.score,
                    }
                    for d in p.detections
                ],
            }
            for p in mc.passes
        ],
    }
    _atomic_write_text(path, _dump_json(payload))


# ---------------------------------------------------------------------------
# Reports

def write_report(path, payload, format: str = "json"):
    """Write a report atomically as JSON (default) or CSV.

    CSV accepts a list of flat dicts (one row each) or a single flat dict
    (key,value rows).
    """
    if format == "json":
        _atomic_write_text(path, _dump_json(payload))
    elif format == "csv":
        _atomic_write_text(path, _to_csv(payload))
    else:
        raise ValueError(f"unknown report format {format!r}")


def _to_csv(payload) -> str:
    if isinstance(payload, list):
        if not payload:
            return "\n"
        keys = list(payload[0].keys())
        lines = [",".join(keys)]
        for row in payload:
            lines.append(",".join(str(row[k]) for k in keys))
        return "\n".join(lines) + "\n"
    if isinstance(payload, dict):
        lines = ["key,value"]
        for k, v in payload.items():
            if isinstance(v, (dict, list)):
                v = json.dumps(v, sort_keys=True)
                v = '"' + v.replace('"', '""') + '"'
            lines.append(f"{k},{v}")
        return "\n".join(lines) + "\n"
    raise ValueError("CSV export needs a dict or a list of dicts")


def _dump_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _atomic_write_text(path, text: str):
    _atomic_write_bytes(path, text.encode("utf-8"))


def _atomic_write_bytes(path, blob: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
