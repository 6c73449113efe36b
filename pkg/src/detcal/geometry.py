"""Axis-aligned bounding boxes, IoU, and IoU gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BBox:
    """Box in corner form (x1, y1, x2, y2), absolute pixel coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise ValueError(f"box coordinates must be finite, got {v!r}")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(
                f"box corners out of order: ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> BBox:
        """Build from COCO-style (x, y, width, height)."""
        if w < 0 or h < 0:
            raise ValueError(f"negative box size: w={w}, h={h}")
        return cls(float(x), float(y), float(x) + float(w), float(y) + float(h))

    def as_xywh(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.width, self.height)

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=float)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def cx(self) -> float:
        return 0.5 * (self.x1 + self.x2)

    @property
    def cy(self) -> float:
        return 0.5 * (self.y1 + self.y2)

    @property
    def aspect_ratio(self) -> float:
        if self.height == 0:
            raise ValueError("aspect ratio undefined for a zero-height box")
        return self.width / self.height

    def translate(self, dx: float, dy: float) -> BBox:
        return BBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0.0 when the union has zero area."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = iw * ih if iw > 0.0 and ih > 0.0 else 0.0
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between corner-form box arrays of shape (n, 4) and (m, 4)."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def iou_grad(a: BBox, b: BBox) -> np.ndarray:
    """Gradient of ``iou(a, b)`` with respect to (a.x1, a.y1, a.x2, a.y2).

    At ties of the underlying min/max terms (an edge of ``a`` exactly on the
    intersection boundary) the subgradient 0 is chosen for the ambiguous
    coordinate, so the returned vector is always finite.
    """
    if a.area == 0.0 or b.area == 0.0:
        raise ValueError("iou gradient undefined for zero-area boxes")
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return np.zeros(4)
    inter = iw * ih
    union = a.area + b.area - inter

    # d(inter)/d(coord) is nonzero only where a's edge is strictly the
    # binding edge of the intersection rectangle.
    d_inter = np.zeros(4)
    if a.x1 > b.x1:
        d_inter[0] = -ih
    if a.y1 > b.y1:
        d_inter[1] = -iw
    if a.x2 < b.x2:
        d_inter[2] = ih
    if a.y2 < b.y2:
        d_inter[3] = iw

    d_area = np.array([-a.height, -a.width, a.height, a.width])
    # iou = I/U with U = area(a) + area(b) - I, so dU = d_area - d_inter.
    return (d_inter * (union + inter) - inter * d_area) / (union * union)
