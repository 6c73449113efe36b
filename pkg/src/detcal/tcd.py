"""Auxiliary train-time calibration loss over a detection mini-batch.

Two components, each an absolute mean gap the training loop drives to zero:

* classification term: per class, |batch-mean confidence - batch-mean
  one-hot occurrence|, averaged over classes;
* localization term: per positive region, |box IoU with its ground truth -
  predicted-class confidence|, averaged per image and over images.

The combined loss is half their sum, with closed-form subgradients with
respect to every confidence and IoU input (sign conventions: the gradient
of |x| at 0 is taken as 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TcdBatch:
    """Mini-batch view of a detector head for the calibration loss.

    s, q: (L, R, K) arrays of class confidences and one-hot ground truth
    (L images, R map locations, K foreground classes; background locations
    carry all-zero q rows). positives: per image, an (N, 2) array pairing
    each positive region's ground-truth IoU with its predicted-class
    confidence.
    """

    s: np.ndarray
    q: np.ndarray
    positives: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        if self.s.ndim != 3:
            raise ValueError(f"s must have shape (L, R, K), got {self.s.shape}")
        if self.q.shape != self.s.shape:
            raise ValueError(
                f"q shape {self.q.shape} does not match s shape {self.s.shape}"
            )
        if np.any(self.s < 0.0) or np.any(self.s > 1.0):
            raise ValueError("confidences must lie in [0, 1]")
        if not np.all((self.q == 0.0) | (self.q == 1.0)):
            raise ValueError("q entries must be 0 or 1")
        if np.any(self.q.sum(axis=2) > 1.0):
            raise ValueError("q rows must be one-hot or all-zero")

        self.positives = [
            np.asarray(p, dtype=float).reshape(-1, 2) for p in self.positives
        ]
        if len(self.positives) != self.s.shape[0]:
            raise ValueError(
                f"got positives for {len(self.positives)} images, batch has "
                f"{self.s.shape[0]}"
            )
        for l, p in enumerate(self.positives):
            if p.size and (np.any(p < 0.0) or np.any(p > 1.0)):
                raise ValueError(f"positives for image {l} must lie in [0, 1]")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.s.shape  # type: ignore[return-value]


@dataclass
class TcdValueGrad:
    """Loss value, its two components, and gradients for every input."""

    d_cls: float
    d_det: float
    loss: float
    grad_s: np.ndarray
    grad_shat: list[np.ndarray]
    grad_iou: list[np.ndarray]


def d_cls(batch: TcdBatch) -> float:
    """Mean absolute gap between per-class average confidence and occurrence."""
    L, R, K = batch.dims
    if L * R == 0 or K == 0:
        raise ValueError("confidence map must be non-empty")
    diff = batch.s.mean(axis=(0, 1)) - batch.q.mean(axis=(0, 1))
    return float(np.abs(diff).mean())


def d_det(batch: TcdBatch) -> float:
    """Mean absolute gap between positive-region IoU and confidence.

    Averaged per image then over images that have positives; 0.0 when no
    image has any.
    """
    per_image = [np.abs(p[:, 0] - p[:, 1]).mean() for p in batch.positives if len(p)]
    if not per_image:
        return 0.0
    return float(np.mean(per_image))


def tcd_loss(batch: TcdBatch) -> TcdValueGrad:
    """Combined calibration loss, half the sum of both components, with grads."""
    L, R, K = batch.dims
    if L * R == 0 or K == 0:
        raise ValueError("confidence map must be non-empty")

    diff = batch.s.mean(axis=(0, 1)) - batch.q.mean(axis=(0, 1))
    dc = float(np.abs(diff).mean())
    grad_s = np.broadcast_to(np.sign(diff) / (2.0 * K * L * R), (L, R, K)).copy()

    n_active = sum(1 for p in batch.positives if len(p))
    dd = 0.0
    grad_shat: list[np.ndarray] = []
    grad_iou: list[np.ndarray] = []
    for p in batch.positives:
        n = len(p)
        if n == 0:
            grad_shat.append(np.zeros(0))
            grad_iou.append(np.zeros(0))
            continue
        inner = p[:, 0] - p[:, 1]  # iou - shat
        dd += float(np.abs(inner).mean())
        scale = np.sign(inner) / (2.0 * n_active * n)
        grad_iou.append(scale)
        grad_shat.append(-scale)
    if n_active:
        dd /= n_active

    return TcdValueGrad(
        d_cls=dc,
        d_det=dd,
        loss=0.5 * (dc + dd),
        grad_s=grad_s,
        grad_shat=grad_shat,
        grad_iou=grad_iou,
    )
