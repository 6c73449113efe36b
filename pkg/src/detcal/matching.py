"""Greedy one-to-one matching of detections to ground truth.

Matching is COCO-style: per image and class, detections are visited in
descending score order and each takes the unmatched ground-truth box with
the highest IoU at or above the threshold. The resulting correctness flag
per detection is what the detection calibration metrics bin.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Union

import numpy as np

from .geometry import BBox, iou_matrix

ImageId = Union[int, str]


@dataclass(frozen=True)
class Detection:
    image_id: ImageId
    box: BBox
    class_id: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must be in [0, 1], got {self.score}")
        if self.class_id < 0:
            raise ValueError(f"class_id must be non-negative, got {self.class_id}")


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: ImageId
    box: BBox
    class_id: int


@dataclass(frozen=True)
class MatchResult:
    """Outcome for one detection: correct flag, matched IoU, matched GT index."""

    det_index: int
    correct: bool
    matched_iou: float
    matched_gt: int | None


def match(
    dets: list[Detection],
    gts: list[GroundTruthBox],
    gamma: float = 0.5,
    *,
    min_score: float = 0.0,
    drop_duplicates: bool = False,
) -> list[MatchResult]:
    """Match detections to ground truth, one result per retained detection.

    Greedy one-to-one per (image, class): detections sorted by descending
    score (ties: lower input index first) each claim the free ground-truth
    box with the highest IoU >= gamma (ties: lower GT index first).

    Detections below ``min_score`` are dropped before matching. Unmatched
    detections whose best same-class IoU still reaches gamma are duplicates
    (a second detection of an already-claimed object); they are reported
    with correct=False unless ``drop_duplicates`` removes them.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")

    det_groups: dict[tuple[ImageId, int], list[int]] = defaultdict(list)
    for i, det in enumerate(dets):
        if det.score >= min_score:
            det_groups[(det.image_id, det.class_id)].append(i)
    gt_groups: dict[tuple[ImageId, int], list[int]] = defaultdict(list)
    for j, gt in enumerate(gts):
        gt_groups[(gt.image_id, gt.class_id)].append(j)

    results: list[MatchResult] = []
    for key, det_indices in det_groups.items():
        gt_indices = gt_groups.get(key, [])
        order = sorted(det_indices, key=lambda i: (-dets[i].score, i))
        if not gt_indices:
            for i in order:
                results.append(MatchResult(i, False, 0.0, None))
            continue

        det_boxes = np.array([dets[i].box.as_array() for i in order])
        gt_boxes = np.array([gts[j].box.as_array() for j in gt_indices])
        ious = iou_matrix(det_boxes, gt_boxes)
        taken = np.zeros(len(gt_indices), dtype=bool)

        for row, i in enumerate(order):
            candidates = np.where(~taken, ious[row], -1.0)
            best = int(np.argmax(candidates))  # ties resolve to the lower GT index
            if candidates[best] >= gamma:
                taken[best] = True
                results.append(
                    MatchResult(i, True, float(ious[row, best]), gt_indices[best])
                )
            else:
                duplicate = float(ious[row].max()) >= gamma
                if duplicate and drop_duplicates:
                    continue
                results.append(MatchResult(i, False, 0.0, None))

    results.sort(key=lambda r: r.det_index)
    return results


def scored_outcomes(
    dets: list[Detection], results: list[MatchResult]
) -> list[tuple[float, bool]]:
    """(score, correct) pairs for the calibration metrics."""
    return [(dets[r.det_index].score, r.correct) for r in results]
