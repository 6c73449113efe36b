"""MC-dropout detection grouping, joint uncertainty, and soft pseudo-targets.

Given N stochastic forward passes over one image, every detection becomes
an anchor whose group collects the best same-class, high-IoU detection
from each other pass. Four features per group member (confidence,
normalized center x/y, aspect ratio) yield a single uncertainty value:
the mean per-feature variance plus the spread of the feature means
("combined" mode), or the variance term alone ("within_only"). The
uncertainty and the group's mean confidence then temper the one-hot
pseudo-target.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .matching import Detection
from .geometry import iou_matrix

CONFIDENT = "confident"
TEMPERED = "tempered"
REJECTED = "rejected"

N_FEATURES = 4  # confidence, cx/width, cy/height, aspect ratio


@dataclass(frozen=True)
class McPass:
    """Detections from one stochastic forward pass."""

    index: int
    detections: tuple[Detection, ...]


@dataclass(eq=False)
class McGroup:
    """One anchor detection and its agreeing members across passes.

    ``members`` holds (pass index, detection index) pairs; ``features`` has
    one row per member in the same order.
    """

    anchor: tuple[int, int]
    class_id: int
    members: list[tuple[int, int]]
    features: np.ndarray

    @property
    def sbar(self) -> float:
        return float(self.features[:, 0].mean())

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class SoftTarget:
    value: float
    status: str
    anchor: tuple[int, int] | None = None
    class_id: int | None = None
    sbar: float | None = None
    u: float | None = None


@dataclass
class AnchorReport:
    anchor: tuple[int, int]
    class_id: int
    sbar: float
    u: float
    status: str


@dataclass
class IctResult:
    """Soft targets (rejected anchors omitted) plus the full per-anchor report."""

    targets: list[SoftTarget]
    anchors: list[AnchorReport]

    def uncertainty_pairs(
        self, errors: Sequence[int] | None = None
    ) -> list[tuple[float, int]]:
        """(u, error) pairs for the uncertainty calibration metric.

        Without ground truth the error flags default to 0 (placeholder).
        """
        if errors is None:
            errors = [0] * len(self.anchors)
        if len(errors) != len(self.anchors):
            raise ValueError("one error flag per anchor required")
        return [
            (min(max(a.u, 0.0), 1.0), int(e)) for a, e in zip(self.anchors, errors)
        ]


def _features(det: Detection, width: float, height: float) -> tuple[float, float, float, float]:
    box = det.box
    if box.height == 0.0:
        raise ValueError("aspect ratio undefined for a zero-height detection box")
    return (det.score, box.cx / width, box.cy / height, box.aspect_ratio)


def group_detections(
    passes: Sequence[McPass],
    gamma: float = 0.5,
    *,
    image_width: float,
    image_height: float,
    include_anchor: bool = True,
    normalize_aspect: bool = False,
) -> list[McGroup]:
    """Group every detection with its best same-class match from each other pass.

    A detection from pass k joins the group of an anchor from pass n != k
    when it has the anchor's class and IoU with the anchor box strictly
    above gamma; only the highest-IoU qualifier per pass joins (ties: lower
    detection index). By default the anchor itself is counted as a member
    of its own group so single-survivor groups still have statistics; pass
    ``include_anchor=False`` for the strict cross-pass-only set.

    Center coordinates are normalized by the image size. Aspect ratios are
    used raw unless ``normalize_aspect`` min-max rescales them over all
    detections of the image.
    """
    if len(passes) < 2:
        raise ValueError(f"need at least 2 passes, got {len(passes)}")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")
    if image_width <= 0 or image_height <= 0:
        raise ValueError("image dimensions must be positive")
    indices = [p.index for p in passes]
    if len(set(indices)) != len(indices):
        raise ValueError("pass indices must be unique")

    feats: dict[int, list[tuple[float, float, float, float]]] = {}
    boxes: dict[int, np.ndarray] = {}
    classes: dict[int, np.ndarray] = {}
    for p in passes:
        feats[p.index] = [_features(d, image_width, image_height) for d in p.detections]
        boxes[p.index] = (
            np.array([d.box.as_array() for d in p.detections])
            if p.detections
            else np.zeros((0, 4))
        )
        classes[p.index] = np.array([d.class_id for d in p.detections], dtype=int)

    if normalize_aspect:
        ars = [f[3] for rows in feats.values() for f in rows]
        lo, hi = (min(ars), max(ars)) if ars else (0.0, 0.0)
        span = hi - lo
        for rows in feats.values():
            for i, f in enumerate(rows):
                rows[i] = (*f[:3], (f[3] - lo) / span if span > 0.0 else 0.0)

    # Cross-pass IoU matrices, computed once per ordered pass pair.
    cross: dict[tuple[int, int], np.ndarray] = {}
    for pa in passes:
        for pb in passes:
            if pa.index != pb.index:
                cross[(pa.index, pb.index)] = iou_matrix(boxes[pa.index], boxes[pb.index])

    groups: list[McGroup] = []
    for pa in passes:
        for m, det in enumerate(pa.detections):
            members: list[tuple[int, int]] = []
            rows: list[tuple[float, float, float, float]] = []
            if include_anchor:
                members.append((pa.index, m))
                rows.append(feats[pa.index][m])
            for pb in passes:
                if pb.index == pa.index or not pb.detections:
                    continue
                ious = cross[(pa.index, pb.index)][m]
                eligible = (classes[pb.index] == det.class_id) & (ious > gamma)
                if not eligible.any():
                    continue
                candidate = np.where(eligible, ious, -1.0)
                best = int(np.argmax(candidate))  # ties: lower detection index
                members.append((pb.index, best))
                rows.append(feats[pb.index][best])
            groups.append(
                McGroup(
                    anchor=(pa.index, m),
                    class_id=det.class_id,
                    members=members,
                    features=np.array(rows, dtype=float).reshape(-1, N_FEATURES),
                )
            )
    return groups


def joint_uncertainty(group: McGroup, mode: str = "combined") -> float:
    """Single uncertainty value for a group.

    "combined": mean over features of [population variance + squared
    deviation of the feature mean from the mean of means]. "within_only":
    the mean population variance alone (zero for identical members).
    """
    if mode not in ("combined", "within_only"):
        raise ValueError(f"unknown uncertainty mode {mode!r}")
    if group.size == 0:
        raise ValueError("uncertainty undefined for an empty group")
    variances = group.features.var(axis=0)
    if mode == "within_only":
        return float(variances.mean())
    means = group.features.mean(axis=0)
    return float(np.mean(variances + (means - means.mean()) ** 2))


def soft_pseudo_target(
    h: float,
    sbar: float,
    u: float,
    kappa1: float = 0.75,
    kappa2: float = 0.5,
) -> SoftTarget:
    """Temper a one-hot pseudo-target value by uncertainty and confidence.

    sbar >= kappa1: value = h * (1 - u), confident. kappa2 <= sbar < kappa1:
    value = h * sbar * (1 - u), tempered. Below kappa2 the target is
    rejected (value 0). u is clamped to [0, 1] so values stay in range.
    """
    if kappa2 >= kappa1:
        raise ValueError(f"kappa2 ({kappa2}) must be below kappa1 ({kappa1})")
    if h not in (0.0, 1.0):
        raise ValueError(f"one-hot target must be 0 or 1, got {h}")
    if not 0.0 <= sbar <= 1.0:
        raise ValueError(f"mean confidence must be in [0, 1], got {sbar}")
    uc = min(max(u, 0.0), 1.0)
    if sbar >= kappa1:
        return SoftTarget(value=h * (1.0 - uc), status=CONFIDENT, sbar=sbar, u=u)
    if sbar >= kappa2:
        return SoftTarget(value=h * sbar * (1.0 - uc), status=TEMPERED, sbar=sbar, u=u)
    return SoftTarget(value=0.0, status=REJECTED, sbar=sbar, u=u)


def ict_pipeline(
    passes: Sequence[McPass],
    *,
    gamma: float = 0.5,
    kappa1: float = 0.75,
    kappa2: float = 0.5,
    mode: str = "combined",
    image_width: float,
    image_height: float,
    normalize_aspect: bool = False,
) -> IctResult:
    """Group detections, score uncertainty, and build soft pseudo-targets.

    Every anchor uses the one-hot value 1 for its own predicted class.
    Rejected anchors appear in the report but emit no target.
    """
    groups = group_detections(
        passes,
        gamma,
        image_width=image_width,
        image_height=image_height,
        normalize_aspect=normalize_aspect,
    )
    targets: list[SoftTarget] = []
    anchors: list[AnchorReport] = []
    for group in groups:
        u = joint_uncertainty(group, mode)
        target = soft_pseudo_target(1.0, group.sbar, u, kappa1, kappa2)
        target = replace(target, anchor=group.anchor, class_id=group.class_id)
        anchors.append(
            AnchorReport(
                anchor=group.anchor,
                class_id=group.class_id,
                sbar=group.sbar,
                u=u,
                status=target.status,
            )
        )
        if target.status != REJECTED:
            targets.append(target)
    return IctResult(targets=targets, anchors=anchors)
