"""Binned calibration metrics and reliability-diagram data.

All three metrics share the same shape: partition [0, 1] into M equal-width
bins, and sum the per-bin |mean outcome - mean binned value| weighted by the
bin's share of the samples. ``ece`` bins classifier confidences against
accuracy, ``d_ece`` bins detection scores against precision (the matched
correctness flag), and ``d_uce`` bins uncertainties against error rate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .matching import MatchResult


@dataclass(frozen=True)
class ClsSample:
    """One classifier prediction: confidence, predicted label, true label."""

    confidence: float
    predicted: int
    label: int

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True, eq=False)
class BinTable:
    """Per-bin counts and means backing a calibration metric.

    Bin m (1-based) covers ((m-1)/M, m/M]; the value 0.0 is assigned to the
    first bin. Empty bins carry zero means and zero weight.
    """

    bins: int
    counts: np.ndarray
    mean_conf: np.ndarray
    mean_outcome: np.ndarray

    @property
    def gap(self) -> np.ndarray:
        return np.abs(self.mean_outcome - self.mean_conf)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


class ReliabilityBin(NamedTuple):
    bin_lo: float
    bin_hi: float
    count: int
    mean_conf: float
    mean_outcome: float
    gap: float


def bin_index(values: np.ndarray, bins: int) -> np.ndarray:
    """0-based equal-width bin index on [0, 1] for each value."""
    idx = np.ceil(np.asarray(values, dtype=float) * bins).astype(int) - 1
    return np.clip(idx, 0, bins - 1)


def _validate(values: np.ndarray, bins: int, what: str) -> None:
    if bins < 1:
        raise ValueError(f"bin count must be >= 1, got {bins}")
    if values.size == 0:
        raise ValueError(f"cannot compute a calibration metric over zero {what}")
    if np.any(values < 0.0) or np.any(values > 1.0):
        raise ValueError(f"{what} values must lie in [0, 1]")


def _binned(conf: np.ndarray, outcome: np.ndarray, bins: int) -> BinTable:
    idx = bin_index(conf, bins)
    counts = np.bincount(idx, minlength=bins)
    sum_conf = np.bincount(idx, weights=conf, minlength=bins)
    sum_outcome = np.bincount(idx, weights=outcome, minlength=bins)
    denom = np.maximum(counts, 1)
    occupied = counts > 0
    mean_conf = np.where(occupied, sum_conf / denom, 0.0)
    mean_outcome = np.where(occupied, sum_outcome / denom, 0.0)
    return BinTable(bins, counts, mean_conf, mean_outcome)


def _expected_gap(table: BinTable) -> float:
    weights = table.counts / table.total
    return float(np.sum(weights * table.gap))


def ece(samples: Sequence[ClsSample], bins: int = 10) -> tuple[float, BinTable]:
    """Expected calibration error of classifier confidences against accuracy."""
    conf = np.array([s.confidence for s in samples], dtype=float)
    _validate(conf, bins, "sample confidence")
    outcome = np.array([float(s.predicted == s.label) for s in samples])
    table = _binned(conf, outcome, bins)
    return _expected_gap(table), table


def d_ece(
    pairs: Sequence[tuple[float, bool]], bins: int = 10
) -> tuple[float, BinTable]:
    """Detection expected calibration error over (score, correct) pairs.

    The per-bin outcome is precision: the fraction of detections in the bin
    whose correctness flag is set.
    """
    conf = np.array([s for s, _ in pairs], dtype=float)
    _validate(conf, bins, "detection score")
    outcome = np.array([float(u) for _, u in pairs])
    table = _binned(conf, outcome, bins)
    return _expected_gap(table), table


def d_uce(
    entries: Sequence[tuple[float, int]], bins: int = 10
) -> tuple[float, BinTable]:
    """Uncertainty calibration error over (uncertainty, error) pairs.

    Binned by uncertainty; the per-bin outcome is the average error flag.
    Uncertainties must already be clamped to [0, 1].
    """
    unc = np.array([u for u, _ in entries], dtype=float)
    _validate(unc, bins, "uncertainty")
    outcome = np.array([float(e) for _, e in entries])
    table = _binned(unc, outcome, bins)
    return _expected_gap(table), table


def detection_error(
    result: MatchResult, *, use_correctness: bool = False, iou_threshold: float = 0.5
) -> int:
    """Error flag for the uncertainty calibration metric.

    Default: 1 when the matched IoU is below ``iou_threshold`` (unmatched
    detections carry IoU 0 and are always errors). ``use_correctness``
    switches to the complement of the match flag instead.
    """
    if use_correctness:
        return 0 if result.correct else 1
    return 1 if result.matched_iou < iou_threshold else 0


def reliability_data(table: BinTable) -> list[ReliabilityBin]:
    """Per-bin records in ascending bin order, for diagrams and export."""
    records = []
    for m in range(table.bins):
        records.append(
            ReliabilityBin(
                bin_lo=m / table.bins,
                bin_hi=(m + 1) / table.bins,
                count=int(table.counts[m]),
                mean_conf=float(table.mean_conf[m]),
                mean_outcome=float(table.mean_outcome[m]),
                gap=float(table.gap[m]),
            )
        )
    return records


def reliability_records(table: BinTable) -> list[dict]:
    """Reliability data as JSON-ready dicts."""
    return [r._asdict() for r in reliability_data(table)]


def reliability_csv(table: BinTable) -> str:
    """Reliability data as CSV with the fixed column set."""
    lines = ["bin_lo,bin_hi,count,mean_conf,mean_outcome,gap"]
    for r in reliability_data(table):
        lines.append(
            f"{r.bin_lo},{r.bin_hi},{r.count},{r.mean_conf},{r.mean_outcome},{r.gap}"
        )
    return "\n".join(lines) + "\n"
