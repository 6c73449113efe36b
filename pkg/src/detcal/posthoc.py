"""Post-hoc temperature scaling of detection confidences.

A single scalar temperature T rescales scores through the logit: the model
maps s to sigmoid(logit(s) / T). The transform is strictly increasing for
any T > 0, so score rankings (and therefore matching outcomes and average
precision) are unchanged; only the confidence values move. T is fitted on
a held-out set of (score, correct) pairs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .metrics import d_ece

SCORE_EPS = 1e-7
T_GRID_LO = 0.05
T_GRID_HI = 20.0
T_TOL = 1e-3

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _logits(scores: np.ndarray) -> np.ndarray:
    s = np.clip(np.asarray(scores, dtype=float), SCORE_EPS, 1.0 - SCORE_EPS)
    return np.log(s) - np.log1p(-s)


def apply_temperature(score: float, temperature: float) -> float:
    """Rescale one score: sigmoid(logit(score) / temperature).

    Scores are clamped to [1e-7, 1 - 1e-7] before the logit so boundary
    values stay finite.
    """
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = float(_logits(np.array([score]))[0]) / temperature
    return float(1.0 / (1.0 + math.exp(-z)))


@dataclass(frozen=True)
class TemperatureModel:
    temperature: float

    def __post_init__(self):
        if not (math.isfinite(self.temperature) and self.temperature > 0.0):
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    def apply(self, score: float) -> float:
        return apply_temperature(score, self.temperature)

    def apply_all(self, scores: Sequence[float]) -> np.ndarray:
        z = _logits(np.asarray(scores, dtype=float)) / self.temperature
        return 1.0 / (1.0 + np.exp(-z))

    def to_json(self) -> str:
        return json.dumps({"temperature": self.temperature}) + "\n"

    @classmethod
    def from_json(cls, text: str) -> TemperatureModel:
        return cls(float(json.loads(text)["temperature"]))


def _nll(logits: np.ndarray, flags: np.ndarray, temperature: float) -> float:
    # Mean binary cross-entropy between the rescaled score and the flag,
    # computed from logits for stability: BCE = u*softplus(-z) + (1-u)*softplus(z).
    z = logits / temperature
    return float(
        np.mean(flags * np.logaddexp(0.0, -z) + (1.0 - flags) * np.logaddexp(0.0, z))
    )


def fit_temperature(
    pairs: Sequence[tuple[float, bool]],
    objective: str = "nll",
    bins: int = 10,
) -> TemperatureModel:
    """Fit the temperature minimizing ``objective`` on validation pairs.

    Deterministic search: coarse log-spaced grid over [0.05, 20], then
    golden-section refinement of the bracketing interval to width < 1e-3.

    objective "nll" needs at least one correct and one incorrect pair;
    "d_ece" minimizes the binned detection calibration error directly.
    """
    if objective not in ("nll", "d_ece"):
        raise ValueError(f"unknown objective {objective!r}")
    if not pairs:
        raise ValueError("cannot fit a temperature on an empty validation set")

    scores = np.array([s for s, _ in pairs], dtype=float)
    if np.any(scores < 0.0) or np.any(scores > 1.0):
        raise ValueError("validation scores must lie in [0, 1]")
    flags = np.array([float(u) for _, u in pairs])
    logits = _logits(scores)

    if objective == "nll":
        if flags.min() == flags.max():
            raise ValueError(
                "nll objective is degenerate on an all-correct or all-wrong set"
            )
        objective_fn = lambda t: _nll(logits, flags, t)
    else:
        transformed = lambda t: 1.0 / (1.0 + np.exp(-logits / t))
        objective_fn = lambda t: d_ece(list(zip(transformed(t), flags)), bins)[0]

    grid = np.geomspace(T_GRID_LO, T_GRID_HI, 61)
    values = [objective_fn(t) for t in grid]
    best = int(np.argmin(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, len(grid) - 1)]

    # Golden-section refinement inside the bracketing grid interval.
    a, b = float(lo), float(hi)
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = objective_fn(c), objective_fn(d)
    while b - a > T_TOL:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = objective_fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = objective_fn(d)
    return TemperatureModel(0.5 * (a + b))
