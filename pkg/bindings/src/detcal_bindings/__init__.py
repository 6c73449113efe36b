"""In-process bindings over the detcal engine.

Three entry points for embedding in a training framework:

* :func:`py_tcd_loss` — the auxiliary calibration loss plus gradients, fed
  from flat numeric buffers, usable as the forward/backward of a custom
  autograd node;
* :func:`py_d_ece` — detection expected calibration error over score and
  correctness buffers;
* :func:`py_ict` — soft pseudo-targets from an MC-pass payload (the same
  JSON object shape the CLI consumes).

Every buffer is copied at the boundary; callers keep ownership of their
memory and nothing is mutated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from detcal.io import mc_passes_from_dict
from detcal.metrics import d_ece
from detcal.tcd import TcdBatch, tcd_loss
from detcal.uncertainty import ict_pipeline

__version__ = "0.1.0"

__all__ = ["BoundBatch", "TcdLossResult", "py_tcd_loss", "py_d_ece", "py_ict"]


@dataclass(frozen=True)
class BoundBatch:
    """Validated, copied view of the flat loss-batch buffers."""

    s: np.ndarray
    q: np.ndarray
    positives: tuple[np.ndarray, ...]
    dims: tuple[int, int, int]

    @classmethod
    def from_buffers(cls, s, q, positives, dims) -> BoundBatch:
        L, R, K = (int(v) for v in dims)
        if L < 0 or R < 0 or K < 0:
            raise ValueError(f"dims must be non-negative, got {dims}")
        n = L * R * K
        s_arr = np.array(s, dtype=float, copy=True).ravel()
        q_arr = np.array(q, dtype=float, copy=True).ravel()
        if s_arr.size != n:
            raise ValueError(f"s buffer has {s_arr.size} values, dims imply {n}")
        if q_arr.size != n:
            raise ValueError(f"q buffer has {q_arr.size} values, dims imply {n}")
        pos = []
        for l, p in enumerate(positives):
            arr = np.array(p, dtype=float, copy=True)
            if arr.ndim == 1:
                if arr.size % 2:
                    raise ValueError(
                        f"flat positives buffer for image {l} must hold (iou, shat) "
                        f"pairs, got {arr.size} values"
                    )
                arr = arr.reshape(-1, 2)
            elif arr.ndim != 2 or (arr.size and arr.shape[1] != 2):
                raise ValueError(
                    f"positives for image {l} must be pairs, got shape {arr.shape}"
                )
            pos.append(arr.reshape(-1, 2))
        if len(pos) != L:
            raise ValueError(f"got positives for {len(pos)} images, dims say {L}")
        return cls(s=s_arr, q=q_arr, positives=tuple(pos), dims=(L, R, K))

    def to_engine_batch(self) -> TcdBatch:
        L, R, K = self.dims
        return TcdBatch(
            s=self.s.reshape(L, R, K),
            q=self.q.reshape(L, R, K),
            positives=[p.copy() for p in self.positives],
        )


@dataclass(frozen=True)
class TcdLossResult:
    """Loss value and gradient buffers, shaped like the inputs."""

    loss: float
    d_cls: float
    d_det: float
    grad_s: np.ndarray
    grad_shat: tuple[np.ndarray, ...]
    grad_iou: tuple[np.ndarray, ...]


def py_tcd_loss(s, q, positives, dims) -> TcdLossResult:
    """Calibration loss and gradients from flat row-major buffers.

    ``s`` and ``q`` hold L*R*K floats in row-major (L, R, K) order;
    ``positives`` holds, per image, (iou, shat) pairs either as an (N, 2)
    array or a flat buffer of 2N floats. Returns the loss, both
    components, and gradient buffers aligned with the inputs (grad_s is
    flat row-major, gradients for positives come as one array per image).
    """
    bound = BoundBatch.from_buffers(s, q, positives, dims)
    result = tcd_loss(bound.to_engine_batch())
    return TcdLossResult(
        loss=result.loss,
        d_cls=result.d_cls,
        d_det=result.d_det,
        grad_s=result.grad_s.ravel().copy(),
        grad_shat=tuple(g.copy() for g in result.grad_shat),
        grad_iou=tuple(g.copy() for g in result.grad_iou),
    )


def py_d_ece(scores, flags, bins: int = 10) -> float:
    """Detection expected calibration error over parallel buffers."""
    s = np.array(scores, dtype=float, copy=True).ravel()
    u = np.array(flags, copy=True).ravel().astype(bool)
    if s.size != u.size:
        raise ValueError(f"{s.size} scores but {u.size} flags")
    value, _ = d_ece(list(zip(s.tolist(), u.tolist())), bins)
    return value


def py_ict(
    payload: dict,
    *,
    gamma: float = 0.5,
    kappa1: float = 0.75,
    kappa2: float = 0.5,
    mode: str = "combined",
) -> list[dict]:
    """Soft pseudo-targets from an MC-pass payload dict.

    The payload uses the MC-pass file schema: image_id, width, height,
    and a list of passes with their detections. Returns one record per
    emitted (non-rejected) target: anchor, class, sbar, u, value, status.
    """
    mc = mc_passes_from_dict(payload)
    result = ict_pipeline(
        mc.passes,
        gamma=gamma,
        kappa1=kappa1,
        kappa2=kappa2,
        mode=mode,
        image_width=mc.width,
        image_height=mc.height,
    )
    return [
        {
            "anchor": list(t.anchor),
            "class": t.class_id,
            "sbar": t.sbar,
            "u": t.u,
            "value": t.value,
            "status": t.status,
        }
        for t in result.targets
    ]
