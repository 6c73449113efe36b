"""Calibration measurement and uncertainty tooling for object detection."""

from .geometry import BBox, iou, iou_grad, iou_matrix
from .matching import Detection, GroundTruthBox, MatchResult, match, scored_outcomes
from .metrics import (
    BinTable,
    ClsSample,
    d_ece,
    d_uce,
    detection_error,
    ece,
    reliability_csv,
    reliability_data,
    reliability_records,
)
from .posthoc import TemperatureModel, apply_temperature, fit_temperature
from .synth import Curve, SynthSpec, generate
from .tcd import TcdBatch, TcdValueGrad, d_cls, d_det, tcd_loss
from .uncertainty import (
    IctResult,
    McGroup,
    McPass,
    SoftTarget,
    group_detections,
    ict_pipeline,
    joint_uncertainty,
    soft_pseudo_target,
)

__version__ = "0.1.0"
