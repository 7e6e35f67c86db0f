"""Temporal refinement of grid-based video object detections with a GRU."""

from .geometry import BoxGeometry, Detection, iou, nms
from .grid_codec import FrameTensor, GroundTruthFrame, ModelConfig, decode_detections, encode_ground_truth
from .losses import LossBreakdown, total_loss
from .rnn import GruNetwork, init_params
from .sequence import VideoSequence

__all__ = [
    "BoxGeometry", "Detection", "iou", "nms",
    "FrameTensor", "GroundTruthFrame", "ModelConfig", "decode_detections", "encode_ground_truth",
    "LossBreakdown", "total_loss",
    "GruNetwork", "init_params",
    "VideoSequence",
]
