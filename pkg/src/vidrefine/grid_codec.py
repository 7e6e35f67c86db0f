"""YOLO-style grid tensors: flat layout, ground-truth targets and decoding.

Flat layout of one frame (normative for every file format): cells in
row-major order; inside a cell, ``B`` blocks of ``(cx, cy, w, h, conf)``
followed by ``C`` class probabilities. ``cx, cy`` are offsets within the
cell in ``[0, 1]``; ``w, h`` are normalized to the image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import BoxGeometry, Detection, iou_array, nms

ObjectList = Sequence[tuple[int, BoxGeometry]]


@dataclass(frozen=True)
class ModelConfig:
    S: int = 7
    B: int = 2
    C: int = 20
    T: int = 30
    alpha: float = 0.2
    beta: float = 0.2
    gamma: float = 0.1
    lambda_coord: float = 5.0
    lambda_noobj: float = 0.5
    detect_threshold: float = 0.2
    nms_iou: float = 0.5
    # classes scored by mAP; None means all C
    active_classes: tuple[int, ...] | None = None

    def __post_init__(self):
        for name in ("S", "B", "C", "T"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("alpha", "beta", "gamma", "lambda_coord", "lambda_noobj"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.nms_iou <= 1.0:
            raise ValueError(f"nms_iou must lie in [0, 1], got {self.nms_iou}")
        if self.active_classes is not None:
            object.__setattr__(self, "active_classes", tuple(int(c) for c in self.active_classes))
            if not self.active_classes or any(not 0 <= c < self.C for c in self.active_classes):
                raise ValueError(f"active_classes must be a non-empty subset of [0, {self.C})")

    @property
    def cells(self) -> int:
        return self.S * self.S

    @property
    def cell_dim(self) -> int:
        return 5 * self.B + self.C

    @property
    def frame_dim(self) -> int:
        return self.cells * self.cell_dim

    @property
    def evaluated_classes(self) -> tuple[int, ...]:
        if self.active_classes is None:
            return tuple(range(self.C))
        return self.active_classes


@dataclass
class CellPrediction:
    boxes: np.ndarray  # (B, 4): cx, cy offsets within the cell, w, h image-normalized
    confidences: np.ndarray  # (B,)
    class_probs: np.ndarray  # (C,)


class FrameTensor:
    """One frame of grid predictions, stored as a ``(S*S, 5B+C)`` array."""

    def __init__(self, data: np.ndarray, cfg: ModelConfig):
        data = np.asarray(data, dtype=float)
        if data.shape != (cfg.cells, cfg.cell_dim):
            raise ValueError(
                f"frame shape {data.shape} does not match ({cfg.cells}, {cfg.cell_dim})"
            )
        self.data = data
        self.cfg = cfg

    @classmethod
    def zeros(cls, cfg: ModelConfig) -> "FrameTensor":
        return cls(np.zeros((cfg.cells, cfg.cell_dim)), cfg)

    @property
    def box_block(self) -> np.ndarray:
        """View of shape (S*S, B, 5)."""
        B = self.cfg.B
        return self.data[:, : 5 * B].reshape(self.cfg.cells, B, 5)

    @property
    def class_probs(self) -> np.ndarray:
        return self.data[:, 5 * self.cfg.B :]

    def cell(self, i: int) -> CellPrediction:
        blk = self.box_block[i]
        return CellPrediction(blk[:, :4].copy(), blk[:, 4].copy(), self.class_probs[i].copy())

    def __eq__(self, other):
        if not isinstance(other, FrameTensor):
            return NotImplemented
        return self.cfg == other.cfg and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"FrameTensor(S={self.cfg.S}, B={self.cfg.B}, C={self.cfg.C})"


def flatten(frame: FrameTensor, cfg: ModelConfig) -> np.ndarray:
    if frame.data.shape != (cfg.cells, cfg.cell_dim):
        raise ValueError(f"frame shape {frame.data.shape} does not match config")
    return frame.data.reshape(-1).copy()


def unflatten(v: np.ndarray, cfg: ModelConfig) -> FrameTensor:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != cfg.frame_dim:
        raise ValueError(f"expected a flat vector of length {cfg.frame_dim}, got shape {v.shape}")
    return FrameTensor(v.reshape(cfg.cells, cfg.cell_dim).copy(), cfg)


def cell_index(cx: float, cy: float, S: int) -> tuple[int, int]:
    """(row, col) of the cell owning a point; boundaries go to the higher cell."""
    col = min(int(math.floor(cx * S)), S - 1)
    row = min(int(math.floor(cy * S)), S - 1)
    return row, col


@dataclass
class GroundTruthFrame:
    """Labeled objects of one frame and their grid target.

    ``obj`` is the per-cell object indicator, ``boxes`` the target box in
    cell parameterization and ``probs`` the one-hot target class.
    """

    objects: list[tuple[int, BoxGeometry]]
    obj: np.ndarray  # (S*S,)
    boxes: np.ndarray  # (S*S, 4)
    probs: np.ndarray  # (S*S, C)
    kept: list[int] = field(default_factory=list)  # indices into objects owning a cell


def _check_in_image(box: BoxGeometry, tol: float = 1e-9) -> None:
    x1, y1, x2, y2 = box.corners()
    if x1 < -tol or y1 < -tol or x2 > 1 + tol or y2 > 1 + tol:
        raise ValueError(f"box {box} lies outside the [0,1]^2 image")


def encode_ground_truth(objects: ObjectList, cfg: ModelConfig) -> GroundTruthFrame:
    """Assign each object to the cell containing its center.

    When two centers fall in the same cell the larger-area object wins; on
    equal area the earlier one is kept.
    """
    S, C = cfg.S, cfg.C
    owner: dict[int, int] = {}
    objects = [(int(c), b) for c, b in objects]
    for k, (c, box) in enumerate(objects):
        if not 0 <= c < C:
            raise ValueError(f"class id {c} outside [0, {C})")
        _check_in_image(box)
        row, col = cell_index(box.cx, box.cy, S)
        i = row * S + col
        if i not in owner or box.area > objects[owner[i]][1].area:
            owner[i] = k

    obj = np.zeros(cfg.cells)
    boxes = np.zeros((cfg.cells, 4))
    probs = np.zeros((cfg.cells, C))
    for i, k in owner.items():
        c, box = objects[k]
        row, col = divmod(i, S)
        obj[i] = 1.0
        boxes[i] = (box.cx * S - col, box.cy * S - row, box.w, box.h)
        probs[i, c] = 1.0
    return GroundTruthFrame(objects, obj, boxes, probs, sorted(owner.values()))


def ideal_frame(gt: GroundTruthFrame, cfg: ModelConfig) -> FrameTensor:
    """Tensor a perfect predictor would emit: box 0 carries the target with
    confidence 1, the remaining boxes are zero, classes are one-hot."""
    frame = FrameTensor.zeros(cfg)
    blk = frame.box_block
    blk[:, 0, :4] = gt.boxes * gt.obj[:, None]
    blk[:, 0, 4] = gt.obj
    frame.class_probs[:] = gt.probs
    return frame


def cell_confidence(cell: CellPrediction) -> float:
    return float(np.max(cell.confidences))


def to_image_scale(boxes: np.ndarray, S: int) -> np.ndarray:
    """Rescale cell-offset centers by 1/S, dropping the common cell origin.

    Only valid for comparing boxes that live in the same cell; negative
    sizes are clamped to 0.
    """
    out = np.array(boxes, dtype=float)
    out[..., :2] /= S
    out[..., 2:] = np.maximum(out[..., 2:], 0.0)
    return out


def responsible_box(cell: CellPrediction, gt_box: np.ndarray | BoxGeometry, S: int) -> int:
    """Index of the box with maximum IoU against the cell's target; ties go low.

    ``gt_box`` is in the same cell parameterization as ``cell.boxes``.
    """
    if isinstance(gt_box, BoxGeometry):
        gt_box = gt_box.as_array()
    ious = iou_array(to_image_scale(cell.boxes, S), to_image_scale(gt_box, S))
    return int(np.argmax(ious))


def cell_to_image(box: np.ndarray, cell: int, S: int) -> BoxGeometry:
    row, col = divmod(cell, S)
    return BoxGeometry(
        (col + float(box[0])) / S,
        (row + float(box[1])) / S,
        max(float(box[2]), 0.0),
        max(float(box[3]), 0.0),
    )


def candidate_detections(frame: FrameTensor, cfg: ModelConfig) -> list[Detection]:
    """Per-cell, per-class detections before NMS.

    The cell's max-confidence box is used. Confidence and class probability
    are clamped at 0 before taking their product, so a pair of negative
    outputs from the linear head cannot fake a detection.
    """
    blk = frame.box_block
    conf = blk[:, :, 4]
    best = np.argmax(conf, axis=1)
    cell_conf = np.maximum(conf[np.arange(cfg.cells), best], 0.0)
    scores = cell_conf[:, None] * np.maximum(frame.class_probs, 0.0)
    dets = []
    for i, c in zip(*np.nonzero(scores > cfg.detect_threshold)):
        box = cell_to_image(blk[i, best[i], :4], int(i), cfg.S)
        dets.append(Detection(int(c), box, float(scores[i, c])))
    return dets


def decode_detections(frame: FrameTensor | np.ndarray, cfg: ModelConfig) -> list[Detection]:
    if not isinstance(frame, FrameTensor):
        frame = unflatten(frame, cfg)
    return nms(candidate_detections(frame, cfg), cfg.nms_iou)


def stack_targets(gts: Iterable[GroundTruthFrame]) -> GroundTruthFrame:
    """Batch several targets along a new leading axis (objects are concatenated)."""
    gts = list(gts)
    return GroundTruthFrame(
        [o for g in gts for o in g.objects],
        np.stack([g.obj for g in gts]),
        np.stack([g.boxes for g in gts]),
        np.stack([g.probs for g in gts]),
    )
