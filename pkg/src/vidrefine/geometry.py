"""Axis-aligned box arithmetic, IoU and per-class non-maximum suppression.

Boxes are in center form ``(cx, cy, w, h)`` with coordinates normalized to
the image, so ``[0, 1]`` covers the full frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class BoxGeometry:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w >= 0 and self.h >= 0):
            raise ValueError(f"box size must be non-negative, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> tuple[float, float, float, float]:
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BoxGeometry":
        return cls((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=float)


@dataclass(frozen=True)
class Detection:
    class_id: int
    box: BoxGeometry
    score: float

    def __post_init__(self):
        if not self.score >= 0:
            raise ValueError(f"detection score must be non-negative, got {self.score}")


def iou_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Broadcasting IoU over center-form boxes stored in the last axis.

    Zero-union pairs (two degenerate boxes) give 0.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ax1 = a[..., 0] - a[..., 2] / 2
    ay1 = a[..., 1] - a[..., 3] / 2
    ax2 = a[..., 0] + a[..., 2] / 2
    ay2 = a[..., 1] + a[..., 3] / 2
    bx1 = b[..., 0] - b[..., 2] / 2
    by1 = b[..., 1] - b[..., 3] / 2
    bx2 = b[..., 0] + b[..., 2] / 2
    by2 = b[..., 1] + b[..., 3] / 2

    iw = np.maximum(0.0, np.minimum(ax2, bx2) - np.maximum(ax1, bx1))
    ih = np.maximum(0.0, np.minimum(ay2, by2) - np.maximum(ay1, by1))
    inter = iw * ih
    union = a[..., 2] * a[..., 3] + b[..., 2] * b[..., 3] - inter
    safe = np.where(union > 0, union, 1.0)
    # corner round-off on tiny boxes can push the ratio a hair above 1
    return np.where(union > 0, np.minimum(inter / safe, 1.0), 0.0)


def iou(a: BoxGeometry, b: BoxGeometry) -> float:
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return min(inter / union, 1.0)


def score_order(dets: Sequence[Detection]) -> list[int]:
    """Indices sorted by descending score, ties by class id then input position."""
    return sorted(range(len(dets)), key=lambda k: (-dets[k].score, dets[k].class_id, k))


def nms(dets: Sequence[Detection], iou_threshold: float = 0.5) -> list[Detection]:
    """Greedy per-class non-maximum suppression.

    A detection survives iff its IoU with every already-kept detection of the
    same class is strictly below ``iou_threshold``. Detections of different
    classes never suppress each other. The result is in score order.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in [0, 1], got {iou_threshold}")
    kept: list[Detection] = []
    by_class: dict[int, list[BoxGeometry]] = {}
    for k in score_order(dets):
        d = dets[k]
        same = by_class.setdefault(d.class_id, [])
        if all(iou(d.box, other) < iou_threshold for other in same):
            kept.append(d)
            same.append(d.box)
    return kept
