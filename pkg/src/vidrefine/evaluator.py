"""VOC-style evaluation: greedy matching, 11-point interpolated AP, mAP."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import BoxGeometry, Detection, iou
from .grid_codec import GroundTruthFrame


@dataclass
class MatchResult:
    # one (class_id, score, is_tp) per detection, in input order
    records: list[tuple[int, float, bool]] = field(default_factory=list)
    gt_counts: dict[int, int] = field(default_factory=dict)


def _objects(gt) -> list[tuple[int, BoxGeometry]]:
    if isinstance(gt, GroundTruthFrame):
        return gt.objects
    return [(int(c), b) for c, b in gt]


def match(dets: Sequence[Detection], gt, iou_thresh: float = 0.5) -> MatchResult:
    """Mark each detection TP or FP against one frame's ground truth.

    Per class, detections are visited by descending score (ties by input
    order). Each takes the unmatched same-class ground-truth box of highest
    IoU and is a TP when that IoU reaches ``iou_thresh``.
    """
    objects = _objects(gt)
    counts: dict[int, int] = {}
    for c, _ in objects:
        counts[c] = counts.get(c, 0) + 1

    flags = [False] * len(dets)
    used = [False] * len(objects)
    order = sorted(range(len(dets)), key=lambda k: -dets[k].score)
    for k in order:
        d = dets[k]
        best, best_iou = -1, -1.0
        for j, (c, box) in enumerate(objects):
            if c != d.class_id or used[j]:
                continue
            v = iou(d.box, box)
            if v > best_iou:
                best, best_iou = j, v
        if best >= 0 and best_iou >= iou_thresh:
            used[best] = True
            flags[k] = True
    records = [(d.class_id, d.score, flags[k]) for k, d in enumerate(dets)]
    return MatchResult(records, counts)


def pool(results: Iterable[MatchResult]) -> MatchResult:
    pooled = MatchResult()
    for r in results:
        pooled.records.extend(r.records)
        for c, n in r.gt_counts.items():
            pooled.gt_counts[c] = pooled.gt_counts.get(c, 0) + n
    return pooled


def precision_recall(matches: MatchResult, class_id: int):
    """Cumulative (tp, fp) counts down the score ranking of one class."""
    recs = [(s, tp) for c, s, tp in matches.records if c == class_id]
    scores = np.array([s for s, _ in recs], dtype=float)
    tps = np.array([tp for _, tp in recs], dtype=bool)
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(tps[order])
    fp = np.cumsum(~tps[order])
    return tp, fp


def average_precision(matches: MatchResult, class_id: int) -> float:
    """11-point interpolated AP. A class without ground truth scores 0."""
    npos = matches.gt_counts.get(class_id, 0)
    if npos == 0:
        return 0.0
    tp, fp = precision_recall(matches, class_id)
    if tp.size == 0:
        return 0.0
    precision = tp / (tp + fp)
    ap = 0.0
    for k in range(11):
        # recall >= k/10, compared exactly in integers
        reached = 10 * tp >= k * npos
        ap += precision[reached].max() if reached.any() else 0.0
    return ap / 11


def mean_ap(per_class_ap: dict[int, float], active_classes: Sequence[int]) -> float:
    if len(active_classes) == 0:
        raise ValueError("mean_ap needs at least one active class")
    return float(sum(per_class_ap.get(c, 0.0) for c in active_classes) / len(active_classes))


@dataclass
class EvalReport:
    per_class: dict[int, float]
    mAP: float
    matches: MatchResult

    def table(self, class_names: Sequence[str] | None = None) -> str:
        lines = [f"{'class':>12}  {'AP':>8}  {'n_gt':>5}"]
        for c, ap in self.per_class.items():
            name = class_names[c] if class_names else str(c)
            lines.append(f"{name:>12}  {100 * ap:8.2f}  {self.matches.gt_counts.get(c, 0):5d}")
        lines.append(f"{'mAP':>12}  {100 * self.mAP:8.2f}")
        return "\n".join(lines)

    def records(self) -> list[str]:
        out = [
            json.dumps({"kind": "ap", "class_id": c, "ap": ap, "n_gt": self.matches.gt_counts.get(c, 0)})
            for c, ap in self.per_class.items()
        ]
        out.append(json.dumps({"kind": "map", "map": self.mAP, "n_classes": len(self.per_class)}))
        return out


def evaluate(
    frame_dets: Sequence[Sequence[Detection]],
    frame_gts: Sequence,
    active_classes: Sequence[int],
    iou_thresh: float = 0.5,
) -> EvalReport:
    """Pool detections over frames (in frame order) and score every active class."""
    if len(frame_dets) != len(frame_gts):
        raise ValueError(f"{len(frame_dets)} detection frames vs {len(frame_gts)} ground-truth frames")
    pooled = pool(match(d, g, iou_thresh) for d, g in zip(frame_dets, frame_gts))
    per_class = {c: average_precision(pooled, c) for c in active_classes}
    return EvalReport(per_class, mean_ap(per_class, active_classes), pooled)
