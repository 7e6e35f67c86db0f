"""Training objective: detection, similarity, category and consistency terms.

Every function returns ``(value, gradient)`` where the gradient has the
shape of the prediction argument. Inputs may carry leading batch axes; the
value then has the shape of those axes (one loss per sequence).

Predictions are flat frames, ``(..., D)`` for a single step and
``(..., T, D)`` for a sequence, with ``D = S*S*(5B+C)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import iou_array
from .grid_codec import FrameTensor, GroundTruthFrame, ModelConfig, to_image_scale


@dataclass
class LossBreakdown:
    detection: float | np.ndarray
    similarity: float | np.ndarray
    category: float | np.ndarray
    consistency: float | np.ndarray
    total: float | np.ndarray

    def mean(self) -> "LossBreakdown":
        return LossBreakdown(*(float(np.mean(v)) for v in self.as_tuple()))

    def as_tuple(self):
        return (self.detection, self.similarity, self.category, self.consistency, self.total)

    def as_dict(self) -> dict[str, float]:
        keys = ("d_loss", "s_loss", "c_loss", "pc_loss", "total")
        return {k: float(np.mean(v)) for k, v in zip(keys, self.as_tuple())}


def _cells(y: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    if isinstance(y, FrameTensor):
        return y.data
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != cfg.frame_dim:
        raise ValueError(f"prediction last axis {y.shape[-1]} != frame size {cfg.frame_dim}")
    return y.reshape(*y.shape[:-1], cfg.cells, cfg.cell_dim)


def _clamped_confidence(cells: np.ndarray, cfg: ModelConfig):
    """Cell confidence max_j conf_j clamped at 0, the argmax box, and the
    mask of cells where the clamp is inactive (where gradient flows)."""
    conf = cells[..., 4 : 5 * cfg.B : 5]
    best = np.argmax(conf, axis=-1)
    cmax = np.take_along_axis(conf, best[..., None], axis=-1)[..., 0]
    live = cmax > 0
    return np.where(live, cmax, 0.0), best, live


def _scatter_confidence(grad_cells: np.ndarray, best: np.ndarray, dconf: np.ndarray, cfg: ModelConfig):
    """Add ``dconf`` to the confidence slot of the argmax box of each cell."""
    onehot = np.arange(cfg.B) == best[..., None]
    grad_cells[..., 4 : 5 * cfg.B : 5] += onehot * dconf[..., None]


def detection_loss(pred_T, gt: GroundTruthFrame, cfg: ModelConfig):
    """Multi-part YOLO loss on the final-step prediction.

    Object cells supervise the responsible box (max IoU with the target,
    chosen per call and held constant for the gradient) on center, square
    root size and confidence (target 1), plus the class distribution. All
    other boxes are pushed toward confidence 0 with weight ``lambda_noobj``.
    Negative predicted sizes clamp to 0 under the square root.
    """
    shape_in = np.shape(pred_T.data if isinstance(pred_T, FrameTensor) else pred_T)
    cells = _cells(pred_T, cfg)
    B = cfg.B
    boxes = cells[..., : 5 * B].reshape(*cells.shape[:-1], B, 5)
    pb, pc = boxes[..., :4], boxes[..., 4]
    probs = cells[..., 5 * B :]
    obj = np.asarray(gt.obj, dtype=float)
    tbox = np.asarray(gt.boxes, dtype=float)
    if obj.shape != cells.shape[:-1]:
        raise ValueError(f"ground truth grid {obj.shape} does not match prediction {cells.shape[:-1]}")

    ious = iou_array(to_image_scale(pb, cfg.S), to_image_scale(tbox[..., None, :], cfg.S))
    resp = (np.arange(B) == np.argmax(ious, axis=-1)[..., None]) * obj[..., None]
    noobj = 1.0 - resp

    lc, ln = cfg.lambda_coord, cfg.lambda_noobj
    dxy = pb[..., :2] - tbox[..., None, :2]
    pos_w = pb[..., 2:] > 0
    sqrt_p = np.sqrt(np.where(pos_w, pb[..., 2:], 0.0))
    dwh = sqrt_p - np.sqrt(np.maximum(tbox[..., None, 2:], 0.0))
    dconf_obj = pc - 1.0
    dprob = probs - np.asarray(gt.probs, dtype=float)

    red = (-2, -1)
    value = (
        lc * np.sum(resp[..., None] * dxy**2, axis=(-3, -2, -1))
        + lc * np.sum(resp[..., None] * dwh**2, axis=(-3, -2, -1))
        + np.sum(resp * dconf_obj**2, axis=red)
        + ln * np.sum(noobj * pc**2, axis=red)
        + np.sum(obj[..., None] * dprob**2, axis=red)
    )

    gboxes = np.zeros_like(boxes)
    gboxes[..., :2] = 2 * lc * resp[..., None] * dxy
    safe = np.where(pos_w, sqrt_p, 1.0)
    gboxes[..., 2:4] = np.where(pos_w, 2 * lc * resp[..., None] * dwh / (2 * safe), 0.0)
    gboxes[..., 4] = 2 * resp * dconf_obj + 2 * ln * noobj * pc
    grad = np.concatenate(
        [gboxes.reshape(*cells.shape[:-1], 5 * B), 2 * obj[..., None] * dprob], axis=-1
    )
    return value[()], grad.reshape(shape_in)


def similarity_loss(preds, pseudo, cfg: ModelConfig):
    """Confidence-weighted squared distance between predictions and
    pseudo-labels, summed over steps and cells. The weight is the
    prediction's own clamped cell confidence and is differentiated too."""
    preds = np.asarray(preds, dtype=float)
    pseudo = np.asarray(pseudo, dtype=float)
    if preds.shape != pseudo.shape:
        raise ValueError(f"prediction shape {preds.shape} != pseudo-label shape {pseudo.shape}")
    cells = _cells(preds, cfg)
    res = cells - _cells(pseudo, cfg)
    w, best, live = _clamped_confidence(cells, cfg)
    sq = np.sum(res**2, axis=-1)
    value = np.sum(w * sq, axis=(-2, -1))

    grad = 2 * w[..., None] * res
    _scatter_confidence(grad, best, np.where(live, sq, 0.0), cfg)
    return value[()], grad.reshape(preds.shape)


def category_loss(preds, gt: GroundTruthFrame, cfg: ModelConfig):
    """Per-step, per-class squared gap between confidence-weighted predicted
    class mass and the final-frame ground-truth class counts."""
    preds = np.asarray(preds, dtype=float)
    cells = _cells(preds, cfg)
    probs = cells[..., 5 * cfg.B :]
    w, best, live = _clamped_confidence(cells, cfg)
    obj = np.asarray(gt.obj, dtype=float)
    if obj.shape[-1] != cfg.cells:
        raise ValueError(f"ground truth has {obj.shape[-1]} cells, expected {cfg.cells}")
    target = np.einsum("...i,...ic->...c", obj, np.asarray(gt.probs, dtype=float))
    agg = np.einsum("...ti,...tic->...tc", w, probs)
    diff = agg - target[..., None, :]
    value = np.sum(diff**2, axis=(-2, -1))

    grad = np.zeros_like(cells)
    grad[..., 5 * cfg.B :] = 2 * diff[..., None, :] * w[..., None]
    dw = 2 * np.einsum("...tc,...tic->...ti", diff, probs)
    _scatter_confidence(grad, best, np.where(live, dw, 0.0), cfg)
    return value[()], grad.reshape(preds.shape)


def consistency_loss(preds, cfg: ModelConfig | None = None):
    """Sum of squared differences between consecutive prediction vectors."""
    preds = np.asarray(preds, dtype=float)
    d = preds[..., 1:, :] - preds[..., :-1, :]
    value = np.sum(d**2, axis=(-2, -1))
    grad = np.zeros_like(preds)
    grad[..., 1:, :] += 2 * d
    grad[..., :-1, :] -= 2 * d
    return value[()], grad


def total_loss(preds, pseudo, gt: GroundTruthFrame, cfg: ModelConfig):
    """Weighted objective ``d + alpha*s + beta*c + gamma*pc``.

    ``gt`` is the final-step ground truth; detection applies to the last
    prediction only. Returns ``(LossBreakdown, gradient)``.
    """
    preds = np.asarray(preds, dtype=float)
    d, gd = detection_loss(preds[..., -1, :], gt, cfg)
    s, gs = similarity_loss(preds, pseudo, cfg)
    c, gc = category_loss(preds, gt, cfg)
    pc, gpc = consistency_loss(preds, cfg)
    total = d + cfg.alpha * s + cfg.beta * c + cfg.gamma * pc
    grad = cfg.alpha * gs + cfg.beta * gc + cfg.gamma * gpc
    grad[..., -1, :] += gd
    return LossBreakdown(d, s, c, pc, total), grad
