"""Mini-batch BPTT training of the GRU refiner and split-level evaluation.

Each batch is cut into fixed-size shards. Shards may be processed by a
thread pool, but their gradients are always reduced in shard order and the
dropout masks are seeded per (epoch, batch, shard), so the trajectory does
not depend on the number of workers.
"""

from __future__ import annotations

import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from . import optimizer
from .evaluator import EvalReport, evaluate
from .grid_codec import GroundTruthFrame, ModelConfig, decode_detections, encode_ground_truth, stack_targets
from .losses import LossBreakdown, total_loss
from .rnn import GruNetwork, backward, forward
from .sequence import VideoSequence

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 80
    batch_size: int = 128
    seq_len: int | None = None  # None accepts whatever length the dataset has
    shuffle_seed: int = 0
    dropout_seed: int = 1
    eval_every: int = 0
    lr: float = 1e-4
    rho: float = 0.9
    momentum: float = 0.9
    eps: float = 1e-8
    clip_norm: float | None = None
    workers: int = 1
    shard_size: int = 16

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1 or self.shard_size < 1 or self.workers < 1:
            raise ValueError("batch_size, shard_size and workers must be >= 1")
        if self.seq_len is not None and self.seq_len < 1:
            raise ValueError("seq_len must be >= 1")


def _stack(dataset: Sequence[VideoSequence], cfg: ModelConfig, seq_len: int | None = None):
    if not dataset:
        raise ValueError("dataset is empty")
    lengths = {s.T for s in dataset}
    if len(lengths) != 1:
        raise ValueError(f"sequences have inconsistent lengths {sorted(lengths)}")
    T = lengths.pop()
    if seq_len is not None and T != seq_len:
        raise ValueError(f"sequences have length {T}, training expects {seq_len}")
    X = np.stack([s.pseudo for s in dataset])
    if X.shape[2] != cfg.frame_dim:
        raise ValueError(f"pseudo-label size {X.shape[2]} does not match config frame size {cfg.frame_dim}")
    gts = [encode_ground_truth(s.final_objects, cfg) for s in dataset]
    return X, gts


def _take(gt: GroundTruthFrame, idx) -> GroundTruthFrame:
    return GroundTruthFrame([], gt.obj[idx], gt.boxes[idx], gt.probs[idx])


def loss_and_grads(net: GruNetwork, X, gt: GroundTruthFrame, cfg: ModelConfig,
                   train: bool = False, rng_seed=None, scale: float = 1.0):
    """Per-sequence losses and the parameter gradient of ``scale * sum(losses)``.

    ``X`` is ``(N, T, D)`` and ``gt`` a stacked final-frame target.
    """
    preds, cache = forward(net, X, train=train, rng_seed=rng_seed)
    parts, dpred = total_loss(preds, X, gt, cfg)
    return parts, backward(net, cache, dpred * scale)


def _add_into(acc: dict | None, grads: dict) -> dict:
    if acc is None:
        return {k: v.copy() for k, v in grads.items()}
    for k, v in grads.items():
        acc[k] += v
    return acc


def train(
    dataset: Sequence[VideoSequence],
    net: GruNetwork,
    cfg: ModelConfig,
    train_cfg: TrainConfig,
    opt_state: optimizer.OptState | None = None,
    log_stream: TextIO | None = None,
    eval_set: Sequence[VideoSequence] | None = None,
):
    """Train a copy of ``net``. Returns ``(trained_net, history)`` where
    history holds the mean per-sequence LossBreakdown of each epoch."""
    net = net.copy()
    X, gts = _stack(dataset, cfg, train_cfg.seq_len)
    G = stack_targets(gts)
    N = X.shape[0]
    params = net.params()
    if opt_state is None:
        opt_state = optimizer.OptState.for_params(
            params, lr=train_cfg.lr, rho=train_cfg.rho, mu=train_cfg.momentum,
            eps=train_cfg.eps, clip_norm=train_cfg.clip_norm,
        )
    shuffle = np.random.default_rng(train_cfg.shuffle_seed)
    history: list[LossBreakdown] = []
    pool = ThreadPoolExecutor(train_cfg.workers) if train_cfg.workers > 1 else None

    def run_shard(job):
        idx, seed, scale = job
        return loss_and_grads(net, X[idx], _take(G, idx), cfg, train=True, rng_seed=seed, scale=scale)

    try:
        for epoch in range(train_cfg.epochs):
            order = shuffle.permutation(N)
            sums = np.zeros(5)
            for b, start in enumerate(range(0, N, train_cfg.batch_size)):
                batch = order[start : start + train_cfg.batch_size]
                jobs = [
                    (batch[s : s + train_cfg.shard_size],
                     np.random.SeedSequence([train_cfg.dropout_seed, epoch, b, k]),
                     1.0 / len(batch))
                    for k, s in enumerate(range(0, len(batch), train_cfg.shard_size))
                ]
                results = pool.map(run_shard, jobs) if pool else map(run_shard, jobs)
                acc = None
                for parts, grads in results:
                    sums += [np.sum(v) for v in parts.as_tuple()]
                    acc = _add_into(acc, grads)
                optimizer.step(params, acc, opt_state)
            mean = LossBreakdown(*(float(v) for v in sums / N))
            history.append(mean)
            record = {"epoch": epoch + 1, **mean.as_dict()}
            if eval_set is not None and train_cfg.eval_every and (epoch + 1) % train_cfg.eval_every == 0:
                record["map"] = evaluate_split(eval_set, net, cfg).mAP
            log.debug("epoch %d: %s", epoch + 1, record)
            if log_stream is not None:
                log_stream.write(json.dumps(record) + "\n")
                log_stream.flush()
    finally:
        if pool:
            pool.shutdown()
    return net, history


def predict(net: GruNetwork, dataset: Sequence[VideoSequence], chunk: int = 256) -> np.ndarray:
    """Eval-mode predictions for every sequence, shape (N, T, D)."""
    X = np.stack([s.pseudo for s in dataset])
    return np.concatenate([forward(net, X[k : k + chunk])[0] for k in range(0, len(X), chunk)])


def evaluate_frames(frames: Iterable[np.ndarray], dataset: Sequence[VideoSequence], cfg: ModelConfig,
                    iou_thresh: float = 0.5) -> EvalReport:
    dets = [decode_detections(f, cfg) for f in frames]
    return evaluate(dets, [s.final_objects for s in dataset], cfg.evaluated_classes, iou_thresh)


def evaluate_split(dataset: Sequence[VideoSequence], net: GruNetwork, cfg: ModelConfig,
                   iou_thresh: float = 0.5) -> EvalReport:
    """Score the refined final-step predictions against final-frame ground truth."""
    preds = predict(net, dataset)
    return evaluate_frames(preds[:, -1], dataset, cfg, iou_thresh)


def evaluate_pseudo(dataset: Sequence[VideoSequence], cfg: ModelConfig, iou_thresh: float = 0.5) -> EvalReport:
    """Baseline: score the raw final-frame pseudo-labels."""
    return evaluate_frames((s.pseudo[-1] for s in dataset), dataset, cfg, iou_thresh)


def grid_search_weights(
    train_set: Sequence[VideoSequence],
    val_set: Sequence[VideoSequence],
    make_net: Callable[[], GruNetwork],
    cfg: ModelConfig,
    train_cfg: TrainConfig,
    alphas: Iterable[float],
    betas: Iterable[float],
    gammas: Iterable[float],
):
    """Pick (alpha, beta, gamma) by validation mAP over a user-supplied grid.

    Returns ``(best_weights, results)`` with results as
    ``[((alpha, beta, gamma), mAP), ...]`` in grid order.
    """
    results = []
    for a, b, g in itertools.product(alphas, betas, gammas):
        trial = replace(cfg, alpha=a, beta=b, gamma=g)
        trained, _ = train(train_set, make_net(), trial, train_cfg)
        results.append(((a, b, g), evaluate_split(val_set, trained, trial).mAP))
    best = max(results, key=lambda r: r[1])[0]
    return best, results
