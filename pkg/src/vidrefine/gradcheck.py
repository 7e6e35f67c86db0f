"""Central finite-difference checks of every analytic gradient.

The reference derivative perturbs one coordinate at a time by
``h = rel_step * max(1, |x|)`` and is independent of the backward code.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .geometry import BoxGeometry
from .grid_codec import GroundTruthFrame, ModelConfig, encode_ground_truth
from .losses import category_loss, consistency_loss, detection_loss, similarity_loss, total_loss
from .rnn import GruNetwork, backward, forward, init_params

TINY = ModelConfig(S=2, B=1, C=3, T=3)


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray, rel_step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``; ``x`` is restored afterwards."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        h = rel_step * max(1.0, abs(old))
        flat[k] = old + h
        fp = f(x)
        flat[k] = old - h
        fm = f(x)
        flat[k] = old
        gflat[k] = (fp - fm) / (2 * h)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps coordinates whose true derivative is (near) zero from
    turning finite-difference round-off into a huge ratio.
    """
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def random_predictions(rng: np.random.Generator, cfg: ModelConfig, T: int) -> np.ndarray:
    """Sequence of prediction frames away from every kink of the losses:
    sizes and confidences strictly positive, distinct box confidences."""
    y = rng.uniform(-0.5, 1.0, size=(T, cfg.cells, cfg.cell_dim))
    for j in range(cfg.B):
        y[..., 5 * j : 5 * j + 2] = rng.uniform(0.05, 0.95, size=(T, cfg.cells, 2))
        y[..., 5 * j + 2 : 5 * j + 4] = rng.uniform(0.1, 0.9, size=(T, cfg.cells, 2))
        y[..., 5 * j + 4] = rng.uniform(0.2, 1.0, size=(T, cfg.cells)) + 0.3 * j
    return y.reshape(T, cfg.frame_dim)


def random_ground_truth(rng: np.random.Generator, cfg: ModelConfig) -> GroundTruthFrame:
    objects = []
    for _ in range(int(rng.integers(1, cfg.cells + 1))):
        w, h = rng.uniform(0.1, 0.5, size=2)
        cx = rng.uniform(w / 2, 1 - w / 2)
        cy = rng.uniform(h / 2, 1 - h / 2)
        objects.append((int(rng.integers(cfg.C)), BoxGeometry(cx, cy, w, h)))
    return encode_ground_truth(objects, cfg)


def _scalar(fn):
    return lambda y: float(fn(y)[0])


def loss_instance_errors(seed: int, cfg: ModelConfig = TINY, rel_step: float = 1e-5) -> dict[str, float]:
    """Relative errors of the four loss terms and their weighted sum on one random instance."""
    rng = np.random.default_rng(seed)
    T = cfg.T
    y = random_predictions(rng, cfg, T)
    x = random_predictions(rng, cfg, T)
    gt = random_ground_truth(rng, cfg)
    checks = {
        "detection": lambda v: detection_loss(v, gt, cfg),
        "similarity": lambda v: similarity_loss(v, x, cfg),
        "category": lambda v: category_loss(v, gt, cfg),
        "consistency": lambda v: consistency_loss(v, cfg),
        "total": lambda v: (total_loss(v, x, gt, cfg)[0].total, total_loss(v, x, gt, cfg)[1]),
    }
    out = {}
    for name, fn in checks.items():
        point = y[-1].copy() if name == "detection" else y.copy()
        analytic = fn(point)[1]
        out[name] = rel_error(analytic, numeric_grad(_scalar(fn), point, rel_step))
    return out


def network_errors(net: GruNetwork, seq: np.ndarray, weights: np.ndarray, train: bool = False,
                   rng_seed: int = 0, rel_step: float = 1e-5) -> float:
    """BPTT check on the scalar ``sum(weights * predictions)``; in train mode
    every evaluation reuses the same dropout mask via ``rng_seed``."""

    def loss():
        return float(np.sum(weights * forward(net, seq, train=train, rng_seed=rng_seed)[0]))

    _, cache = forward(net, seq, train=train, rng_seed=rng_seed)
    grads = backward(net, cache, weights)
    worst = 0.0
    for name, p in net.params().items():
        worst = max(worst, rel_error(grads[name], numeric_grad(lambda _: loss(), p, rel_step)))
    return worst


def bptt_instance_error(seed: int, cfg: ModelConfig = TINY, dropout: float = 0.0,
                        candidate: str = "sigmoid", rel_step: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    hidden = tuple(int(h) for h in rng.integers(4, 9, size=2))
    net = init_params(cfg.frame_dim, hidden, cfg.frame_dim, rng_seed=seed,
                      dropout_prob=dropout, candidate=candidate)
    for p in net.params().values():
        if p.ndim == 1:
            p[:] = rng.normal(0, 0.3, size=p.shape)
    seq = rng.normal(0, 1, size=(cfg.T, cfg.frame_dim))
    weights = rng.normal(0, 1, size=(cfg.T, cfg.frame_dim))
    return network_errors(net, seq, weights, train=dropout > 0, rng_seed=seed + 1, rel_step=rel_step)


def run_suite(seeds=range(5), cfg: ModelConfig = TINY, rel_step: float = 1e-5) -> dict[str, float]:
    """Worst relative error per component over the given seeds."""
    worst: dict[str, float] = {}
    for s in seeds:
        errs = loss_instance_errors(s, cfg, rel_step)
        errs["bptt"] = bptt_instance_error(s, cfg, rel_step=rel_step)
        errs["bptt_tanh"] = bptt_instance_error(s, cfg, candidate="tanh", rel_step=rel_step)
        errs["bptt_dropout"] = bptt_instance_error(s, cfg, dropout=0.3, rel_step=rel_step)
        for k, v in errs.items():
            worst[k] = max(worst.get(k, 0.0), v)
    return worst
