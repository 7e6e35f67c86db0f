"""Seeded synthetic refinement benchmark: raw pseudo-label mAP vs refined mAP.

Every setting lives in a ``BENCH_*`` constant so that all callers run the
identical setup.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

from .grid_codec import ModelConfig
from .rnn import init_params
from .synthdata import CorruptionConfig, SceneConfig, make_dataset
from .trainer import TrainConfig, evaluate_pseudo, evaluate_split, train

BENCH_MODEL = ModelConfig(S=7, B=2, C=20, T=8, active_classes=tuple(range(10)), detect_threshold=0.05)
BENCH_SCENE = SceneConfig(n_objects=(1, 1), size=(0.5, 0.8), speed=(0.0, 0.02))
BENCH_CORRUPTION = CorruptionConfig(class_flip_prob=0.2, miss_prob=0.2, conf_noise_std=0.1, loc_jitter_std=0.02)
BENCH_HIDDEN = (32, 32)
BENCH_TRAIN = TrainConfig(epochs=100, batch_size=8, lr=3e-4)
BENCH_CANDIDATE = "tanh"
N_TRAIN, N_TEST = 200, 50


@dataclass
class BenchResult:
    seed: int
    raw_map: float
    refined_map: float
    seconds: float


def run(seed: int, **weights) -> BenchResult:
    """Train on seed-specific splits and score the test split.

    ``weights`` may override ``alpha``, ``beta`` and ``gamma``.
    """
    cfg = replace(BENCH_MODEL, **weights)
    train_set = make_dataset(N_TRAIN, BENCH_SCENE, BENCH_CORRUPTION, cfg, seed=100 + seed, prefix="tr")
    test_set = make_dataset(N_TEST, BENCH_SCENE, BENCH_CORRUPTION, cfg, seed=200 + seed, prefix="te")
    net = init_params(cfg.frame_dim, BENCH_HIDDEN, cfg.frame_dim, rng_seed=seed, candidate=BENCH_CANDIDATE)
    start = time.perf_counter()
    trained, _ = train(train_set, net, cfg, replace(BENCH_TRAIN, shuffle_seed=seed))
    return BenchResult(
        seed,
        evaluate_pseudo(test_set, cfg).mAP,
        evaluate_split(test_set, trained, cfg).mAP,
        time.perf_counter() - start,
    )
