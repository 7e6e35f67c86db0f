"""Seeded synthetic scenes and a pseudo-labeler corruption model.

Objects move with constant velocity plus Gaussian jitter and bounce off the
image borders. Pseudo-labels start from the ideal grid encoding of the
ground truth and are damaged the way a frame-level detector fails: class
flips, missed objects (confidence crushed toward 0), confidence noise and
box jitter.

Every random draw has a fixed shape regardless of the corruption
strengths, so two configs differing only in one probability see the same
underlying noise (useful for monotonicity checks).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BoxGeometry, iou
from .grid_codec import (
    FrameTensor,
    GroundTruthFrame,
    ModelConfig,
    cell_index,
    encode_ground_truth,
    ideal_frame,
)
from .sequence import VideoSequence


@dataclass(frozen=True)
class SceneConfig:
    n_objects: tuple[int, int] = (1, 2)
    speed: tuple[float, float] = (0.0, 0.02)  # normalized units per frame
    jitter_std: float = 0.003
    size: tuple[float, float] = (0.2, 0.45)
    # sampling weights over class ids; None means uniform over the config's evaluated classes
    class_weights: tuple[float, ...] | None = None
    # reject trajectories where two objects share a cell or same-class boxes overlap past nms_iou
    separate: bool = True
    max_tries: int = 200

    def __post_init__(self):
        lo, hi = self.n_objects
        if not 0 <= lo <= hi:
            raise ValueError(f"bad n_objects range {self.n_objects}")
        if not 0 <= self.size[0] <= self.size[1] <= 1:
            raise ValueError(f"bad size range {self.size}")
        if self.speed[0] < 0 or self.speed[1] < self.speed[0] or self.jitter_std < 0:
            raise ValueError("speeds and jitter must be non-negative")


@dataclass(frozen=True)
class CorruptionConfig:
    class_flip_prob: float = 0.0
    miss_prob: float = 0.0
    conf_noise_std: float = 0.0
    loc_jitter_std: float = 0.0
    # a missed cell keeps at most this fraction of its confidence
    miss_residual: float = 0.05
    # pool of replacement classes for flips; None means the evaluated classes
    flip_classes: tuple[int, ...] | None = None

    def __post_init__(self):
        for name in ("class_flip_prob", "miss_prob", "miss_residual"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.conf_noise_std < 0 or self.loc_jitter_std < 0:
            raise ValueError("noise standard deviations must be >= 0")


def _class_probs(scene: SceneConfig, cfg: ModelConfig) -> np.ndarray:
    if scene.class_weights is None:
        p = np.zeros(cfg.C)
        p[list(cfg.evaluated_classes)] = 1.0
    else:
        p = np.asarray(scene.class_weights, dtype=float)
        if p.shape != (cfg.C,) or np.any(p < 0) or p.sum() <= 0:
            raise ValueError(f"class_weights must be {cfg.C} non-negative weights")
    return p / p.sum()


def _seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def _reflect(x: float, v: float, lo: float, hi: float) -> tuple[float, float]:
    if hi <= lo:
        return (lo + hi) / 2, 0.0
    while x < lo or x > hi:
        if x < lo:
            x, v = 2 * lo - x, -v
        else:
            x, v = 2 * hi - x, -v
    return x, v


def _trajectory(rng: np.random.Generator, scene: SceneConfig, cfg: ModelConfig, T: int):
    n = int(rng.integers(scene.n_objects[0], scene.n_objects[1] + 1))
    classes = rng.choice(cfg.C, size=n, p=_class_probs(scene, cfg))
    wh = rng.uniform(scene.size[0], scene.size[1], size=(n, 2))
    lo, hi = wh / 2, 1 - wh / 2
    pos = rng.uniform(lo, hi)
    angle = rng.uniform(0, 2 * np.pi, size=n)
    speed = rng.uniform(scene.speed[0], scene.speed[1], size=n)
    vel = np.stack([speed * np.cos(angle), speed * np.sin(angle)], axis=1)

    frames = []
    for t in range(T):
        if t > 0:
            step = vel + rng.normal(0.0, scene.jitter_std, size=(n, 2)) if scene.jitter_std else vel
            pos = pos + step
            for k in range(n):
                for a in range(2):
                    pos[k, a], vel[k, a] = _reflect(pos[k, a], vel[k, a], lo[k, a], hi[k, a])
        frames.append(
            [(int(classes[k]), BoxGeometry(float(pos[k, 0]), float(pos[k, 1]), float(wh[k, 0]), float(wh[k, 1])))
             for k in range(n)]
        )
    return frames


def _well_separated(objects, cfg: ModelConfig) -> bool:
    cells = set()
    for c, box in objects:
        cell = cell_index(box.cx, box.cy, cfg.S)
        if cell in cells:
            return False
        cells.add(cell)
    for a in range(len(objects)):
        for b in range(a + 1, len(objects)):
            if objects[a][0] == objects[b][0] and iou(objects[a][1], objects[b][1]) >= cfg.nms_iou:
                return False
    return True


def gen_sequence(scene: SceneConfig, cfg: ModelConfig, seed, T: int | None = None, seq_id: str = "seq") -> VideoSequence:
    """Ground truth on every frame; pseudo-labels are the ideal encodings."""
    T = cfg.T if T is None else T
    rng = np.random.default_rng(seed)
    for _ in range(scene.max_tries):
        frames = _trajectory(rng, scene, cfg, T)
        if not scene.separate or all(_well_separated(f, cfg) for f in frames):
            break
    else:
        raise RuntimeError(f"no well-separated trajectory after {scene.max_tries} tries; relax the scene")
    pseudo = np.stack([ideal_frame(encode_ground_truth(f, cfg), cfg).data.reshape(-1) for f in frames])
    return VideoSequence(seq_id, pseudo, {t: f for t, f in enumerate(frames)})


def corrupt(gt_frame: GroundTruthFrame, corruption: CorruptionConfig, cfg: ModelConfig, seed) -> FrameTensor:
    """Damaged pseudo-label for one frame, starting from the ideal encoding."""
    rng = np.random.default_rng(seed)
    frame = ideal_frame(gt_frame, cfg)
    blk = frame.box_block
    probs = frame.class_probs
    n, B = cfg.cells, cfg.B
    has_obj = gt_frame.obj > 0

    u_flip = rng.random(n)
    u_new = rng.random(n)
    jitter = rng.normal(size=(n, 4))
    conf_noise = rng.normal(size=(n, B))
    u_miss = rng.random(n)
    residual = rng.random(n)

    pool = np.array(corruption.flip_classes if corruption.flip_classes is not None else cfg.evaluated_classes)
    if corruption.class_flip_prob > 0 and cfg.C >= 2:
        for i in np.nonzero(has_obj & (u_flip < corruption.class_flip_prob))[0]:
            true = int(np.argmax(probs[i]))
            choices = pool[pool != true]
            if choices.size == 0:
                choices = np.array([c for c in range(cfg.C) if c != true])
            new = int(choices[min(int(u_new[i] * choices.size), choices.size - 1)])
            probs[i] = 0.0
            probs[i, new] = 1.0

    if corruption.loc_jitter_std > 0:
        box = blk[:, 0, :4]
        scale = np.array([cfg.S, cfg.S, 1.0, 1.0])
        box[has_obj] += corruption.loc_jitter_std * scale * jitter[has_obj]
        box[:, :2] = np.clip(box[:, :2], 0.0, 1.0)
        box[:, 2:] = np.clip(box[:, 2:], 0.0, 1.0)

    if corruption.conf_noise_std > 0:
        blk[:, :, 4] = np.clip(blk[:, :, 4] + corruption.conf_noise_std * conf_noise, 0.0, 1.0)

    missed = has_obj & (u_miss < corruption.miss_prob)
    blk[missed, :, 4] *= corruption.miss_residual * residual[missed, None]
    return frame


def corrupt_sequence(seq: VideoSequence, corruption: CorruptionConfig, cfg: ModelConfig, seed) -> VideoSequence:
    """Replace every frame's pseudo-label with a corrupted encoding of its ground truth."""
    seeds = _seed_sequence(seed).spawn(seq.T)
    frames = []
    for t in range(seq.T):
        if t not in seq.ground_truth:
            raise ValueError(f"sequence {seq.seq_id!r} lacks ground truth at frame {t}")
        gt = encode_ground_truth(seq.ground_truth[t], cfg)
        frames.append(corrupt(gt, corruption, cfg, seeds[t]).data.reshape(-1))
    return VideoSequence(seq.seq_id, np.stack(frames), dict(seq.ground_truth))


def make_dataset(
    n: int,
    scene: SceneConfig,
    corruption: CorruptionConfig,
    cfg: ModelConfig,
    seed: int,
    T: int | None = None,
    prefix: str = "seq",
) -> list[VideoSequence]:
    seqs = []
    for k, child in enumerate(_seed_sequence(seed).spawn(n)):
        gen_seed, corrupt_seed = child.spawn(2)
        seq = gen_sequence(scene, cfg, gen_seed, T=T, seq_id=f"{prefix}-{k:05d}")
        seqs.append(corrupt_sequence(seq, corruption, cfg, corrupt_seed))
    return seqs
