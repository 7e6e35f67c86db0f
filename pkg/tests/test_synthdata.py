import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vidrefine.evaluator import evaluate
from vidrefine.grid_codec import ModelConfig, decode_detections, encode_ground_truth, ideal_frame
from vidrefine.synthdata import (
    CorruptionConfig,
    SceneConfig,
    _reflect,
    corrupt,
    gen_sequence,
    make_dataset,
)

CFG = ModelConfig(S=7, B=2, C=20, T=6, active_classes=tuple(range(10)))
SCENE = SceneConfig()


def test_static_scene_is_constant():
    seq = gen_sequence(SceneConfig(speed=(0.0, 0.0), jitter_std=0.0), CFG, seed=3)
    first = seq.ground_truth[0]
    assert all(seq.ground_truth[t] == first for t in range(CFG.T))
    assert np.array_equal(seq.pseudo, np.tile(seq.pseudo[0], (CFG.T, 1)))


def test_same_seed_same_sequence():
    assert gen_sequence(SCENE, CFG, seed=11) == gen_sequence(SCENE, CFG, seed=11)
    assert make_dataset(3, SCENE, CorruptionConfig(0.3, 0.3, 0.1, 0.01), CFG, seed=5) == \
        make_dataset(3, SCENE, CorruptionConfig(0.3, 0.3, 0.1, 0.01), CFG, seed=5)


def test_reflection_rule():
    x, v = _reflect(0.95, 0.1, 0.1, 0.9)
    assert x == pytest.approx(0.85) and v == -0.1
    x, v = _reflect(0.05, -0.1, 0.1, 0.9)
    assert x == pytest.approx(0.15) and v == 0.1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fast_objects_stay_in_image(seed):
    scene = SceneConfig(speed=(0.2, 0.4), jitter_std=0.05, separate=False)
    seq = gen_sequence(scene, CFG, seed=seed, T=20)
    for objs in seq.ground_truth.values():
        for _, b in objs:
            x1, y1, x2, y2 = b.corners()
            assert -1e-12 <= x1 and x2 <= 1 + 1e-12 and -1e-12 <= y1 and y2 <= 1 + 1e-12
        encode_ground_truth(objs, CFG)


def _gt(seed):
    seq = gen_sequence(SceneConfig(n_objects=(2, 3)), CFG, seed=seed)
    return encode_ground_truth(seq.ground_truth[0], CFG)


def test_zero_corruption_is_identity():
    gt = _gt(0)
    assert corrupt(gt, CorruptionConfig(), CFG, seed=1) == ideal_frame(gt, CFG)


def test_full_miss_removes_all_detections():
    gt = _gt(1)
    frame = corrupt(gt, CorruptionConfig(miss_prob=1.0), CFG, seed=2)
    assert frame.box_block[:, :, 4].max() <= 0.05
    assert decode_detections(frame, CFG) == []


def test_full_flip_changes_every_class():
    for seed in range(5):
        gt = _gt(seed)
        frame = corrupt(gt, CorruptionConfig(class_flip_prob=1.0), CFG, seed=seed)
        cells = np.nonzero(gt.obj)[0]
        assert (frame.class_probs[cells].argmax(1) != gt.probs[cells].argmax(1)).all()


@given(st.integers(0, 2**31 - 1))
def test_corruption_output_ranges(seed):
    gt = _gt(seed % 1000)
    f = corrupt(gt, CorruptionConfig(0.5, 0.5, 0.5, 0.2), CFG, seed=seed)
    assert f.box_block[:, :, 4].min() >= 0 and f.box_block[:, :, 4].max() <= 1
    assert f.box_block[:, :, 2:4].min() >= 0
    assert f.class_probs.min() >= 0 and f.class_probs.max() <= 1


def test_config_validation():
    with pytest.raises(ValueError):
        CorruptionConfig(miss_prob=1.5)
    with pytest.raises(ValueError):
        CorruptionConfig(conf_noise_std=-1)
    with pytest.raises(ValueError):
        SceneConfig(n_objects=(3, 1))


def test_mAP_falls_as_miss_prob_rises():
    cfg = ModelConfig(S=7, B=2, C=20, T=1, active_classes=tuple(range(10)))
    levels = [0.0, 0.25, 0.5, 0.75, 1.0]
    means = []
    for p in levels:
        maps = []
        for seed in range(20):
            data = make_dataset(10, SCENE, CorruptionConfig(0.1, p, 0.1, 0.01), cfg, seed=seed)
            dets = [decode_detections(s.pseudo[-1], cfg) for s in data]
            gts = [s.final_objects for s in data]
            maps.append(evaluate(dets, gts, cfg.evaluated_classes).mAP)
        means.append(np.mean(maps))
    assert all(a > b for a, b in zip(means, means[1:])), means
    assert means[-1] == 0.0
