import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vidrefine.geometry import BoxGeometry, Detection
from vidrefine.grid_codec import (
    CellPrediction,
    FrameTensor,
    ModelConfig,
    cell_index,
    decode_detections,
    encode_ground_truth,
    flatten,
    ideal_frame,
    responsible_box,
    unflatten,
)

CFG = ModelConfig()


def test_default_dimensions():
    assert CFG.frame_dim == 1470
    assert CFG.cell_dim == 30
    assert ModelConfig(S=2, B=1, C=3).frame_dim == 32


def test_layout_offsets():
    v = np.arange(CFG.frame_dim, dtype=float)
    f = unflatten(v, CFG)
    # cell 3, box 1, confidence -> 3*30 + 5 + 4
    assert f.box_block[3, 1, 4] == 99
    assert f.class_probs[48, 19] == 1469
    cell = f.cell(1)
    assert np.array_equal(cell.boxes[0], [30, 31, 32, 33])
    assert np.array_equal(cell.confidences, [34, 39])
    assert cell.class_probs[0] == 40


def test_box_block_is_view():
    f = FrameTensor.zeros(CFG)
    assert np.shares_memory(f.box_block, f.data)
    f.box_block[5, 1, 2] = 7.0
    assert f.data[5, 7] == 7.0


@given(st.integers(0, 2**31 - 1))
def test_flatten_round_trip(seed):
    v = np.random.default_rng(seed).normal(size=CFG.frame_dim)
    f = unflatten(v, CFG)
    assert np.array_equal(flatten(f, CFG), v)
    assert unflatten(flatten(f, CFG), CFG) == f


@pytest.mark.parametrize("n", [0, 1469, 1471])
def test_unflatten_wrong_length(n):
    with pytest.raises(ValueError, match="1470"):
        unflatten(np.zeros(n), CFG)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(S=0)
    with pytest.raises(ValueError):
        ModelConfig(alpha=-1)
    with pytest.raises(ValueError):
        ModelConfig(active_classes=(20,))
    assert ModelConfig(active_classes=[0, 2]).evaluated_classes == (0, 2)


def test_cell_index_boundaries():
    assert cell_index(0.0, 0.0, 7) == (0, 0)
    assert cell_index(1.0, 1.0, 7) == (6, 6)
    assert cell_index(3 / 7, 0.5, 7) == (3, 3)
    assert cell_index(0.99, 0.01, 7) == (0, 6)


def test_encode_single_object():
    cfg = ModelConfig(S=2, B=1, C=3)
    gt = encode_ground_truth([(2, BoxGeometry(0.75, 0.25, 0.2, 0.4))], cfg)
    assert list(gt.obj) == [0, 1, 0, 0]
    assert np.allclose(gt.boxes[1], [0.5, 0.5, 0.2, 0.4])
    assert list(gt.probs[1]) == [0, 0, 1]


def test_encode_collision_keeps_larger():
    cfg = ModelConfig(S=2, B=1, C=3)
    small = (0, BoxGeometry(0.2, 0.2, 0.1, 0.1))
    big = (1, BoxGeometry(0.3, 0.3, 0.3, 0.3))
    gt = encode_ground_truth([small, big], cfg)
    assert gt.kept == [1] and gt.probs[0, 1] == 1
    tie = (2, BoxGeometry(0.25, 0.25, 0.1, 0.1))
    assert encode_ground_truth([small, tie], cfg).kept == [0]


def test_encode_rejects_outside_and_bad_class():
    with pytest.raises(ValueError):
        encode_ground_truth([(0, BoxGeometry(0.05, 0.5, 0.2, 0.2))], CFG)
    with pytest.raises(ValueError):
        encode_ground_truth([(20, BoxGeometry(0.5, 0.5, 0.2, 0.2))], CFG)


def test_responsible_box_argmax_and_tie():
    cell = CellPrediction(np.array([[0.5, 0.5, 0.1, 0.1], [0.5, 0.5, 0.3, 0.3]]), np.zeros(2), np.zeros(3))
    assert responsible_box(cell, np.array([0.5, 0.5, 0.3, 0.3]), 7) == 1
    same = CellPrediction(np.array([[0.5, 0.5, 0.3, 0.3]] * 2), np.zeros(2), np.zeros(3))
    assert responsible_box(same, np.array([0.5, 0.5, 0.3, 0.3]), 7) == 0


objects = st.lists(
    st.tuples(
        st.integers(0, 19),
        st.floats(0.05, 0.4), st.floats(0.05, 0.4),
        st.floats(0, 1), st.floats(0, 1),
    ),
    min_size=0, max_size=8,
)


def _objects(raw):
    out = []
    for c, w, h, u, v in raw:
        out.append((c, BoxGeometry(w / 2 + u * (1 - w), h / 2 + v * (1 - h), w, h)))
    return out


@given(objects)
def test_ideal_frame_decodes_to_ground_truth(raw):
    objs = _objects(raw)
    gt = encode_ground_truth(objs, CFG)
    dets = decode_detections(ideal_frame(gt, CFG), CFG)
    kept = [objs[k] for k in gt.kept]
    # every kept object is recovered exactly once, unless NMS merged two same-class boxes
    assert len(dets) <= len(kept)
    for d in dets:
        assert d.score == 1.0
        assert any(d.class_id == c and np.allclose(d.box.as_array(), b.as_array(), atol=1e-12) for c, b in kept)


def test_decode_threshold_and_clamping():
    cfg = ModelConfig(S=1, B=2, C=2, detect_threshold=0.2)
    f = FrameTensor(np.array([[0.5, 0.5, 0.4, 0.4, 0.5, 0.5, 0.5, -0.3, 0.2, 0.1, 0.5, -0.9]]), cfg)
    dets = decode_detections(f, cfg)
    # box 0 wins the confidence argmax; class 1 is negative and never detected
    assert dets == [Detection(0, BoxGeometry(0.5, 0.5, 0.4, 0.4), 0.25)]
    neg = FrameTensor(np.array([[0.5, 0.5, 0.4, 0.4, -0.9, 0.5, 0.5, 0.4, 0.4, -0.9, -0.9, -0.9]]), cfg)
    assert decode_detections(neg, cfg) == []
